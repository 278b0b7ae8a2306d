#include "sap/image_io.hpp"

#include <fstream>
#include <limits>

namespace sap {

namespace {

// Skips whitespace and '#' comment lines between header tokens.
int next_header_int(std::istream& is, const std::string& path, const char* what) {
  for (;;) {
    const int c = is.peek();
    if (c == '#') {
      is.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
      continue;
    }
    if (std::isspace(c)) {
      is.get();
      continue;
    }
    break;
  }
  int v;
  if (!(is >> v)) throw IoError(path + ": malformed header (bad " + std::string(what) + ")");
  return v;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path + ": cannot open");
  return is;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(path + ": cannot open for writing");
  return os;
}

void read_header(std::istream& is, const std::string& path, const char* magic, std::size_t& w,
                 std::size_t& h) {
  char m[2];
  is.read(m, 2);
  if (!is || m[0] != magic[0] || m[1] != magic[1])
    throw IoError(path + ": bad magic (expected " + std::string(magic) + ")");
  const int wi = next_header_int(is, path, "width");
  const int hi = next_header_int(is, path, "height");
  const int maxval = next_header_int(is, path, "maxval");
  if (wi <= 0 || hi <= 0) throw IoError(path + ": non-positive dimensions");
  if (maxval != 255) throw IoError(path + ": unsupported maxval " + std::to_string(maxval));
  is.get();  // the single whitespace byte before the raster
  w = static_cast<std::size_t>(wi);
  h = static_cast<std::size_t>(hi);
}

}  // namespace

void write_ppm(const std::string& path, const Tensor<std::uint8_t>& rgb) {
  if (rgb.rank() != 3 || rgb.extent(0) != 3)
    throw ShapeError("write_ppm: need a 3xHxW tensor, got " + shape_str(rgb.shape()));
  const std::size_t h = rgb.extent(1), w = rgb.extent(2);
  auto os = open_out(path);
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> row(3 * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) row[3 * x + c] = rgb.at(c, y, x);
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw IoError(path + ": write failed");
}

Tensor<std::uint8_t> read_ppm(const std::string& path) {
  auto is = open_in(path);
  std::size_t w, h;
  read_header(is, path, "P6", w, h);
  Tensor<std::uint8_t> out({3, h, w});
  std::vector<std::uint8_t> row(3 * w);
  for (std::size_t y = 0; y < h; ++y) {
    is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!is) throw IoError(path + ": truncated pixel data");
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = row[3 * x + c];
  }
  return out;
}

void write_pgm(const std::string& path, const Tensor<std::uint8_t>& gray) {
  if (gray.rank() != 2)
    throw ShapeError("write_pgm: need an HxW tensor, got " + shape_str(gray.shape()));
  const std::size_t h = gray.extent(0), w = gray.extent(1);
  auto os = open_out(path);
  os << "P5\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!os) throw IoError(path + ": write failed");
}

Tensor<std::uint8_t> read_pgm(const std::string& path) {
  auto is = open_in(path);
  std::size_t w, h;
  read_header(is, path, "P5", w, h);
  Tensor<std::uint8_t> out({h, w});
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!is) throw IoError(path + ": truncated pixel data");
  return out;
}

}  // namespace sap
