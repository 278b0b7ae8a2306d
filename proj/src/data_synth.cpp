#include "sap/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sap/image_io.hpp"
#include "sap/kernels.hpp"

namespace sap {

namespace fs = std::filesystem;

void SceneSpec::validate() const {
  if (width < 8 || height < 8) throw ConfigError("scene: image must be at least 8x8");
  if (min_shapes < 1 || max_shapes < min_shapes)
    throw ConfigError("scene: need 1 <= min_shapes <= max_shapes");
  if (color_shift < 0 || noise_sigma < 0 || haze_alpha < 0 || color_shift > 1 || haze_alpha > 1)
    throw ConfigError("scene: severity knobs out of range");
}

void Dataset::rebuild_index() {
  source_idx.clear();
  target_idx.clear();
  for (std::size_t i = 0; i < samples.size(); ++i)
    (samples[i].domain == 0 ? source_idx : target_idx).push_back(i);
}

namespace {

struct ShapeDraw {
  int kind;  // 0 circle, 1 square, 2 triangle; class id = kind + 1
  double cx, cy, r;
  double color[3];
};

bool inside(const ShapeDraw& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  switch (s.kind) {
    case 0:
      return dx * dx + dy * dy <= s.r * s.r;
    case 1:
      return std::abs(dx) <= s.r * 0.85 && std::abs(dy) <= s.r * 0.85;
    default: {
      // upward-pointing triangle: apex (cx, cy-r), base y = cy + 0.8r
      const double ax = s.cx, ay = s.cy - s.r;
      const double bx = s.cx - s.r, by = s.cy + 0.8 * s.r;
      const double cx2 = s.cx + s.r, cy2 = s.cy + 0.8 * s.r;
      auto side = [&](double px, double py, double qx, double qy) {
        return (qx - px) * (y - py) - (qy - py) * (x - px);
      };
      const double d1 = side(ax, ay, bx, by), d2 = side(bx, by, cx2, cy2),
                   d3 = side(cx2, cy2, ax, ay);
      const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
      const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
      return !(neg && pos);
    }
  }
}

}  // namespace

StoredSample generate_sample(const SceneSpec& spec, int domain, std::size_t index) {
  spec.validate();
  const std::size_t W = spec.width, H = spec.height;

  // One shared stream per (seed, index) drives geometry *and* base
  // appearance, so domains differ only by the post-hoc appearance shift.
  Rng scene = Rng::derive(spec.seed, index);

  double bg[3];
  for (double& c : bg) c = scene.uniform(0.55, 0.85);

  const int n_shapes =
      spec.min_shapes + static_cast<int>(scene.below(spec.max_shapes - spec.min_shapes + 1));
  std::vector<ShapeDraw> shapes;
  for (int s = 0; s < n_shapes; ++s) {
    ShapeDraw d;
    d.kind = static_cast<int>(scene.below(3));
    d.r = scene.uniform(5.0, std::min<double>(12.0, std::min(W, H) / 4.0));
    d.cx = scene.uniform(d.r, W - 1 - d.r);
    d.cy = scene.uniform(d.r, H - 1 - d.r);
    double dist = 0;
    for (int c = 0; c < 3; ++c) {
      d.color[c] = scene.uniform(0.0, 1.0);
      dist += std::abs(d.color[c] - bg[c]);
    }
    // guarantee contrast against the background, deterministically
    if (dist < 0.6)
      for (double& c : d.color) c = 1.0 - c;
    shapes.push_back(d);
  }

  Tensor<double> img({3, H, W});
  Tensor<std::uint8_t> labels({H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const ShapeDraw* hit = nullptr;
      int cls = 0;
      for (const auto& s : shapes)
        if (inside(s, static_cast<double>(x), static_cast<double>(y))) {
          hit = &s;  // later shapes draw over earlier ones
          cls = s.kind + 1;
        }
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = hit ? hit->color[c] : bg[c];
      labels.at(y, x) = static_cast<std::uint8_t>(cls);
    }

  if (domain == 1) {
    // global color shift: a constant cold-tint offset per channel (red down,
    // blue up). Being purely additive it preserves spatial contrast, so the
    // shift is invertible in feature space by zero-sum (DC-free) filters.
    static constexpr double kTint[3] = {-0.45, -0.05, 0.40};
    if (spec.color_shift > 0)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < H * W; ++p)
          img[c * H * W + p] += spec.color_shift * kTint[c];

    // low-frequency haze: a 4x4 field upsampled over the image, blended
    // toward a fog color
    if (spec.haze_alpha > 0) {
      Rng haze = Rng::derive(spec.seed ^ 0x68617a65ull, index);
      Tensor<double> field({1, 4, 4});
      for (std::size_t i = 0; i < field.size(); ++i) field[i] = haze.uniform(0.3, 1.0);
      Tensor<double> m = kernels::resize_bilinear(field, H, W);
      static constexpr double kFog[3] = {0.85, 0.85, 0.88};
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < H * W; ++p) {
          const double a = spec.haze_alpha * m[p];
          double& v = img[c * H * W + p];
          v = (1.0 - a) * v + a * kFog[c];
        }
    }

    if (spec.noise_sigma > 0) {
      Rng noise = Rng::derive(spec.seed ^ 0x6e6f697365ull, index);
      for (std::size_t i = 0; i < img.size(); ++i)
        img[i] += spec.noise_sigma * noise.normal();
    }
  }

  StoredSample out;
  out.image = Tensor<std::uint8_t>({3, H, W});
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img[i], 0.0, 1.0);
    out.image[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  out.labels = std::move(labels);
  out.domain = domain;
  return out;
}

Dataset generate_dataset(const SceneSpec& spec, std::size_t per_domain) {
  if (per_domain < 1) throw ConfigError("generate_dataset: count must be >= 1");
  Dataset data;
  for (int domain : {0, 1})
    for (std::size_t i = 0; i < per_domain; ++i)
      data.samples.push_back(generate_sample(spec, domain, i));
  data.rebuild_index();
  return data;
}

void save_dataset(const std::string& dir, const Dataset& data) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw IoError(dir + "/manifest.txt: cannot open for writing");
  std::size_t counter[2] = {0, 0};
  for (const auto& s : data.samples) {
    const char* tag = s.domain == 0 ? "src" : "tgt";
    std::ostringstream name;
    name << tag << "_";
    name.width(4);
    name.fill('0');
    name << counter[s.domain]++;
    const std::string img = name.str() + ".ppm";
    write_ppm((fs::path(dir) / img).string(), s.image);
    std::string lab = "-";
    if (!s.labels.empty()) {
      lab = name.str() + "_label.pgm";
      write_pgm((fs::path(dir) / lab).string(), s.labels);
    }
    manifest << img << " " << lab << " " << s.domain << "\n";
  }
  if (!manifest) throw IoError(dir + "/manifest.txt: write failed");
}

Dataset load_dataset(const std::string& dir) {
  const std::string mpath = (fs::path(dir) / "manifest.txt").string();
  std::ifstream manifest(mpath);
  if (!manifest) throw IoError(mpath + ": cannot open");
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string img, lab;
    int domain;
    if (!(ss >> img >> lab >> domain) || (domain != 0 && domain != 1))
      throw IoError(mpath + ":" + std::to_string(lineno) + ": malformed manifest line");
    StoredSample s;
    try {
      s.image = read_ppm((fs::path(dir) / img).string());
      if (lab != "-") s.labels = read_pgm((fs::path(dir) / lab).string());
    } catch (const IoError& e) {
      throw IoError(mpath + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!s.labels.empty() &&
        (s.labels.extent(0) != s.image.extent(1) || s.labels.extent(1) != s.image.extent(2)))
      throw IoError(mpath + ":" + std::to_string(lineno) + ": label size does not match image");
    s.domain = domain;
    data.samples.push_back(std::move(s));
  }
  if (data.samples.empty()) throw IoError(mpath + ": empty manifest");
  data.rebuild_index();
  return data;
}

}  // namespace sap
