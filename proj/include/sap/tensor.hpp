#ifndef SAP_TENSOR_HPP_
#define SAP_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sap {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense row-major real tensor. For rank-3 feature maps the layout is
/// (channels, height, width): index (c, y, x) -> data[(c*H + y)*W + x].
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, S fill = S(0))
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  static Tensor from(Shape shape, std::vector<S> data) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& vec() { return data_; }
  const std::vector<S>& vec() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  // rank-3 (C,H,W) accessors
  S& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const S& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  // rank-2 (rows, cols)
  S& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const S& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return out;
  }

 private:
  static std::size_t checked_numel(const Shape& s) {
    for (std::size_t e : s)
      if (e == 0) throw ShapeError("zero extent in shape " + shape_str(s));
    return shape_numel(s);
  }

  Shape shape_;
  std::vector<S> data_;
};

// --- serialization ("SAPT" record: magic, u32 version, u32 rank, u64 extents,
// u8 dtype 0=f64 1=f32, raw little-endian data) ---

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError(std::string("truncated tensor record while reading ") + what);
  return v;
}

template <typename S> struct dtype_code;
template <> struct dtype_code<double> { static constexpr std::uint8_t value = 0; };
template <> struct dtype_code<float> { static constexpr std::uint8_t value = 1; };

}  // namespace detail

template <typename S>
void save_tensor(std::ostream& os, const Tensor<S>& t) {
  os.write("SAPT", 4);
  detail::write_pod<std::uint32_t>(os, 1);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) detail::write_pod<std::uint64_t>(os, e);
  detail::write_pod<std::uint8_t>(os, detail::dtype_code<S>::value);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(S)));
  if (!os) throw IoError("tensor write failed");
}

/// Loads a tensor record. Widening f32 -> f64 is accepted; narrowing is an
/// error so that checkpoint round trips stay byte exact.
template <typename S>
Tensor<S> load_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SAPT", 4) != 0)
    throw IoError("bad tensor magic (expected SAPT)");
  auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != 1) throw IoError("unsupported tensor version " + std::to_string(version));
  auto rank = detail::read_pod<std::uint32_t>(is, "rank");
  if (rank > 8) throw IoError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = detail::read_pod<std::uint64_t>(is, "extent");
  auto dtype = detail::read_pod<std::uint8_t>(is, "dtype");
  const std::size_t n = shape_numel(shape);
  auto read_raw = [&](auto* ptr, std::size_t bytes) {
    is.read(reinterpret_cast<char*>(ptr), static_cast<std::streamsize>(bytes));
    if (!is) throw IoError("truncated tensor data");
  };
  if (dtype == detail::dtype_code<S>::value) {
    Tensor<S> t(shape);
    read_raw(t.data(), n * sizeof(S));
    return t;
  }
  if (dtype == 1 && detail::dtype_code<S>::value == 0) {
    Tensor<float> tmp(shape);
    read_raw(tmp.data(), n * sizeof(float));
    return tmp.template cast<S>();
  }
  throw IoError("tensor dtype mismatch: refusing to narrow f64 data");
}

}  // namespace sap

#endif  // SAP_TENSOR_HPP_
