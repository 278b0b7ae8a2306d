#ifndef SAP_REFERENCE_HPP_
#define SAP_REFERENCE_HPP_

#include <algorithm>
#include <cmath>
#include <limits>

#include "sap/tensor.hpp"

// Serial reference kernels. Deliberately naive (textbook loops, no tiling,
// no OpenMP): these are the oracles the optimized kernels are tested against
// and the baseline the benchmark compares with.

namespace sap::ref {

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 int stride = 1, int pad = 0) {
  const std::size_t Cin = input.extent(0), H = input.extent(1), W = input.extent(2);
  const std::size_t Cout = weight.extent(0), k = weight.extent(2);
  if (weight.extent(1) != Cin)
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.extent(1)) +
                     " input channels, got " + std::to_string(Cin));
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - k) / stride + 1;
  Tensor<S> out({Cout, Ho, Wo});
  for (std::size_t oc = 0; oc < Cout; ++oc)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        S acc = bias[oc];
        for (std::size_t ic = 0; ic < Cin; ++ic)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - pad;
              const long ix = static_cast<long>(ox * stride + kx) - pad;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                continue;
              acc += input.at(ic, iy, ix) * weight[((oc * Cin + ic) * k + ky) * k + kx];
            }
        out.at(oc, oy, ox) = acc;
      }
  return out;
}

template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& input, int k) {
  const std::size_t C = input.extent(0), H = input.extent(1), W = input.extent(2);
  const std::size_t Ho = H - k + 1, Wo = W - k + 1;
  Tensor<S> out({C, Ho, Wo});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        S acc = 0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) acc += input.at(c, oy + dy, ox + dx);
        out.at(c, oy, ox) = acc / static_cast<S>(k * k);
      }
  return out;
}

template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& input, int k) {
  const std::size_t C = input.extent(0), H = input.extent(1), W = input.extent(2);
  const std::size_t Ho = H - k + 1, Wo = W - k + 1;
  Tensor<S> out({C, Ho, Wo});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        S best = -std::numeric_limits<S>::infinity();
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) best = std::max(best, input.at(c, oy + dy, ox + dx));
        out.at(c, oy, ox) = best;
      }
  return out;
}

template <typename S>
Tensor<S> softmax_flat(const Tensor<S>& logits) {
  Tensor<S> out(logits.shape());
  S sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += std::exp(logits[i]);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = std::exp(logits[i]) / sum;
  return out;
}

// Half-pixel-center bilinear (align-corners=false), one sample at a time.
template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& input, std::size_t outH, std::size_t outW) {
  const std::size_t C = input.extent(0), H = input.extent(1), W = input.extent(2);
  Tensor<S> out({C, outH, outW});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < outH; ++oy)
      for (std::size_t ox = 0; ox < outW; ++ox) {
        const double sy = (oy + 0.5) * static_cast<double>(H) / outH - 0.5;
        const double sx = (ox + 0.5) * static_cast<double>(W) / outW - 0.5;
        const long y0 = static_cast<long>(std::floor(sy));
        const long x0 = static_cast<long>(std::floor(sx));
        const double fy = sy - y0, fx = sx - x0;
        auto pick = [&](long y, long x) {
          y = std::clamp<long>(y, 0, static_cast<long>(H) - 1);
          x = std::clamp<long>(x, 0, static_cast<long>(W) - 1);
          return static_cast<double>(input.at(c, y, x));
        };
        const double v = (1 - fy) * ((1 - fx) * pick(y0, x0) + fx * pick(y0, x0 + 1)) +
                         fy * ((1 - fx) * pick(y0 + 1, x0) + fx * pick(y0 + 1, x0 + 1));
        out.at(c, oy, ox) = static_cast<S>(v);
      }
  return out;
}

template <typename S>
Tensor<S> fully_connected(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  const std::size_t Dout = weight.extent(0), Din = weight.extent(1);
  if (x.size() != Din)
    throw ShapeError("fully_connected: weight expects " + std::to_string(Din) +
                     " inputs, got " + std::to_string(x.size()));
  Tensor<S> out({Dout});
  for (std::size_t o = 0; o < Dout; ++o) {
    S acc = bias[o];
    for (std::size_t i = 0; i < Din; ++i) acc += weight.at(o, i) * x[i];
    out[o] = acc;
  }
  return out;
}

/// omega-weighted spatial sum, one output value per channel.
template <typename S>
Tensor<S> attention_vector(const Tensor<S>& f, const Tensor<S>& omega) {
  const std::size_t C = f.extent(0), H = f.extent(1), W = f.extent(2);
  Tensor<S> out({C});
  for (std::size_t c = 0; c < C; ++c) {
    S acc = 0;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) acc += f.at(c, y, x) * omega[y * W + x];
    out[c] = acc;
  }
  return out;
}

}  // namespace sap::ref

#endif  // SAP_REFERENCE_HPP_
