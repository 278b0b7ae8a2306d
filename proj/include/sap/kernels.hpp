#ifndef SAP_KERNELS_HPP_
#define SAP_KERNELS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sap/tensor.hpp"

// Optimized forward/backward kernels. Parallel loops always run over the
// index being written (output channel, input channel, ...) so the reduction
// order of every element is fixed and results do not depend on the thread
// count. All shapes follow the (C,H,W) row-major convention of Tensor.

namespace sap::kernels {

namespace detail {

// Copies one channel into a zero-padded (H+2p)x(W+2p) buffer.
template <typename S>
void pad_channel(const S* src, S* dst, std::size_t H, std::size_t W, int pad) {
  const std::size_t Wp = W + 2 * pad;
  std::fill(dst, dst + (H + 2 * pad) * Wp, S(0));
  for (std::size_t y = 0; y < H; ++y)
    std::copy(src + y * W, src + (y + 1) * W, dst + (y + pad) * Wp + pad);
}

/// Reusable per-thread scratch: graph execution is single-threaded at the op
/// level, so one buffer per tag avoids a multi-megabyte allocation per call.
template <typename S, int Tag>
std::vector<S>& scratch(std::size_t n) {
  thread_local std::vector<S> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

/// C (M×N) = A (M×K) · B (K×N), row-major, C overwritten. B is repacked into
/// 16-wide panels so the 6×16 register tile streams it sequentially; the
/// summation order over k is fixed regardless of blocking, so results are
/// reproducible run to run.
template <typename S>
void gemm(const S* A, const S* B, S* C, std::size_t M, std::size_t K, std::size_t N) {
  constexpr std::size_t MR = 6, NR = 16;
  const std::size_t npanels = (N + NR - 1) / NR;
  std::vector<S>& pack = scratch<S, 0>(npanels * K * NR);
  for (std::size_t p = 0; p < npanels; ++p) {
    const std::size_t n0 = p * NR, nb = std::min<std::size_t>(NR, N - n0);
    S* dst = pack.data() + p * K * NR;
    for (std::size_t k = 0; k < K; ++k) {
      std::copy(B + k * N + n0, B + k * N + n0 + nb, dst + k * NR);
      std::fill(dst + k * NR + nb, dst + (k + 1) * NR, S(0));
    }
  }
#pragma omp parallel for schedule(static)
  for (long long m0 = 0; m0 < static_cast<long long>(M); m0 += MR) {
    const std::size_t mb = std::min<std::size_t>(MR, M - m0);
    for (std::size_t p = 0; p < npanels; ++p) {
      const std::size_t n0 = p * NR, nb = std::min<std::size_t>(NR, N - n0);
      const S* bp = pack.data() + p * K * NR;
      S acc[MR][NR] = {};
      if (mb == MR) {
        for (std::size_t k = 0; k < K; ++k) {
          const S* b = bp + k * NR;
          for (std::size_t m = 0; m < MR; ++m) {
            const S a = A[(m0 + m) * K + k];
#pragma omp simd
            for (std::size_t n = 0; n < NR; ++n) acc[m][n] += a * b[n];
          }
        }
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          const S* b = bp + k * NR;
          for (std::size_t m = 0; m < mb; ++m) {
            const S a = A[(m0 + m) * K + k];
#pragma omp simd
            for (std::size_t n = 0; n < NR; ++n) acc[m][n] += a * b[n];
          }
        }
      }
      for (std::size_t m = 0; m < mb; ++m)
        std::copy(acc[m], acc[m] + nb, C + (m0 + m) * N + n0);
    }
  }
}

/// Unfolds a padded image (Cin×Hp×Wp) into the (Cin·k²)×(Ho·Wo) patch matrix
/// so convolution becomes a single matrix product.
template <typename S>
void im2col(const S* padded, S* X, std::size_t Cin, std::size_t Hp, std::size_t Wp,
            std::size_t k, int stride, std::size_t Ho, std::size_t Wo) {
  const std::size_t P = Ho * Wo;
  for (std::size_t ic = 0; ic < Cin; ++ic) {
    const S* ch = padded + ic * Hp * Wp;
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        S* row = X + ((ic * k + ky) * k + kx) * P;
        if (stride == 1) {
          for (std::size_t oy = 0; oy < Ho; ++oy)
            std::copy(ch + (oy + ky) * Wp + kx, ch + (oy + ky) * Wp + kx + Wo, row + oy * Wo);
        } else {
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const S* src = ch + (oy * stride + ky) * Wp + kx;
            for (std::size_t ox = 0; ox < Wo; ++ox) row[oy * Wo + ox] = src[ox * stride];
          }
        }
      }
  }
}

template <typename S>
void transpose(const S* src, S* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 int stride = 1, int pad = 0) {
  if (input.rank() != 3 || weight.rank() != 4)
    throw ShapeError("conv2d: need C×H×W input and Cout×Cin×k×k weight");
  const std::size_t Cin = input.extent(0), H = input.extent(1), W = input.extent(2);
  const std::size_t Cout = weight.extent(0), k = weight.extent(2);
  if (weight.extent(1) != Cin)
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.extent(1)) +
                     " input channels, got " + std::to_string(Cin));
  if (k > H + 2 * pad || k > W + 2 * pad || stride < 1)
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded input " +
                     shape_str(input.shape()));
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - k) / stride + 1;
  const std::size_t P = Ho * Wo;
  Tensor<S> out({Cout, Ho, Wo});

  if (k == 1 && stride == 1 && pad == 0) {
    // pure channel mix: out = W (Cout×Cin) · x (Cin×P)
    detail::gemm(weight.data(), input.data(), out.data(), Cout, Cin, P);
  } else {
    const std::size_t Hp = H + 2 * pad, Wp = W + 2 * pad;
    std::vector<S>& padded = detail::scratch<S, 1>(Cin * Hp * Wp);
    for (std::size_t ic = 0; ic < Cin; ++ic)
      detail::pad_channel(input.data() + ic * H * W, padded.data() + ic * Hp * Wp, H, W, pad);
    std::vector<S>& X = detail::scratch<S, 2>(Cin * k * k * P);
    detail::im2col(padded.data(), X.data(), Cin, Hp, Wp, k, stride, Ho, Wo);
    detail::gemm(weight.data(), X.data(), out.data(), Cout, Cin * k * k, P);
  }
#pragma omp parallel for schedule(static)
  for (long long oc = 0; oc < static_cast<long long>(Cout); ++oc) {
    S* o = out.data() + oc * P;
    const S b = bias[oc];
    for (std::size_t i = 0; i < P; ++i) o[i] += b;
  }
  return out;
}

/// d(conv)/d(input). Parallel over input channels; per-element order fixed.
/// For stride 1 this is a correlation of the (k-1-pad)-padded output gradient
/// with the channel-transposed, spatially flipped weights, so it reuses the
/// branch-free structure of the forward pass.
template <typename S>
Tensor<S> conv2d_grad_input(const Tensor<S>& grad_out, const Tensor<S>& weight,
                            const Shape& in_shape, int stride, int pad) {
  const std::size_t Cin = in_shape[0], H = in_shape[1], W = in_shape[2];
  const std::size_t Cout = weight.extent(0), k = weight.extent(2);
  const std::size_t Ho = grad_out.extent(1), Wo = grad_out.extent(2);
  Tensor<S> gin({Cin, H, W});

  if (k == 1 && stride == 1 && pad == 0) {
    // channel mix with the transposed weight matrix
    std::vector<S>& wt = detail::scratch<S, 3>(Cin * Cout);
    detail::transpose(weight.data(), wt.data(), Cout, Cin);
    detail::gemm(wt.data(), grad_out.data(), gin.data(), Cin, Cout, H * W);
    return gin;
  }

  if (stride == 1 && pad < static_cast<int>(k)) {
    // correlation of the re-padded output gradient with the channel-swapped,
    // spatially flipped weights; same im2col+gemm form as the forward pass
    const int gp = static_cast<int>(k) - 1 - pad;
    const std::size_t Hp = H + k - 1, Wp = W + k - 1;  // == Ho+2gp, Wo+2gp
    std::vector<S>& padded = detail::scratch<S, 1>(Cout * Hp * Wp);
    for (std::size_t oc = 0; oc < Cout; ++oc)
      detail::pad_channel(grad_out.data() + oc * Ho * Wo, padded.data() + oc * Hp * Wp, Ho, Wo,
                          gp);
    std::vector<S>& wt = detail::scratch<S, 3>(Cin * Cout * k * k);
    for (std::size_t oc = 0; oc < Cout; ++oc)
      for (std::size_t ic = 0; ic < Cin; ++ic)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx)
            wt[((ic * Cout + oc) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
                weight[((oc * Cin + ic) * k + ky) * k + kx];
    std::vector<S>& X = detail::scratch<S, 2>(Cout * k * k * H * W);
    detail::im2col(padded.data(), X.data(), Cout, Hp, Wp, k, 1, H, W);
    detail::gemm(wt.data(), X.data(), gin.data(), Cin, Cout * k * k, H * W);
    return gin;
  }

  // strided fallback: scatter into a padded buffer, then crop
  const std::size_t Hp = H + 2 * pad, Wp = W + 2 * pad;
#pragma omp parallel for schedule(static)
  for (long long ic = 0; ic < static_cast<long long>(Cin); ++ic) {
    std::vector<S> acc(Hp * Wp, S(0));
    for (std::size_t oc = 0; oc < Cout; ++oc) {
      const S* g = grad_out.data() + oc * Ho * Wo;
      const S* kw = weight.data() + (oc * Cin + ic) * k * k;
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const S gv = g[oy * Wo + ox];
          S* base = acc.data() + (oy * stride) * Wp + ox * stride;
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) base[ky * Wp + kx] += gv * kw[ky * k + kx];
        }
    }
    S* gi = gin.data() + ic * H * W;
    for (std::size_t y = 0; y < H; ++y)
      std::copy(acc.data() + (y + pad) * Wp + pad, acc.data() + (y + pad) * Wp + pad + W,
                gi + y * W);
  }
  return gin;
}

template <typename S>
Tensor<S> conv2d_grad_weight(const Tensor<S>& input, const Tensor<S>& grad_out,
                             std::size_t k, int stride, int pad) {
  const std::size_t Cin = input.extent(0), H = input.extent(1), W = input.extent(2);
  const std::size_t Cout = grad_out.extent(0), Ho = grad_out.extent(1), Wo = grad_out.extent(2);
  Tensor<S> gw({Cout, Cin, k, k});
  const std::size_t P = Ho * Wo, K = Cin * k * k;

  // gwᵀ (K×Cout) = patch matrix X (K×P) · grad_outᵀ (P×Cout)
  std::vector<S>& gt = detail::scratch<S, 4>(P * Cout);
  detail::transpose(grad_out.data(), gt.data(), Cout, P);
  std::vector<S>& R = detail::scratch<S, 5>(K * Cout);
  if (k == 1 && stride == 1 && pad == 0) {
    detail::gemm(input.data(), gt.data(), R.data(), K, P, Cout);
  } else {
    const std::size_t Hp = H + 2 * pad, Wp = W + 2 * pad;
    std::vector<S>& padded = detail::scratch<S, 1>(Cin * Hp * Wp);
    for (std::size_t ic = 0; ic < Cin; ++ic)
      detail::pad_channel(input.data() + ic * H * W, padded.data() + ic * Hp * Wp, H, W, pad);
    std::vector<S>& X = detail::scratch<S, 2>(K * P);
    detail::im2col(padded.data(), X.data(), Cin, Hp, Wp, k, stride, Ho, Wo);
    detail::gemm(X.data(), gt.data(), R.data(), K, P, Cout);
  }
  detail::transpose(R.data(), gw.data(), K, Cout);
  return gw;
}

template <typename S>
Tensor<S> conv2d_grad_bias(const Tensor<S>& grad_out) {
  const std::size_t Cout = grad_out.extent(0), P = grad_out.extent(1) * grad_out.extent(2);
  Tensor<S> gb({Cout});
#pragma omp parallel for schedule(static)
  for (long long oc = 0; oc < static_cast<long long>(Cout); ++oc) {
    S acc = 0;
    const S* g = grad_out.data() + oc * P;
    for (std::size_t i = 0; i < P; ++i) acc += g[i];
    gb[oc] = acc;
  }
  return gb;
}

namespace detail {

// inclusive 2-D prefix sums of one channel, (H+1)x(W+1) with a zero border
template <typename S>
void integral_image(const S* src, double* ii, std::size_t H, std::size_t W) {
  const std::size_t Wi = W + 1;
  std::fill(ii, ii + Wi, 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    double rowsum = 0.0;
    ii[(y + 1) * Wi] = 0.0;
    for (std::size_t x = 0; x < W; ++x) {
      rowsum += static_cast<double>(src[y * W + x]);
      ii[(y + 1) * Wi + x + 1] = ii[y * Wi + x + 1] + rowsum;
    }
  }
}

}  // namespace detail

/// Stride-1 average pooling via summed-area tables, O(C·H·W) per call.
template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& input, int k) {
  const std::size_t C = input.extent(0), H = input.extent(1), W = input.extent(2);
  if (k < 1 || static_cast<std::size_t>(k) > H || static_cast<std::size_t>(k) > W)
    throw ShapeError("avg_pool2d: window " + std::to_string(k) + " exceeds input " +
                     shape_str(input.shape()));
  if (k == 1) return input;
  const std::size_t Ho = H - k + 1, Wo = W - k + 1, Wi = W + 1;
  Tensor<S> out({C, Ho, Wo});
  const double inv = 1.0 / (static_cast<double>(k) * k);
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < static_cast<long long>(C); ++c) {
    std::vector<double> ii((H + 1) * Wi);
    detail::integral_image(input.data() + c * H * W, ii.data(), H, W);
    S* o = out.data() + c * Ho * Wo;
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x) {
        const double s = ii[(y + k) * Wi + (x + k)] - ii[y * Wi + (x + k)] -
                         ii[(y + k) * Wi + x] + ii[y * Wi + x];
        o[y * Wo + x] = static_cast<S>(s * inv);
      }
  }
  return out;
}

/// avg_pool2d backward: each input pixel collects grad/k² from every window
/// covering it, computed with a summed-area table over grad_out.
template <typename S>
Tensor<S> avg_pool2d_grad(const Tensor<S>& grad_out, const Shape& in_shape, int k) {
  if (k == 1) return grad_out;
  const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
  const std::size_t Ho = grad_out.extent(1), Wo = grad_out.extent(2), Wi = Wo + 1;
  Tensor<S> gin({C, H, W});
  const double inv = 1.0 / (static_cast<double>(k) * k);
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < static_cast<long long>(C); ++c) {
    std::vector<double> ii((Ho + 1) * Wi);
    detail::integral_image(grad_out.data() + c * Ho * Wo, ii.data(), Ho, Wo);
    S* g = gin.data() + c * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      // windows with top row in [y-k+1, y] clipped to [0, Ho)
      const std::size_t y0 = y >= static_cast<std::size_t>(k - 1) ? y - (k - 1) : 0;
      const std::size_t y1 = std::min(y + 1, Ho);
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t x0 = x >= static_cast<std::size_t>(k - 1) ? x - (k - 1) : 0;
        const std::size_t x1 = std::min(x + 1, Wo);
        if (y0 >= y1 || x0 >= x1) continue;
        const double s = ii[y1 * Wi + x1] - ii[y0 * Wi + x1] - ii[y1 * Wi + x0] + ii[y0 * Wi + x0];
        g[y * W + x] = static_cast<S>(s * inv);
      }
    }
  }
  return gin;
}

/// Stride-1 max pooling; records the flat argmax per window (first maximum in
/// scan order) when `argmax` is non-null so backward can route gradients.
template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& input, int k, std::vector<std::uint32_t>* argmax = nullptr) {
  const std::size_t C = input.extent(0), H = input.extent(1), W = input.extent(2);
  if (k < 1 || static_cast<std::size_t>(k) > H || static_cast<std::size_t>(k) > W)
    throw ShapeError("max_pool2d: window " + std::to_string(k) + " exceeds input " +
                     shape_str(input.shape()));
  const std::size_t Ho = H - k + 1, Wo = W - k + 1;
  Tensor<S> out({C, Ho, Wo});
  if (argmax) argmax->assign(C * Ho * Wo, 0);
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < static_cast<long long>(C); ++c)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x) {
        S best = -std::numeric_limits<S>::infinity();
        std::uint32_t bi = 0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) {
            const std::size_t idx = (c * H + y + dy) * W + x + dx;
            if (input[idx] > best) {
              best = input[idx];
              bi = static_cast<std::uint32_t>(idx);
            }
          }
        out.at(c, y, x) = best;
        if (argmax) (*argmax)[(c * Ho + y) * Wo + x] = bi;
      }
  return out;
}

/// Numerically stable softmax over the whole tensor (max-shifted).
template <typename S>
Tensor<S> softmax_flat(const Tensor<S>& logits) {
  Tensor<S> out(logits.shape());
  S mx = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  S sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  const S inv = S(1) / sum;
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] *= inv;
  return out;
}

/// Half-pixel-center bilinear resize (align-corners=false); exact copy when
/// the size is unchanged.
template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& input, std::size_t outH, std::size_t outW) {
  const std::size_t C = input.extent(0), H = input.extent(1), W = input.extent(2);
  if (outH == H && outW == W) return input;
  Tensor<S> out({C, outH, outW});
  // per-axis sample positions are shared across channels
  std::vector<std::size_t> ys0(outH), xs0(outW);
  std::vector<double> fy(outH), fx(outW);
  auto plan = [](std::size_t out_n, std::size_t in_n, std::vector<std::size_t>& i0,
                 std::vector<double>& f) {
    for (std::size_t o = 0; o < out_n; ++o) {
      double s = (o + 0.5) * static_cast<double>(in_n) / out_n - 0.5;
      double fl = std::floor(s);
      double frac = s - fl;
      long lo = static_cast<long>(fl);
      if (lo < 0) { lo = 0; frac = 0.0; }
      if (lo >= static_cast<long>(in_n) - 1) { lo = static_cast<long>(in_n) - 1; frac = 0.0; }
      i0[o] = static_cast<std::size_t>(lo);
      f[o] = frac;
    }
  };
  plan(outH, H, ys0, fy);
  plan(outW, W, xs0, fx);
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < static_cast<long long>(C); ++c) {
    const S* x = input.data() + c * H * W;
    S* o = out.data() + c * outH * outW;
    for (std::size_t oy = 0; oy < outH; ++oy) {
      const S* r0 = x + ys0[oy] * W;
      const S* r1 = x + std::min(ys0[oy] + 1, H - 1) * W;
      const double wy = fy[oy];
      for (std::size_t ox = 0; ox < outW; ++ox) {
        const std::size_t x0 = xs0[ox], x1 = std::min(x0 + 1, W - 1);
        const double wx = fx[ox];
        const double v = (1 - wy) * ((1 - wx) * r0[x0] + wx * r0[x1]) +
                         wy * ((1 - wx) * r1[x0] + wx * r1[x1]);
        o[oy * outW + ox] = static_cast<S>(v);
      }
    }
  }
  return out;
}

/// resize_bilinear backward: transpose of the interpolation weights.
template <typename S>
Tensor<S> resize_bilinear_grad(const Tensor<S>& grad_out, const Shape& in_shape) {
  const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
  const std::size_t outH = grad_out.extent(1), outW = grad_out.extent(2);
  if (outH == H && outW == W) return grad_out;
  Tensor<S> gin({C, H, W});
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < static_cast<long long>(C); ++c) {
    const S* g = grad_out.data() + c * outH * outW;
    S* gi = gin.data() + c * H * W;
    for (std::size_t oy = 0; oy < outH; ++oy) {
      double sy = (oy + 0.5) * static_cast<double>(H) / outH - 0.5;
      double fl = std::floor(sy);
      double wy = sy - fl;
      long y0 = static_cast<long>(fl);
      if (y0 < 0) { y0 = 0; wy = 0.0; }
      if (y0 >= static_cast<long>(H) - 1) { y0 = static_cast<long>(H) - 1; wy = 0.0; }
      const std::size_t y1 = std::min<std::size_t>(y0 + 1, H - 1);
      for (std::size_t ox = 0; ox < outW; ++ox) {
        double sx = (ox + 0.5) * static_cast<double>(W) / outW - 0.5;
        double fx = std::floor(sx);
        double wx = sx - fx;
        long x0 = static_cast<long>(fx);
        if (x0 < 0) { x0 = 0; wx = 0.0; }
        if (x0 >= static_cast<long>(W) - 1) { x0 = static_cast<long>(W) - 1; wx = 0.0; }
        const std::size_t x1 = std::min<std::size_t>(x0 + 1, W - 1);
        const double gv = g[oy * outW + ox];
        gi[y0 * W + x0] += static_cast<S>((1 - wy) * (1 - wx) * gv);
        gi[y0 * W + x1] += static_cast<S>((1 - wy) * wx * gv);
        gi[y1 * W + x0] += static_cast<S>(wy * (1 - wx) * gv);
        gi[y1 * W + x1] += static_cast<S>(wy * wx * gv);
      }
    }
  }
  return gin;
}

template <typename S>
Tensor<S> fully_connected(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  const std::size_t Dout = weight.extent(0), Din = weight.extent(1);
  if (x.size() != Din)
    throw ShapeError("fully_connected: weight expects " + std::to_string(Din) +
                     " inputs, got " + std::to_string(x.size()));
  Tensor<S> out({Dout});
#pragma omp parallel for schedule(static)
  for (long long o = 0; o < static_cast<long long>(Dout); ++o) {
    S acc = bias[o];
    const S* wr = weight.data() + o * Din;
#pragma omp simd reduction(+ : acc)
    for (std::size_t i = 0; i < Din; ++i) acc += wr[i] * x[i];
    out[o] = acc;
  }
  return out;
}

/// V(c) = Σ_{i,j} f(c,i,j)·ω(i,j)
template <typename S>
Tensor<S> attention_vector(const Tensor<S>& f, const Tensor<S>& omega) {
  const std::size_t C = f.extent(0), P = f.extent(1) * f.extent(2);
  if (omega.size() != P)
    throw ShapeError("attention_vector: mask " + shape_str(omega.shape()) +
                     " does not match feature " + shape_str(f.shape()));
  Tensor<S> out({C});
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < static_cast<long long>(C); ++c) {
    S acc = 0;
    const S* row = f.data() + c * P;
#pragma omp simd reduction(+ : acc)
    for (std::size_t i = 0; i < P; ++i) acc += row[i] * omega[i];
    out[c] = acc;
  }
  return out;
}

}  // namespace sap::kernels

#endif  // SAP_KERNELS_HPP_
