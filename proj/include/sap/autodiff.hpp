#ifndef SAP_AUTODIFF_HPP_
#define SAP_AUTODIFF_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sap/kernels.hpp"
#include "sap/tensor.hpp"

// Reverse-mode autodiff over the tensor kernels. A Tape owns the forward
// values; nodes are appended in topological order and the backward pass walks
// them in strictly decreasing index order, summing contributions from every
// consumer. Single-owner: a tape is never shared across threads.

namespace sap::ad {

template <typename S>
struct Param {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  Param() = default;
  Param(std::string n, Tensor<S> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(S(0)); }
};

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Tensor<S>& val() const { return tape->value(id); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

template <typename S>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int)>;

  Var<S> leaf(Tensor<S> value) { return push(std::move(value), nullptr); }

  /// Leaf tied to a parameter; backward() adds the node gradient into
  /// param.grad.
  Var<S> use(Param<S>& p) {
    Var<S> v = push(p.value, nullptr);
    param_nodes_.emplace_back(&p, v.id);
    return v;
  }

  Var<S> push(Tensor<S> value, BackFn back) {
    nodes_.push_back(Node{std::move(value), std::move(back)});
    grads_.emplace_back();
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<S>& value(int id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

  bool has_grad(int id) const { return !grads_[id].empty(); }

  const Tensor<S>& grad(int id) const { return grads_[id]; }

  /// Adds `delta` into the gradient slot of `id` (gradient accumulation is
  /// additive over consumers).
  void accumulate(int id, const Tensor<S>& delta) {
    if (grads_[id].empty()) {
      grads_[id] = delta;
      return;
    }
    Tensor<S>& g = grads_[id];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
  }
  void accumulate(int id, Tensor<S>&& delta) {
    if (grads_[id].empty()) {
      grads_[id] = std::move(delta);
      return;
    }
    Tensor<S>& g = grads_[id];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
  }

  void backward(const Var<S>& loss) {
    if (loss.val().size() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.val().shape()));
    accumulate(loss.id, Tensor<S>(loss.val().shape(), S(1)));
    for (int i = loss.id; i >= 0; --i)
      if (!grads_[i].empty() && nodes_[i].back) nodes_[i].back(*this, i);
    for (auto& [param, id] : param_nodes_) {
      if (grads_[id].empty()) continue;
      for (std::size_t k = 0; k < param->grad.size(); ++k) param->grad[k] += grads_[id][k];
    }
  }

 private:
  struct Node {
    Tensor<S> value;
    BackFn back;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor<S>> grads_;
  std::vector<std::pair<Param<S>*, int>> param_nodes_;
};

// ---- ops ----

template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, int stride = 1, int pad = 0) {
  Tape<S>& t = *x.tape;
  Tensor<S> out = kernels::conv2d(x.val(), w.val(), b.val(), stride, pad);
  const int xi = x.id, wi = w.id, bi = b.id;
  const Shape in_shape = x.val().shape();
  const std::size_t k = w.val().extent(2);
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    tp.accumulate(xi, kernels::conv2d_grad_input(g, tp.value(wi), in_shape, stride, pad));
    tp.accumulate(wi, kernels::conv2d_grad_weight(tp.value(xi), g, k, stride, pad));
    tp.accumulate(bi, kernels::conv2d_grad_bias(g));
  });
}

template <typename S>
Var<S> relu(Var<S> x) {
  Tape<S>& t = *x.tape;
  Tensor<S> out = x.val();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > S(0) ? out[i] : S(0);
  const int xi = x.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    const Tensor<S>& xin = tp.value(xi);
    Tensor<S> gx(xin.shape());
    // subgradient 0 at the kink
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = xin[i] > S(0) ? g[i] : S(0);
    tp.accumulate(xi, std::move(gx));
  });
}

template <typename S>
Var<S> avg_pool2d(Var<S> x, int k) {
  Tape<S>& t = *x.tape;
  Tensor<S> out = kernels::avg_pool2d(x.val(), k);
  const int xi = x.id;
  const Shape in_shape = x.val().shape();
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    tp.accumulate(xi, kernels::avg_pool2d_grad(tp.grad(self), in_shape, k));
  });
}

template <typename S>
Var<S> max_pool2d(Var<S> x, int k) {
  Tape<S>& t = *x.tape;
  auto argmax = std::make_shared<std::vector<std::uint32_t>>();
  Tensor<S> out = kernels::max_pool2d(x.val(), k, argmax.get());
  const int xi = x.id;
  const Shape in_shape = x.val().shape();
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    Tensor<S> gx(in_shape);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
    tp.accumulate(xi, std::move(gx));
  });
}

template <typename S>
Var<S> resize_bilinear(Var<S> x, std::size_t outH, std::size_t outW) {
  Tape<S>& t = *x.tape;
  Tensor<S> out = kernels::resize_bilinear(x.val(), outH, outW);
  const int xi = x.id;
  const Shape in_shape = x.val().shape();
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    tp.accumulate(xi, kernels::resize_bilinear_grad(tp.grad(self), in_shape));
  });
}

template <typename S>
Var<S> fully_connected(Var<S> x, Var<S> w, Var<S> b) {
  Tape<S>& t = *x.tape;
  Tensor<S> out = kernels::fully_connected(x.val(), w.val(), b.val());
  const int xi = x.id, wi = w.id, bi = b.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    const Tensor<S>& weight = tp.value(wi);
    const Tensor<S>& xin = tp.value(xi);
    const std::size_t Dout = weight.extent(0), Din = weight.extent(1);
    Tensor<S> gx({Din});
    for (std::size_t i = 0; i < Din; ++i) {
      S acc = 0;
      for (std::size_t o = 0; o < Dout; ++o) acc += weight.at(o, i) * g[o];
      gx[i] = acc;
    }
    Tensor<S> gw({Dout, Din});
    for (std::size_t o = 0; o < Dout; ++o)
      for (std::size_t i = 0; i < Din; ++i) gw.at(o, i) = g[o] * xin[i];
    tp.accumulate(xi, std::move(gx));
    tp.accumulate(wi, std::move(gw));
    tp.accumulate(bi, g);
  });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  if (!a.val().same_shape(b.val()))
    throw ShapeError("add: shape mismatch " + shape_str(a.val().shape()) + " vs " +
                     shape_str(b.val().shape()));
  Tensor<S> out = a.val();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.val()[i];
  const int ai = a.id, bi = b.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    tp.accumulate(ai, tp.grad(self));
    tp.accumulate(bi, tp.grad(self));
  });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  if (!a.val().same_shape(b.val()))
    throw ShapeError("mul: shape mismatch");
  Tensor<S> out = a.val();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.val()[i];
  const int ai = a.id, bi = b.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    Tensor<S> ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * tp.value(bi)[i];
      gb[i] = g[i] * tp.value(ai)[i];
    }
    tp.accumulate(ai, std::move(ga));
    tp.accumulate(bi, std::move(gb));
  });
}

template <typename S>
Var<S> scale(Var<S> x, S c) {
  Tape<S>& t = *x.tape;
  Tensor<S> out = x.val();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  const int xi = x.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    Tensor<S> gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * c;
    tp.accumulate(xi, std::move(gx));
  });
}

template <typename S>
Var<S> concat_channels(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  const Tensor<S>& x = a.val();
  const Tensor<S>& y = b.val();
  if (x.extent(1) != y.extent(1) || x.extent(2) != y.extent(2))
    throw ShapeError("concat_channels: spatial mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  const std::size_t Ca = x.extent(0), Cb = y.extent(0), P = x.extent(1) * x.extent(2);
  Tensor<S> out({Ca + Cb, x.extent(1), x.extent(2)});
  std::copy(x.data(), x.data() + Ca * P, out.data());
  std::copy(y.data(), y.data() + Cb * P, out.data() + Ca * P);
  const int ai = a.id, bi = b.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    Tensor<S> ga(tp.value(ai).shape()), gb(tp.value(bi).shape());
    std::copy(g.data(), g.data() + Ca * P, ga.data());
    std::copy(g.data() + Ca * P, g.data() + (Ca + Cb) * P, gb.data());
    tp.accumulate(ai, std::move(ga));
    tp.accumulate(bi, std::move(gb));
  });
}

template <typename S>
Var<S> sum_all(Var<S> x) {
  Tape<S>& t = *x.tape;
  S acc = 0;
  for (std::size_t i = 0; i < x.val().size(); ++i) acc += x.val()[i];
  const int xi = x.id;
  return t.push(Tensor<S>({1}, acc), [=](Tape<S>& tp, int self) {
    const S g = tp.grad(self)[0];
    tp.accumulate(xi, Tensor<S>(tp.value(xi).shape(), g));
  });
}

template <typename S>
Var<S> mean_all(Var<S> x) {
  return scale(sum_all(x), S(1) / static_cast<S>(x.val().size()));
}

/// Spatial mean per channel: [C,H,W] -> [C].
template <typename S>
Var<S> mean_spatial(Var<S> x) {
  Tape<S>& t = *x.tape;
  const std::size_t C = x.val().extent(0), P = x.val().extent(1) * x.val().extent(2);
  Tensor<S> out({C});
  for (std::size_t c = 0; c < C; ++c) {
    S acc = 0;
    const S* row = x.val().data() + c * P;
    for (std::size_t i = 0; i < P; ++i) acc += row[i];
    out[c] = acc / static_cast<S>(P);
  }
  const int xi = x.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    Tensor<S> gx(tp.value(xi).shape());
    const std::size_t n = gx.size() / g.size();
    for (std::size_t c = 0; c < g.size(); ++c) {
      const S v = g[c] / static_cast<S>(n);
      for (std::size_t i = 0; i < n; ++i) gx[c * n + i] = v;
    }
    tp.accumulate(xi, std::move(gx));
  });
}

template <typename S>
Var<S> softmax_flat(Var<S> x) {
  Tape<S>& t = *x.tape;
  Tensor<S> out = kernels::softmax_flat(x.val());
  const int xi = x.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    const Tensor<S>& s = tp.value(self);
    S dot = 0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * s[i];
    Tensor<S> gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = s[i] * (g[i] - dot);
    tp.accumulate(xi, std::move(gx));
  });
}

/// Softmax across axis 0 of an [N,C] matrix, independently per column.
template <typename S>
Var<S> softmax_levels(Var<S> x) {
  Tape<S>& t = *x.tape;
  const std::size_t N = x.val().extent(0), C = x.val().extent(1);
  Tensor<S> out({N, C});
  for (std::size_t c = 0; c < C; ++c) {
    S mx = x.val().at(std::size_t(0), c);
    for (std::size_t n = 1; n < N; ++n) mx = std::max(mx, x.val().at(n, c));
    S sum = 0;
    for (std::size_t n = 0; n < N; ++n) {
      out.at(n, c) = std::exp(x.val().at(n, c) - mx);
      sum += out.at(n, c);
    }
    for (std::size_t n = 0; n < N; ++n) out.at(n, c) /= sum;
  }
  const int xi = x.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    const Tensor<S>& s = tp.value(self);
    Tensor<S> gx({N, C});
    for (std::size_t c = 0; c < C; ++c) {
      S dot = 0;
      for (std::size_t n = 0; n < N; ++n) dot += g.at(n, c) * s.at(n, c);
      for (std::size_t n = 0; n < N; ++n) gx.at(n, c) = s.at(n, c) * (g.at(n, c) - dot);
    }
    tp.accumulate(xi, std::move(gx));
  });
}

/// Per-pixel softmax over the channel axis of a [C,H,W] map.
template <typename S>
Var<S> softmax_channels(Var<S> x) {
  Tape<S>& t = *x.tape;
  const std::size_t C = x.val().extent(0), P = x.val().extent(1) * x.val().extent(2);
  Tensor<S> out(x.val().shape());
  for (std::size_t p = 0; p < P; ++p) {
    S mx = x.val()[p];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, x.val()[c * P + p]);
    S sum = 0;
    for (std::size_t c = 0; c < C; ++c) {
      out[c * P + p] = std::exp(x.val()[c * P + p] - mx);
      sum += out[c * P + p];
    }
    for (std::size_t c = 0; c < C; ++c) out[c * P + p] /= sum;
  }
  const int xi = x.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    const Tensor<S>& s = tp.value(self);
    Tensor<S> gx(g.shape());
    for (std::size_t p = 0; p < P; ++p) {
      S dot = 0;
      for (std::size_t c = 0; c < C; ++c) dot += g[c * P + p] * s[c * P + p];
      for (std::size_t c = 0; c < C; ++c) gx[c * P + p] = s[c * P + p] * (g[c * P + p] - dot);
    }
    tp.accumulate(xi, std::move(gx));
  });
}

template <typename S>
Var<S> sigmoid(Var<S> x) {
  Tape<S>& t = *x.tape;
  Tensor<S> out = x.val();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const S v = out[i];
    out[i] = v >= 0 ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
  }
  const int xi = x.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    const Tensor<S>& s = tp.value(self);
    Tensor<S> gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * s[i] * (S(1) - s[i]);
    tp.accumulate(xi, std::move(gx));
  });
}

/// Identity forward; backward multiplies the upstream gradient by -lambda.
template <typename S>
Var<S> grad_reverse(Var<S> x, S lambda) {
  Tape<S>& t = *x.tape;
  const int xi = x.id;
  return t.push(x.val(), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    Tensor<S> gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = -lambda * g[i];
    tp.accumulate(xi, std::move(gx));
  });
}

/// Cuts the graph: forward copy, no backward edge.
template <typename S>
Var<S> detach(Var<S> x) {
  return x.tape->leaf(x.val());
}

/// V(c) = Σ_{i,j} f(c,i,j)·ω(i,j), differentiable in both f and ω.
template <typename S>
Var<S> weighted_spatial_sum(Var<S> f, Var<S> omega) {
  Tape<S>& t = *f.tape;
  Tensor<S> out = kernels::attention_vector(f.val(), omega.val());
  const int fi = f.id, oi = omega.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    const Tensor<S>& fv = tp.value(fi);
    const Tensor<S>& ov = tp.value(oi);
    const std::size_t C = fv.extent(0), P = fv.extent(1) * fv.extent(2);
    Tensor<S> gf(fv.shape()), go(ov.shape());
    for (std::size_t c = 0; c < C; ++c) {
      const S gc = g[c];
      const S* frow = fv.data() + c * P;
      S* gfrow = gf.data() + c * P;
      for (std::size_t i = 0; i < P; ++i) {
        gfrow[i] = gc * ov[i];
        go[i] += gc * frow[i];
      }
    }
    tp.accumulate(fi, std::move(gf));
    tp.accumulate(oi, std::move(go));
  });
}

/// Stacks N same-length vectors into an [N,D] matrix.
template <typename S>
Var<S> stack_rows(const std::vector<Var<S>>& rows) {
  Tape<S>& t = *rows.front().tape;
  const std::size_t N = rows.size(), D = rows.front().val().size();
  Tensor<S> out({N, D});
  std::vector<int> ids(N);
  for (std::size_t n = 0; n < N; ++n) {
    ids[n] = rows[n].id;
    std::copy(rows[n].val().data(), rows[n].val().data() + D, out.data() + n * D);
  }
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    for (std::size_t n = 0; n < N; ++n) {
      Tensor<S> gr({D});
      std::copy(g.data() + n * D, g.data() + (n + 1) * D, gr.data());
      tp.accumulate(ids[n], std::move(gr));
    }
  });
}

template <typename S>
Var<S> row(Var<S> x, std::size_t r) {
  Tape<S>& t = *x.tape;
  const std::size_t D = x.val().extent(1);
  Tensor<S> out({D});
  std::copy(x.val().data() + r * D, x.val().data() + (r + 1) * D, out.data());
  const int xi = x.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    Tensor<S> gx(tp.value(xi).shape());
    std::copy(g.data(), g.data() + D, gx.data() + r * D);
    tp.accumulate(xi, std::move(gx));
  });
}

/// Σ_n A(n,·) ⊙ B(n,·) over axis 0: [N,C] x [N,C] -> [C].
template <typename S>
Var<S> fuse_levels(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  if (!a.val().same_shape(b.val())) throw ShapeError("fuse_levels: shape mismatch");
  const std::size_t N = a.val().extent(0), C = a.val().extent(1);
  Tensor<S> out({C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) out[c] += a.val().at(n, c) * b.val().at(n, c);
  const int ai = a.id, bi = b.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    Tensor<S> ga({N, C}), gb({N, C});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        ga.at(n, c) = g[c] * tp.value(bi).at(n, c);
        gb.at(n, c) = g[c] * tp.value(ai).at(n, c);
      }
    tp.accumulate(ai, std::move(ga));
    tp.accumulate(bi, std::move(gb));
  });
}

// ---- batch normalization over stacked rows ----

template <typename S>
struct BnState {
  Tensor<S> running_mean;
  Tensor<S> running_var;

  explicit BnState(std::size_t dim = 1)
      : running_mean({dim}, S(0)), running_var({dim}, S(1)) {}
};

/// Normalizes each column of an [B,D] matrix. Train mode uses biased batch
/// statistics (eps 1e-5) and updates running stats with momentum 0.1; eval
/// mode uses the running stats. Train mode requires B >= 2.
template <typename S>
Var<S> batch_norm_rows(Var<S> x, Var<S> gamma, Var<S> beta, BnState<S>& state, bool train) {
  Tape<S>& t = *x.tape;
  const std::size_t B = x.val().extent(0), D = x.val().extent(1);
  if (train && B < 2)
    throw ShapeError("batch_norm_rows: train mode needs a batch of at least 2, got " +
                     std::to_string(B));
  if (state.running_mean.size() != D || gamma.val().size() != D || beta.val().size() != D)
    throw ShapeError("batch_norm_rows: feature dim " + std::to_string(D) +
                     " does not match state/affine dims");
  constexpr double kEps = 1e-5;
  constexpr double kMomentum = 0.1;

  auto mean = std::make_shared<std::vector<double>>(D, 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(D, 0.0);
  const Tensor<S>& xv = x.val();
  if (train) {
    for (std::size_t j = 0; j < D; ++j) {
      double m = 0;
      for (std::size_t i = 0; i < B; ++i) m += xv.at(i, j);
      m /= B;
      double v = 0;
      for (std::size_t i = 0; i < B; ++i) {
        const double d = xv.at(i, j) - m;
        v += d * d;
      }
      v /= B;
      (*mean)[j] = m;
      (*inv_std)[j] = 1.0 / std::sqrt(v + kEps);
      state.running_mean[j] = static_cast<S>((1 - kMomentum) * state.running_mean[j] + kMomentum * m);
      state.running_var[j] = static_cast<S>((1 - kMomentum) * state.running_var[j] + kMomentum * v);
    }
  } else {
    for (std::size_t j = 0; j < D; ++j) {
      (*mean)[j] = state.running_mean[j];
      (*inv_std)[j] = 1.0 / std::sqrt(static_cast<double>(state.running_var[j]) + kEps);
    }
  }

  Tensor<S> out({B, D});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < D; ++j)
      out.at(i, j) = static_cast<S>(
          gamma.val()[j] * (xv.at(i, j) - (*mean)[j]) * (*inv_std)[j] + beta.val()[j]);

  const int xi = x.id, gi = gamma.id, bi = beta.id;
  return t.push(std::move(out), [=](Tape<S>& tp, int self) {
    const Tensor<S>& g = tp.grad(self);
    const Tensor<S>& xin = tp.value(xi);
    const Tensor<S>& gam = tp.value(gi);
    Tensor<S> gx({B, D}), gg({D}), gb({D});
    for (std::size_t j = 0; j < D; ++j) {
      const double m = (*mean)[j], is = (*inv_std)[j];
      double sum_g = 0, sum_gx = 0;
      for (std::size_t i = 0; i < B; ++i) {
        const double xhat = (xin.at(i, j) - m) * is;
        sum_g += g.at(i, j);
        sum_gx += g.at(i, j) * xhat;
      }
      gb[j] = static_cast<S>(sum_g);
      gg[j] = static_cast<S>(sum_gx);
      for (std::size_t i = 0; i < B; ++i) {
        const double xhat = (xin.at(i, j) - m) * is;
        double d;
        if (train) {
          d = gam[j] * is / B * (B * g.at(i, j) - sum_g - xhat * sum_gx);
        } else {
          d = gam[j] * is * g.at(i, j);
        }
        gx.at(i, j) = static_cast<S>(d);
      }
    }
    tp.accumulate(xi, std::move(gx));
    tp.accumulate(gi, std::move(gg));
    tp.accumulate(bi, std::move(gb));
  });
}

// ---- losses ----

/// Mean per-pixel cross entropy of [C,H,W] logits against a class-id map.
/// Softmax is folded in (stable, max-shifted).
template <typename S>
Var<S> softmax_ce_pixels(Var<S> logits, const Tensor<std::uint8_t>& labels) {
  Tape<S>& t = *logits.tape;
  const std::size_t C = logits.val().extent(0), H = logits.val().extent(1),
                    W = logits.val().extent(2);
  if (labels.extent(0) != H || labels.extent(1) != W)
    throw ShapeError("softmax_ce_pixels: labels " + shape_str(labels.shape()) +
                     " do not match logits " + shape_str(logits.val().shape()));
  const std::size_t P = H * W;
  auto probs = std::make_shared<Tensor<S>>(Shape{C, H, W});
  double loss = 0;
  for (std::size_t p = 0; p < P; ++p) {
    double mx = logits.val()[p];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(logits.val()[c * P + p]));
    double sum = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const double e = std::exp(logits.val()[c * P + p] - mx);
      (*probs)[c * P + p] = static_cast<S>(e);
      sum += e;
    }
    for (std::size_t c = 0; c < C; ++c) (*probs)[c * P + p] /= static_cast<S>(sum);
    const std::uint8_t y = labels[p];
    if (y >= C) throw ShapeError("softmax_ce_pixels: label id " + std::to_string(y) + " out of range");
    loss -= std::log(std::max(static_cast<double>((*probs)[y * P + p]), 1e-30));
  }
  loss /= P;
  const int li = logits.id;
  auto lab = std::make_shared<Tensor<std::uint8_t>>(labels);
  return t.push(Tensor<S>({1}, static_cast<S>(loss)), [=](Tape<S>& tp, int self) {
    const S g = tp.grad(self)[0];
    Tensor<S> gl({C, H, W});
    for (std::size_t p = 0; p < P; ++p) {
      const std::uint8_t y = (*lab)[p];
      for (std::size_t c = 0; c < C; ++c) {
        S d = (*probs)[c * P + p];
        if (c == y) d -= S(1);
        gl[c * P + p] = g * d / static_cast<S>(P);
      }
    }
    tp.accumulate(li, std::move(gl));
  });
}

/// Binary cross entropy of a probability against domain label y ∈ {0,1};
/// the probability is clamped to [1e-7, 1-1e-7] before the logs.
template <typename S>
Var<S> bce_prob(Var<S> prob, double y) {
  Tape<S>& t = *prob.tape;
  const double lo = 1e-7, hi = 1.0 - 1e-7;
  const double x = std::clamp(static_cast<double>(prob.val()[0]), lo, hi);
  const double loss = -(y * std::log(x) + (1.0 - y) * std::log(1.0 - x));
  const int pi = prob.id;
  return t.push(Tensor<S>({1}, static_cast<S>(loss)), [=](Tape<S>& tp, int self) {
    // The clamped probability is used in the gradient too: composed with the
    // sigmoid that produces the probability this stays bounded (~ x - y), and
    // a saturated discriminator keeps receiving a restoring gradient instead
    // of dying at the clamp boundary.
    Tensor<S> gx({1});
    gx[0] = static_cast<S>(tp.grad(self)[0] * ((x - y) / (x * (1.0 - x))));
    tp.accumulate(pi, std::move(gx));
  });
}

/// Binary cross entropy straight from the scalar logit z against domain
/// label y ∈ {0,1}: softplus(z) - y·z, with backward sigmoid(z) - y. Unlike
/// the probability form this never saturates to a zero gradient, so a
/// confidently-wrong discriminator can always recover.
template <typename S>
Var<S> bce_logit(Var<S> logit, double y) {
  Tape<S>& t = *logit.tape;
  const double z = logit.val()[0];
  const double loss = std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
  const int zi = logit.id;
  return t.push(Tensor<S>({1}, static_cast<S>(loss)), [=](Tape<S>& tp, int self) {
    const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    Tensor<S> gx({1});
    gx[0] = static_cast<S>(tp.grad(self)[0] * (s - y));
    tp.accumulate(zi, std::move(gx));
  });
}

}  // namespace sap::ad

#endif  // SAP_AUTODIFF_HPP_
