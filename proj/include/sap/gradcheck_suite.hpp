#ifndef SAP_GRADCHECK_SUITE_HPP_
#define SAP_GRADCHECK_SUITE_HPP_

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sap/gradcheck.hpp"
#include "sap/sapnet.hpp"

// Numeric self-check: every autodiff op, and the full attention-pyramid
// forward on a toy configuration, against central finite differences in f64.

namespace sap::ad {

struct SuiteResult {
  bool ok = true;
  double worst = 0.0;
  std::vector<std::string> lines;     // per-check report lines
  std::vector<std::string> failures;  // names of failed checks

  void note(const std::string& name, const FdReport& rep, double tol) {
    std::ostringstream ss;
    ss << name << ": max rel err " << rep.max_rel_err << " over " << rep.checked << " entries";
    if (!rep.ok()) {
      ss << "  [FAIL]";
      ok = false;
      failures.push_back(name);
    }
    lines.push_back(ss.str());
    worst = std::max(worst, rep.max_rel_err);
    (void)tol;
  }
};

namespace detail_suite {

/// Checks d(sum(op(x...) * proj))/dx for every listed parameter.
inline void check(SuiteResult& out, const std::string& name,
                  std::vector<Param<double>*> params,
                  const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& op,
                  std::size_t sample_per_param, double tol = 1e-5) {
  Rng proj_rng(0x9a0b);
  Tensor<double> proj;
  auto build = [&](bool do_backward) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (auto* p : params) vars.push_back(tape.use(*p));
    Var<double> y = op(tape, vars);
    if (proj.empty()) {
      proj = Tensor<double>(y.val().shape());
      for (std::size_t i = 0; i < proj.size(); ++i) proj[i] = proj_rng.uniform(-1.0, 1.0);
    }
    Var<double> loss = sum_all(mul(y, tape.leaf(proj)));
    if (do_backward) tape.backward(loss);
    return static_cast<double>(loss.val()[0]);
  };
  Rng pick(0x51ab);
  FdReport rep = finite_difference_check<double>(
      params, [&] { return build(false); }, [&] { build(true); }, 1e-5, tol, sample_per_param,
      pick);
  out.note(name, rep, tol);
}

}  // namespace detail_suite

/// Runs the whole suite; `full` raises the per-parameter sample counts.
inline SuiteResult run_gradcheck_suite(bool full = false) {
  using detail_suite::check;
  SuiteResult out;
  const std::size_t n = full ? 64 : 12;
  Rng rng(0xfd5);
  auto rand_param = [&](const std::string& name, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return Param<double>(name, std::move(t));
  };

  {
    for (auto [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 1}}) {
      auto x = rand_param("x", {2, 6, 6});
      auto w = rand_param("w", {3, 2, 3, 3});
      auto b = rand_param("b", {3});
      check(out, "conv2d s" + std::to_string(stride) + "p" + std::to_string(pad), {&x, &w, &b},
            [=](Tape<double>&, std::vector<Var<double>>& v) {
              return conv2d(v[0], v[1], v[2], stride, pad);
            },
            n);
    }
  }
  {
    auto x = rand_param("x", {2, 6, 6});
    check(out, "relu", {&x},
          [](Tape<double>&, std::vector<Var<double>>& v) { return relu(v[0]); }, n);
  }
  {
    auto x = rand_param("x", {2, 7, 7});
    check(out, "avg_pool2d", {&x},
          [](Tape<double>&, std::vector<Var<double>>& v) { return avg_pool2d(v[0], 3); }, n);
    auto y = rand_param("y", {2, 7, 7});
    check(out, "max_pool2d", {&y},
          [](Tape<double>&, std::vector<Var<double>>& v) { return max_pool2d(v[0], 3); }, n);
  }
  {
    auto x = rand_param("x", {2, 5, 5});
    check(out, "resize_bilinear up", {&x},
          [](Tape<double>&, std::vector<Var<double>>& v) { return resize_bilinear(v[0], 9, 8); },
          n);
    auto y = rand_param("y", {2, 9, 9});
    check(out, "resize_bilinear down", {&y},
          [](Tape<double>&, std::vector<Var<double>>& v) { return resize_bilinear(v[0], 4, 5); },
          n);
  }
  {
    auto x = rand_param("x", {6});
    auto w = rand_param("w", {4, 6});
    auto b = rand_param("b", {4});
    check(out, "fully_connected", {&x, &w, &b},
          [](Tape<double>&, std::vector<Var<double>>& v) {
            return fully_connected(v[0], v[1], v[2]);
          },
          n);
  }
  {
    auto a = rand_param("a", {3, 4});
    auto b = rand_param("b", {3, 4});
    check(out, "add/mul/scale", {&a, &b},
          [](Tape<double>&, std::vector<Var<double>>& v) {
            return scale(add(mul(v[0], v[1]), v[0]), 0.7);
          },
          n);
  }
  {
    auto a = rand_param("a", {2, 4, 4});
    auto b = rand_param("b", {3, 4, 4});
    check(out, "concat_channels", {&a, &b},
          [](Tape<double>&, std::vector<Var<double>>& v) {
            return concat_channels(v[0], v[1]);
          },
          n);
  }
  {
    auto x = rand_param("x", {3, 5, 5});
    check(out, "mean_spatial", {&x},
          [](Tape<double>&, std::vector<Var<double>>& v) { return mean_spatial(v[0]); }, n);
    auto y = rand_param("y", {1, 5, 5});
    check(out, "softmax_flat", {&y},
          [](Tape<double>&, std::vector<Var<double>>& v) { return softmax_flat(v[0]); }, n);
    auto z = rand_param("z", {3, 8});
    check(out, "softmax_levels", {&z},
          [](Tape<double>&, std::vector<Var<double>>& v) { return softmax_levels(v[0]); }, n);
    auto u = rand_param("u", {4, 5, 5});
    check(out, "softmax_channels", {&u},
          [](Tape<double>&, std::vector<Var<double>>& v) { return softmax_channels(v[0]); }, n);
    auto s = rand_param("s", {7});
    check(out, "sigmoid", {&s},
          [](Tape<double>&, std::vector<Var<double>>& v) { return sigmoid(v[0]); }, n);
  }
  {
    auto f = rand_param("f", {4, 5, 5});
    auto o = rand_param("o", {1, 5, 5}, 0.01, 1.0);
    check(out, "weighted_spatial_sum", {&f, &o},
          [](Tape<double>&, std::vector<Var<double>>& v) {
            return weighted_spatial_sum(v[0], v[1]);
          },
          n);
  }
  {
    auto a = rand_param("a", {6});
    auto b = rand_param("b", {6});
    auto c = rand_param("c", {3, 6});
    check(out, "stack_rows/row/fuse_levels", {&a, &b, &c},
          [](Tape<double>&, std::vector<Var<double>>& v) {
            Var<double> m = stack_rows<double>({v[0], v[1], row(v[2], 1)});
            return fuse_levels(m, v[2]);
          },
          n);
  }
  {
    auto x = rand_param("x", {4, 5});
    auto g = rand_param("g", {5}, 0.5, 1.5);
    auto b = rand_param("b", {5}, -0.5, 0.5);
    BnState<double> st(5);
    check(out, "batch_norm train", {&x, &g, &b},
          [&st](Tape<double>&, std::vector<Var<double>>& v) {
            BnState<double> local = st;  // keep the stats fixed between calls
            return batch_norm_rows(v[0], v[1], v[2], local, true);
          },
          n);
    check(out, "batch_norm eval", {&x, &g, &b},
          [&st](Tape<double>&, std::vector<Var<double>>& v) {
            return batch_norm_rows(v[0], v[1], v[2], st, false);
          },
          n);
  }
  {
    auto logits = rand_param("logits", {3, 4, 4});
    Tensor<std::uint8_t> labels({4, 4});
    for (std::size_t i = 0; i < labels.size(); ++i)
      labels[i] = static_cast<std::uint8_t>(rng.below(3));
    check(out, "softmax_ce_pixels", {&logits},
          [labels](Tape<double>&, std::vector<Var<double>>& v) {
            return softmax_ce_pixels(v[0], labels);
          },
          n);
    auto p = rand_param("p", {1}, 0.1, 0.9);
    check(out, "bce_prob", {&p},
          [](Tape<double>&, std::vector<Var<double>>& v) { return bce_prob(v[0], 1.0); }, n);
    auto z = rand_param("z", {1}, -3.0, 3.0);
    check(out, "bce_logit", {&z},
          [](Tape<double>&, std::vector<Var<double>>& v) { return bce_logit(v[0], 0.0); }, n);
  }

  // full attention-pyramid forward, toy configuration (C=16, 3 levels, 24x24)
  {
    PyramidConfig cfg;
    cfg.pool_sizes = PyramidConfig::level_set(3);
    cfg.channels = 16;
    Rng init(0xab);
    SapNet<double> net(cfg, 16, 4, init);
    // Relu is nonsmooth, so a central difference that straddles a kink
    // disagrees with the (correct) one-sided analytic gradient. Jittering the
    // parameters and lifting the biases keeps pre-activations away from zero;
    // the fixed seeds were picked so that none of the sampled perturbations
    // crosses a kink at this step size.
    Rng jitter(1);
    for (auto* p : net.params()) {
      const bool is_bias =
          p->name.size() > 2 && p->name.compare(p->name.size() - 2, 2, ".b") == 0;
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        p->value[i] += jitter.uniform(-0.05, 0.05);
        if (is_bias) p->value[i] += 0.3;
      }
    }
    Rng data(38);
    Tensor<double> f0(Shape{16, 24, 24}), f1(Shape{16, 24, 24});
    for (std::size_t i = 0; i < f0.size(); ++i) f0[i] = data.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < f1.size(); ++i) f1[i] = data.uniform(-1.0, 1.0);
    Tensor<double> g0(Shape{4, 24, 24}), g1(Shape{4, 24, 24});
    for (std::size_t i = 0; i < g0.size(); ++i) g0[i] = data.uniform(0.05, 1.0);
    for (std::size_t i = 0; i < g1.size(); ++i) g1[i] = data.uniform(0.05, 1.0);

    auto run = [&](bool train, bool do_backward) {
      Tape<double> tape;
      std::vector<Var<double>> f_hats = {tape.leaf(f0), tape.leaf(f1)};
      std::vector<Var<double>> guided = {softmax_channels(tape.leaf(g0)),
                                         softmax_channels(tape.leaf(g1))};
      auto fwd = net.forward(tape, f_hats, guided, train, std::optional<double>(0.7));
      Var<double> loss = add(bce_prob(fwd.probs[0], 0.0), bce_prob(fwd.probs[1], 1.0));
      if (do_backward) tape.backward(loss);
      return static_cast<double>(loss.val()[0]);
    };
    run(true, false);  // seed the batch-norm running stats
    // The final mask conv bias shifts every softmax logit equally; its true
    // gradient is identically zero, so a finite difference on it only measures
    // roundoff. Assert near-zero directly and compare the rest.
    std::vector<Param<double>*> checked;
    Param<double>* shift_bias = nullptr;
    for (auto* p : net.params()) {
      if (p->name == "sap.mask2.b") shift_bias = p;
      else checked.push_back(p);
    }
    Rng pick(104);
    FdReport rep = finite_difference_check<double>(
        checked, [&] { return run(false, false); }, [&] { run(false, true); }, 1e-5, 1e-5,
        4, pick);
    out.note("sap_forward toy (C=16, N=3, 24x24)", rep, 1e-5);
    shift_bias->zero_grad();
    run(false, true);
    double worst_shift = 0.0;
    for (std::size_t i = 0; i < shift_bias->grad.size(); ++i)
      worst_shift = std::max(worst_shift, std::abs(static_cast<double>(shift_bias->grad[i])));
    std::ostringstream ss;
    ss << "sap.mask2.b shift invariance: |grad| <= " << worst_shift;
    if (worst_shift > 1e-9) {
      ss << "  [FAIL]";
      out.ok = false;
      out.failures.push_back("sap.mask2.b shift invariance");
    }
    out.lines.push_back(ss.str());
  }

  return out;
}

}  // namespace sap::ad

#endif  // SAP_GRADCHECK_SUITE_HPP_
