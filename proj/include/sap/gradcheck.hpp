#ifndef SAP_GRADCHECK_HPP_
#define SAP_GRADCHECK_HPP_

#include <functional>
#include <string>
#include <vector>

#include "sap/autodiff.hpp"
#include "sap/rng.hpp"

namespace sap::ad {

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::vector<std::string> failing;  // parameter names over tolerance

  bool ok() const { return failing.empty(); }
};

/// Central finite differences against analytic gradients.
///
/// `loss_fn` must rebuild the forward pass from the current parameter values
/// and return the scalar loss (deterministic, eval-mode batch norm).
/// Checks up to `sample_per_param` elements of each parameter; the sampled
/// subset is drawn from `rng` so reports state their sample count.
template <typename S>
FdReport finite_difference_check(const std::vector<Param<S>*>& params,
                                 const std::function<double()>& loss_fn,
                                 const std::function<void()>& grad_fn, double eps, double tol,
                                 std::size_t sample_per_param, Rng& rng) {
  for (auto* p : params) p->zero_grad();
  grad_fn();

  FdReport report;
  for (auto* p : params) {
    const std::size_t n = p->value.size();
    std::vector<std::size_t> idx;
    if (n <= sample_per_param) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (std::size_t s = 0; s < sample_per_param; ++s) idx.push_back(rng.below(n));
    }
    double worst = 0.0;
    for (std::size_t i : idx) {
      const S saved = p->value[i];
      p->value[i] = saved + static_cast<S>(eps);
      const double fp = loss_fn();
      p->value[i] = saved - static_cast<S>(eps);
      const double fm = loss_fn();
      p->value[i] = saved;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = p->grad[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, std::abs(fd - an) / denom);
      ++report.checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, worst);
    if (worst > tol) report.failing.push_back(p->name);
  }
  return report;
}

}  // namespace sap::ad

#endif  // SAP_GRADCHECK_HPP_
