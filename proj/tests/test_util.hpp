#ifndef SAP_TESTS_TEST_UTIL_HPP_
#define SAP_TESTS_TEST_UTIL_HPP_

#include <cmath>

#include "sap/rng.hpp"
#include "sap/tensor.hpp"

namespace sap::test {

template <typename S = double>
Tensor<S> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

inline double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-12});
  return std::abs(got - want) / denom;
}

}  // namespace sap::test

#endif  // SAP_TESTS_TEST_UTIL_HPP_
