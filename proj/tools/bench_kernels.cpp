// Times the OpenMP kernels against the serial reference implementations and
// cross-checks their outputs. Run with no arguments; pass --reps N to change
// the iteration count.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>

#include "sap/kernels.hpp"
#include "sap/reference.hpp"
#include "sap/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace sap;

namespace {

Tensor<float> rand_tensor(Rng& rng, Shape shape) {
  Tensor<float> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  return worst;
}

int g_failures = 0;

void bench(const std::string& name, int reps, const std::function<Tensor<float>()>& fast,
           const std::function<Tensor<float>()>& slow) {
  using clock = std::chrono::steady_clock;
  Tensor<float> fast_out = fast();  // warm up + result for the check
  Tensor<float> slow_out = slow();
  const double diff = max_abs_diff(fast_out, slow_out);
  const bool ok = diff < 1e-4;
  if (!ok) ++g_failures;

  auto t0 = clock::now();
  for (int r = 0; r < reps; ++r) fast();
  auto t1 = clock::now();
  for (int r = 0; r < reps; ++r) slow();
  auto t2 = clock::now();

  const double fast_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
  const double slow_ms = std::chrono::duration<double, std::milli>(t2 - t1).count() / reps;
  std::printf("%-34s  %9.3f ms  %9.3f ms  %6.2fx  diff %.2e  %s\n", name.c_str(), slow_ms,
              fast_ms, slow_ms / fast_ms, diff, ok ? "ok" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 20;
  for (int i = 1; i < argc; ++i)
    if (!std::strcmp(argv[i], "--reps") && i + 1 < argc) reps = std::atoi(argv[++i]);

#ifdef _OPENMP
  std::printf("threads: %d, reps: %d\n", omp_get_max_threads(), reps);
#else
  std::printf("threads: 1 (no OpenMP), reps: %d\n", reps);
#endif
  std::printf("%-34s  %12s  %12s  %7s\n", "kernel", "serial", "parallel", "speedup");

  Rng rng(0xbe9c);

  {
    auto x = rand_tensor(rng, {3, 64, 64});
    auto w = rand_tensor(rng, {32, 3, 3, 3});
    auto b = rand_tensor(rng, {32});
    bench("conv2d 3x3 s2p1 3->32 @64x64", reps,
          [&] { return kernels::conv2d(x, w, b, 2, 1); },
          [&] { return ref::conv2d(x, w, b, 2, 1); });
  }
  {
    auto x = rand_tensor(rng, {64, 32, 32});
    auto w = rand_tensor(rng, {64, 64, 3, 3});
    auto b = rand_tensor(rng, {64});
    bench("conv2d 3x3 s1p1 64->64 @32x32", reps,
          [&] { return kernels::conv2d(x, w, b, 1, 1); },
          [&] { return ref::conv2d(x, w, b, 1, 1); });
  }
  {
    auto x = rand_tensor(rng, {64, 32, 32});
    auto w = rand_tensor(rng, {64, 64, 1, 1});
    auto b = rand_tensor(rng, {64});
    bench("conv2d 1x1 64->64 @32x32", reps,
          [&] { return kernels::conv2d(x, w, b, 1, 0); },
          [&] { return ref::conv2d(x, w, b, 1, 0); });
  }
  {
    auto x = rand_tensor(rng, {64, 32, 32});
    bench("avg_pool2d k=15 @32x32", reps, [&] { return kernels::avg_pool2d(x, 15); },
          [&] { return ref::avg_pool2d(x, 15); });
    bench("max_pool2d k=15 @32x32", reps, [&] { return kernels::max_pool2d(x, 15); },
          [&] { return ref::max_pool2d(x, 15); });
  }
  {
    auto x = rand_tensor(rng, {64, 18, 18});
    bench("resize_bilinear 18->32", reps, [&] { return kernels::resize_bilinear(x, 32, 32); },
          [&] { return ref::resize_bilinear(x, 32, 32); });
  }
  {
    auto x = rand_tensor(rng, {512});
    auto w = rand_tensor(rng, {256, 512});
    auto b = rand_tensor(rng, {256});
    bench("fully_connected 512->256", reps,
          [&] { return kernels::fully_connected(x, w, b); },
          [&] { return ref::fully_connected(x, w, b); });
  }
  {
    auto f = rand_tensor(rng, {64, 30, 30});
    auto o = rand_tensor(rng, {1, 30, 30});
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::abs(o[i]) / (30.0f * 30.0f);
    bench("attention_vector @30x30", reps,
          [&] { return kernels::attention_vector(f, o); },
          [&] { return ref::attention_vector(f, o); });
  }

  if (g_failures) {
    std::printf("%d kernel(s) disagree with the reference\n", g_failures);
    return 3;
  }
  return 0;
}
