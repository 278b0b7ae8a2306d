#ifndef SAP_RNG_HPP_
#define SAP_RNG_HPP_

#include <cmath>
#include <cstdint>

namespace sap {

/// splitmix64 counter generator. One u64 of state, so checkpoints can carry
/// the exact RNG position and runs replay bit-for-bit on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  /// standard normal (Box-Muller; draws two uniforms per call)
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

  /// independent stream for (seed, tag) pairs, e.g. per-sample generators
  static Rng derive(std::uint64_t seed, std::uint64_t tag) {
    Rng mix(seed ^ (tag * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
    mix.next_u64();
    return Rng(mix.next_u64());
  }

 private:
  std::uint64_t state_;
};

}  // namespace sap

#endif  // SAP_RNG_HPP_
