#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace treegp {

// Deterministic random stream. Wraps std::mt19937_64 (whose raw output is
// pinned by the standard) with hand-rolled variate transforms, so sequences
// do not depend on standard-library distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : base_seed_(seed), engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Log-uniform on [lo, hi]; requires 0 < lo <= hi.
  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  // Standard normal via Box-Muller; variates are produced in pairs.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  // Unbiased uniform integer in [0, n); n must be positive.
  uint64_t below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  // Independent derived stream; does not advance this generator.
  Rng child(uint64_t stream) const {
    return Rng(splitmix(base_seed_ ^ splitmix(stream + 0x9e3779b97f4a7c15ull)));
  }

  uint64_t base_seed() const { return base_seed_; }

 private:
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  uint64_t base_seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace treegp
