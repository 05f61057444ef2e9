#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace laneseq {

// Deterministic RNG wrapper. All distributions are hand-rolled on top of the
// raw 64-bit stream so results do not depend on the standard library's
// (implementation-defined) distribution algorithms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  // Derives an independent substream keyed by (seed, ids...). Used to give
  // every (epoch, example, format, ...) its own stream so that parallel
  // scheduling cannot change what gets drawn.
  static Rng stream(uint64_t seed, std::initializer_list<uint64_t> ids) {
    uint64_t h = mix(seed ^ 0x6a09e667f3bcc909ull);
    for (uint64_t id : ids) h = mix(h ^ mix(id + 0xbb67ae8584caa73bull));
    return Rng(h);
  }

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, unbiased.
  int uniform_int(int n) {
    if (n <= 1) return 0;
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return static_cast<int>(x % un);
  }

  // Standard normal via Box-Muller (pair-cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Normal(0, sigma) truncated to |x| <= 2*sigma, by resampling.
  double trunc_normal(double sigma) {
    double z = normal();
    while (std::fabs(z) > 2.0) z = normal();
    return z * sigma;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      const int j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

 private:
  static uint64_t mix(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace laneseq
