#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace dyco {

// Counter-based deterministic generator built on the SplitMix64 output
// function: output(n) = mix64(key + n * 0x9E3779B97F4A7C15). Streams are
// derived by hashing a (seed, path...) tuple, so per-frame / per-trial
// streams are independent and reproducible across platforms.
class Rng {
 public:
  explicit Rng(uint64_t key) : key_(key) {}

  static uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Derive an independent stream from a seed and a path of sub-stream ids.
  static Rng stream(uint64_t seed, std::initializer_list<uint64_t> path) {
    uint64_t k = mix64(seed);
    for (uint64_t id : path) k = mix64(k ^ mix64(id + 0x632BE59BD9B4E019ULL));
    return Rng(k);
  }

  uint64_t next_u64() { return mix64(key_ + counter_++ * 0x9E3779B97F4A7C15ULL); }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Standard normal via Box-Muller (pair cached).
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace dyco
