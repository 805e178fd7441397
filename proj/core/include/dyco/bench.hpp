#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dyco {

struct BenchReport {
  std::string kernel;
  int64_t size = 0;
  int64_t reps = 0;
  double median_us = 0.0;
  double p95_us = 0.0;
};

// Wall-time one kernel {fft, conv1d, window_attention, spectral_norm} at the
// given problem size, `reps` timed repetitions.
BenchReport run_bench(const std::string& kernel, int64_t size, int64_t reps, uint64_t seed);

std::vector<std::string> bench_kernel_names();
std::string bench_csv(const std::vector<BenchReport>& reports);

// Rebuild the golden fixture files under `dir`; every fixture records its
// seed and the oracle procedure that produced it. Throws if an existing
// fixture disagrees beyond its tolerance.
void regen_fixtures(const std::string& dir, uint64_t seed);

}  // namespace dyco
