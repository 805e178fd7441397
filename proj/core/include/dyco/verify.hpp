#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyco/tensor.hpp"

namespace dyco {

struct VerifyReport {
  std::string check;
  double statistic = 0.0;  // measured quantity
  double target = 0.0;     // theoretical bound or expected value
  double tolerance = 0.0;
  int64_t trials = 0;
  int64_t excluded = 0;
  bool pass = false;
  uint64_t seed = 0;
  std::string detail;
  std::string to_json() const;
};

std::string verify_summary_csv(const std::vector<VerifyReport>& reports);

// Empirical P(|cos(r, v)| >= delta) for r ~ N(0, I_D) against the
// concentration bound 2 exp(-D delta^2 / 2) plus a 3-sigma binomial margin.
VerifyReport mc_orthogonality(int64_t dim, double delta, int64_t trials, uint64_t seed);

// Mean of ||r|| for r ~ N(0, sigma^2 I_D) against sigma * sqrt(D), 1%
// relative tolerance. Small D deviates (D=1 mean is sigma*sqrt(2/pi)).
VerifyReport norm_concentration(int64_t dim, double sigma, int64_t trials, uint64_t seed);

// |(1 - z.z') - 0.5 ||z - z'||^2| < 1e-12 for random unit pairs.
VerifyReport cosine_euclid_equiv(int64_t trials, uint64_t seed);

// Alignment of the one-step adversarial direction with the top eigenvector
// of the exact KL Hessian at r=0 (central differences of the gradient,
// step 1e-4, dense eigendecomposition) on tiny random encoders.
VerifyReport vaa_vs_hessian(int64_t trials, uint64_t seed);

struct SpectralResult {
  double sigma = 0.0;    // top singular value estimate
  Tensor direction;      // top right-singular vector estimate
  int64_t iters = 0;
  bool converged = false;
};

// Power iteration on J^T J via vjp(jvp(.)); stops when successive sigma
// estimates differ by < tol.
SpectralResult spectral_estimate(const DiffFn& f, const Tensor& x, int64_t max_iters = 200,
                                 double tol = 1e-8, uint64_t seed = 0);
double spectral_norm(const DiffFn& f, const Tensor& x, int64_t max_iters = 200, double tol = 1e-8,
                     uint64_t seed = 0);

// (a) fixed-window sigma_max equals the max of per-window sigma_max;
// (b) windowed sigma_max varies < 5% across lengths; (c) global-attention
// sigma_max strictly increases with length. Shared random weights.
VerifyReport window_vs_global_lipschitz(const std::vector<int64_t>& lengths, uint64_t seed);

// max_d ||f(x+eps d) - f(x)||^2 / (eps^2 sigma_max^2) over random unit
// directions plus the top singular direction, for eps in {1e-3, 1e-4};
// first-order regime puts the ratio in [0.8, 1.05].
VerifyReport sc_spectral_regularizer(int64_t trials, uint64_t seed);

// All checks at default sizes, in a fixed order.
std::vector<VerifyReport> run_all_checks(uint64_t seed);
std::vector<std::string> all_check_names();
VerifyReport run_check(const std::string& name, int64_t trials, uint64_t seed);

}  // namespace dyco
