#pragma once

#include <vector>

#include "dyco/signal.hpp"

namespace dyco {

constexpr double kPriorEps = 1e-8;
constexpr int64_t kGafSize = 32;  // PAA target length for GAF matrices

struct PriorFeatures {
  std::vector<double> p4;     // length L, in [0,1]
  std::vector<double> e_reg;  // length L
  std::vector<double> gasf_p4, gadf_p4;      // kGafSize^2, row-major
  std::vector<double> gasf_ereg, gadf_ereg;  // kGafSize^2, row-major
};

// Normalized magnitude spectrum of the fourth-power signal:
// P4[k] = |DFT(x^4)[k]| / (max_k |DFT(x^4)[k]| + eps).
std::vector<double> cycle_spectrum_p4(const IQFrame& frame);

// PSD-regularized envelope: instantaneous amplitude divided by the peak PSD
// of its zero-centered max-abs-normalized form, then max-abs normalized.
std::vector<double> regularized_envelope(const IQFrame& frame);

// Piecewise aggregate approximation; S must divide the series length.
std::vector<double> downsample_paa(const std::vector<double>& series, int64_t s);

struct GafPair {
  std::vector<double> gasf;  // S x S, cos(phi_i + phi_j)
  std::vector<double> gadf;  // S x S, sin(phi_i - phi_j)
};

// Min-max rescales the series to [-1,1] (constant series maps to all zeros),
// then builds the polar-angle sum/difference fields.
GafPair gaf(const std::vector<double>& series);

// Full per-frame bundle used by the fusion module.
PriorFeatures extract_priors(const IQFrame& frame);

}  // namespace dyco
