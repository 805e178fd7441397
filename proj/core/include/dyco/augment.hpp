#pragma once

#include <string>

#include "dyco/rng.hpp"
#include "dyco/signal.hpp"

namespace dyco {

enum class FlipMode { I, Q, Both };

// Parameter ranges for the physical augmentation pipeline. Each transform is
// gated by an independent Bernoulli(p) draw and applied in the fixed order
// rotate -> flip -> shift -> awgn -> cfo -> scale.
struct AugmentPolicy {
  double p_rotate = 0.5;
  double p_flip = 0.5;
  double p_shift = 0.5;
  double p_awgn = 0.5;
  double p_cfo = 0.5;
  double p_scale = 0.5;
  double theta_min = 0.0, theta_max = 3.14159265358979323846;  // rotation angle
  double sigma_min = 0.01, sigma_max = 0.04;                   // total complex noise power sigma^2
  double cfo_min = -1.0, cfo_max = 1.0;                        // cycles per frame
  double scale_min = 0.8, scale_max = 1.2;

  std::string to_json() const;
  static AugmentPolicy from_json(const std::string& text);
};

IQFrame rotate(const IQFrame& f, double theta);
IQFrame iq_flip(const IQFrame& f, FlipMode mode);
IQFrame time_shift(const IQFrame& f, int64_t delta);  // cyclic, s'[n] = s[(n-delta) mod L]
// Complex AWGN with total power sigma^2, split evenly across I and Q.
IQFrame awgn(const IQFrame& f, double sigma, Rng& stream);
IQFrame freq_offset(const IQFrame& f, double df);
IQFrame amp_scale(const IQFrame& f, double alpha);

IQFrame apply_policy(const IQFrame& f, const AugmentPolicy& policy, Rng& stream);

}  // namespace dyco
