#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyco/fusion.hpp"
#include "dyco/signal.hpp"

namespace dyco {

struct FewShotSplit {
  std::vector<int64_t> support, query;
  int64_t n_shots = 0;
  uint64_t seed = 0;
};

// N support frames per (class, snr) cell, sampled without replacement;
// everything else becomes query. Every cell must hold at least N+1 frames.
FewShotSplit make_split(const std::vector<IQFrame>& frames, int64_t n_shots, uint64_t seed);

struct ClassifierModel {
  ParamMap backbone_params;
  BackboneConfig backbone_cfg;
  ParamMap fusion_params;
  FusionConfig fusion_cfg;
  bool contrast_from_projection = false;
};

// Class probabilities (B, C) for the indexed frames, no gradients.
Tensor predict_probs(const ClassifierModel& model, const std::vector<IQFrame>& frames,
                     const std::vector<int64_t>& indices);

struct EvalReport {
  double accuracy = 0.0;
  std::vector<std::pair<int16_t, double>> per_snr;  // ascending snr_db
  std::vector<int64_t> confusion;                   // C x C row-major, rows = true class
  int64_t num_classes = 0;
  int64_t n_shots = 0;
  uint64_t seed = 0;
  std::string to_json() const;
  std::string confusion_csv() const;
};

// Argmax of predict_probs per query frame; ties go to the lowest class id.
EvalReport evaluate(const ClassifierModel& model, const std::vector<IQFrame>& frames,
                    const FewShotSplit& split);

// One (snr_db, accuracy) point per SNR present, ascending.
std::vector<std::pair<int16_t, double>> snr_curve(const EvalReport& report);
std::string snr_curve_csv(const EvalReport& report);

}  // namespace dyco
