#pragma once

#include <map>
#include <string>
#include <vector>

#include "dyco/backbone.hpp"
#include "dyco/checkpoint.hpp"
#include "dyco/priors.hpp"
#include "dyco/signal.hpp"
#include "dyco/tensor.hpp"

namespace dyco {

struct FusionConfig {
  int64_t num_classes = 8;
  int64_t d_p = 64;        // prior feature width
  int64_t d_f = 64;        // fused token width
  int64_t lstm_hidden = 32;  // per direction
  int64_t heads = 2;
  int64_t num_heads_k = 3;   // ensemble size
  int64_t contrast_dim = 64;  // pooled backbone feature width
  bool use_gating = true;     // false: plain concat + linear in stage 1
  bool use_attention = true;  // false: plain concat + linear in stage 2
  double ln_eps = 1e-6;
};

ParamMap init_fusion_params(const FusionConfig& cfg, uint64_t seed);

// Fixed per-frame inputs to the trainable fusion stack.
struct PriorInput {
  Tensor gaf;       // (B, 4, S, S)
  Tensor sequence;  // (B, L, 2) stacked [P4; E_reg]
};

PriorInput priors_to_tensors(const std::vector<PriorFeatures>& feats);

// Stage 1: gated fusion of the spatial (GAF CNN) and temporal (Bi-LSTM)
// streams -> (B, d_p).
Tensor stage1_prior(Tape& tape, const PriorInput& in, const BoundParams& p, const FusionConfig& cfg);

// Stage 2: two typed tokens through one self-attention block, mean-pooled
// -> (B, d_f).
Tensor stage2_fuse(Tape& tape, const Tensor& h_prior, const Tensor& h_contrast, const BoundParams& p,
                   const FusionConfig& cfg);

// Confidence-weighted ensemble: y = Normalize(sum_k softmax(head_k(h))^2).
Tensor ensemble_predict(Tape& tape, const Tensor& h_fused, const BoundParams& p, const FusionConfig& cfg);

// Full classifier forward over precomputed priors and contrast features.
Tensor fusion_forward(Tape& tape, const PriorInput& in, const Tensor& h_contrast, const BoundParams& p,
                      const FusionConfig& cfg);

struct FinetuneConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  int64_t steps = 100;
  uint64_t seed = 0;
  bool contrast_from_projection = false;  // h_contrast = projection z instead of pooled feature
};

struct FinetuneResult {
  ParamMap params;
  std::vector<double> loss_curve;
};

// Extract the frozen-backbone contrast features (B, contrast_dim) for frames.
Tensor contrast_features(const std::vector<IQFrame>& frames, const std::vector<int64_t>& indices,
                         const ParamMap& backbone_params, const BackboneConfig& bc, bool from_projection);

// Full-batch cross-entropy fine-tuning of the fusion stack; the backbone
// stays untouched. Every class in `labels` must appear at least once.
FinetuneResult finetune_fewshot(const std::vector<IQFrame>& frames, const std::vector<int64_t>& support,
                                const ParamMap& backbone_params, const BackboneConfig& bc,
                                const FusionConfig& fc, const FinetuneConfig& ft);

}  // namespace dyco
