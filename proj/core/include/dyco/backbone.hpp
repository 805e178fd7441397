#pragma once

#include <cstdint>

#include "dyco/checkpoint.hpp"
#include "dyco/tensor.hpp"

namespace dyco {

// Desk-scale encoder geometry. The stem downsamples 8x, so token count
// T = L/8 and the default window M=8 tiles T exactly for L=128.
struct BackboneConfig {
  int64_t in_channels = 2;
  int64_t stem_channels[3] = {16, 32, 64};
  int64_t stem_kernels[3] = {7, 5, 3};
  int64_t embed_dim = 64;   // D_e, equals last stem channel count
  int64_t depth = 2;        // attention blocks
  int64_t heads = 4;
  int64_t window = 8;       // M
  int64_t mlp_ratio = 2;
  int64_t proj_dim = 32;    // D_z
  double ln_eps = 1e-6;
};

// Fan-in uniform weights, zero biases, unit layer-norm gains, zero relative
// position bias tables.
ParamMap init_backbone_params(const BackboneConfig& cfg, uint64_t seed);

// Parameters bound to a tape for one forward/backward pass.
struct BoundParams {
  std::map<std::string, Tensor> t;
  const Tensor& at(const std::string& name) const;
};
BoundParams bind_params(Tape& tape, const ParamMap& params, bool trainable);

// x: (B, 2, L) -> tokens (B, T, D_e). L must be divisible by 8.
// `normalize` applies the stem's final layer norm.
Tensor stem_forward(Tape& tape, const Tensor& x, const BoundParams& p, const BackboneConfig& cfg,
                    bool normalize = true);

// Fixed-window multi-head attention over non-overlapping windows of size M
// with a relative position bias table per head; M must divide T. `prefix`
// selects the block's parameters (e.g. "blk0").
Tensor window_attention(Tape& tape, const Tensor& tokens, const BoundParams& p, const std::string& prefix,
                        const BackboneConfig& cfg, int64_t window);

// One pre-norm transformer block: window attention + MLP, both residual.
Tensor encoder_block(Tape& tape, const Tensor& tokens, const BoundParams& p, const std::string& prefix,
                     const BackboneConfig& cfg);

struct EncodeOut {
  Tensor projection;  // (B, D_z), rows unit-norm
  Tensor pooled;      // (B, D_e), mean over tokens (pre-projection feature)
};

EncodeOut encode(Tape& tape, const Tensor& x, const BoundParams& p, const BackboneConfig& cfg);

// Convenience: tape-less forward, returns detached values.
EncodeOut encode_nograd(const Tensor& x, const ParamMap& params, const BackboneConfig& cfg);

// theta_k <- m * theta_k + (1 - m) * theta_q, elementwise.
void momentum_update(ParamMap& theta_k, const ParamMap& theta_q, double m);

}  // namespace dyco
