#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dyco/augment.hpp"
#include "dyco/backbone.hpp"
#include "dyco/signal.hpp"

namespace dyco {

struct PretrainConfig {
  double epsilon = 0.3;     // VAA radius
  double xi = 1e-6;         // power-iteration probe step
  double lambda_sc = 0.6;
  double tau = 0.2;
  double momentum = 0.99;
  int64_t power_iters = 1;  // I_iter
  int64_t epochs = 50;
  int64_t batch_size = 64;
  double lr = 3e-4;
  double weight_decay = 0.01;
  double clip_norm = 5.0;
  uint64_t seed = 0;
  bool use_vaa = true;      // false: second augmented view replaces x_adv (ablation)
  AugmentPolicy policy;
};

// Training aborted on a non-finite loss; carries the diagnostic dump.
struct NumericalAbort : std::runtime_error {
  explicit NumericalAbort(const std::string& what) : std::runtime_error(what) {}
};

// P(i) = exp(q.k_i/tau) / sum_j exp(q.k_j/tau).
std::vector<double> key_distribution(const std::vector<double>& q,
                                     const std::vector<std::vector<double>>& keys, double tau);

// -log( exp(l_pos/tau) / (exp(l_pos/tau) + sum exp(l_neg/tau)) ).
double info_nce(const std::vector<double>& q, const std::vector<double>& k_pos,
                const std::vector<std::vector<double>>& k_negs, double tau);

// 1 - cos(sg(z_anchor), z_adv); gradient flows only into z_adv's graph.
Tensor sc_loss(const Tensor& z_anchor, const Tensor& z_adv);

// Batched encoder head: maps (B, ...) inputs to (B, D_z) unit-norm rows.
using ProjFn = std::function<Tensor(Tape&, const Tensor&)>;

struct VaaResult {
  Tensor x_adv;        // x + epsilon * d, per-sample unit directions
  Tensor direction;    // (B, input_dims...) unit rows
  int64_t fallbacks = 0;  // samples that hit a flat point and kept d0
};

// One (or more) power-iteration steps on the KL Hessian via the gradient at
// the probe point r = xi * d; keys and parameters stay frozen.
VaaResult vaa_perturb(const ProjFn& proj, const Tensor& x, const Tensor& keys, double tau, double eps,
                      double xi, int64_t iters, Rng& stream);

struct AdamWState {
  ParamMap m, v;
  int64_t step = 0;
};

// Decoupled-weight-decay adaptive moment step on `params` in place.
void adamw_step(ParamMap& params, const std::map<std::string, Tensor>& grads, AdamWState& state, double lr,
                double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct PretrainState {
  BackboneConfig backbone;
  PretrainConfig cfg;
  ParamMap theta_q, theta_k;
  AdamWState opt;
  int64_t global_step = 0;
};

PretrainState init_pretrain(const BackboneConfig& bc, const PretrainConfig& pc);

struct StepMetrics {
  double l_nce = 0.0, l_sc = 0.0, l_total = 0.0, grad_norm = 0.0;
  int64_t vaa_fallbacks = 0;
};

// Pack frames (all same length) into a (B, 2, L) tensor.
Tensor frames_to_tensor(const std::vector<IQFrame>& frames, const std::vector<int64_t>& indices);

// One Algorithm-1 step on a minibatch of frame indices.
StepMetrics train_step(PretrainState& state, const std::vector<IQFrame>& frames,
                       const std::vector<int64_t>& batch);

// Full loop; `log` (optional) receives one JSON line per step.
void pretrain(PretrainState& state, const std::vector<IQFrame>& frames, std::ostream* log);

}  // namespace dyco
