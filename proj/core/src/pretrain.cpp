#include "dyco/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace dyco {

using namespace ops;

std::vector<double> key_distribution(const std::vector<double>& q,
                                     const std::vector<std::vector<double>>& keys, double tau) {
  if (keys.empty()) throw std::invalid_argument("key_distribution: empty key set");
  std::vector<double> logits(keys.size());
  for (size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].size() != q.size()) throw std::invalid_argument("key_distribution: key dimension mismatch");
    double dot = 0.0;
    for (size_t j = 0; j < q.size(); ++j) dot += q[j] * keys[i][j];
    logits[i] = dot / tau;
  }
  double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  for (double& l : logits) l /= z;
  return logits;
}

double info_nce(const std::vector<double>& q, const std::vector<double>& k_pos,
                const std::vector<std::vector<double>>& k_negs, double tau) {
  auto dot = [&](const std::vector<double>& k) {
    double d = 0.0;
    for (size_t j = 0; j < q.size(); ++j) d += q[j] * k[j];
    return d / tau;
  };
  double l_pos = dot(k_pos);
  double mx = l_pos;
  std::vector<double> l_neg(k_negs.size());
  for (size_t i = 0; i < k_negs.size(); ++i) {
    l_neg[i] = dot(k_negs[i]);
    mx = std::max(mx, l_neg[i]);
  }
  double z = std::exp(l_pos - mx);
  for (double l : l_neg) z += std::exp(l - mx);
  return -(l_pos - mx - std::log(z));
}

Tensor sc_loss(const Tensor& z_anchor, const Tensor& z_adv) {
  double na = 0.0, nb = 0.0;
  for (double v : *z_anchor.data) na += v * v;
  for (double v : *z_adv.data) nb += v * v;
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("sc_loss: zero-norm input");
  return add(neg(cosine_similarity(stop_gradient(z_anchor), z_adv)), 1.0);
}

namespace {

// Per-row L2 norms of a (B, n) view of t.
std::vector<double> row_norms(const Tensor& t, int64_t rows) {
  int64_t n = t.size() / rows;
  std::vector<double> out(static_cast<size_t>(rows), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int64_t j = 0; j < n; ++j) acc += (*t.data)[static_cast<size_t>(r * n + j)] * (*t.data)[static_cast<size_t>(r * n + j)];
    out[static_cast<size_t>(r)] = std::sqrt(acc);
  }
  return out;
}

}  // namespace

VaaResult vaa_perturb(const ProjFn& proj, const Tensor& x, const Tensor& keys, double tau, double eps,
                      double xi, int64_t iters, Rng& stream) {
  int64_t B = x.shape[0];
  int64_t n = x.size() / B;

  // Reference distribution P(.|x), frozen.
  Tensor q0;
  {
    Tape t0;
    q0 = proj(t0, t0.leaf(x, false)).detached();
  }
  int64_t nk = keys.shape[0];
  Tensor p0 = Tensor::zeros({B, nk});
  {
    Tape t;
    Tensor logits = mul(matmul(t.leaf(q0, false), transpose(t.leaf(keys, false), {1, 0})), 1.0 / tau);
    p0 = softmax(logits, 1).detached();
  }

  // Random start directions, unit per sample.
  Tensor d = Tensor::zeros(x.shape);
  for (auto& v : *d.data) v = stream.normal();
  {
    auto nr = row_norms(d, B);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t j = 0; j < n; ++j) (*d.data)[static_cast<size_t>(b * n + j)] /= nr[static_cast<size_t>(b)];
  }
  Tensor d0 = d;

  int64_t fallbacks = 0;
  for (int64_t it = 0; it < iters; ++it) {
    Tensor xp = Tensor::zeros(x.shape);
    for (int64_t i = 0; i < x.size(); ++i)
      (*xp.data)[static_cast<size_t>(i)] = x[i] + xi * (*d.data)[static_cast<size_t>(i)];
    Tape tape;
    Tensor xl = tape.leaf(xp, true);
    Tensor qr = proj(tape, xl);
    Tensor logits = mul(matmul(qr, transpose(tape.leaf(keys, false), {1, 0})), 1.0 / tau);
    // KL(P0 || Pr) = const - sum P0 log Pr.
    Tensor loss = neg(sum(mul(tape.leaf(p0, false), log(softmax(logits, 1)))));
    GradMap g = tape.backward(loss);
    Tensor grad = g.at(xl);
    auto nr = row_norms(grad, B);
    for (int64_t b = 0; b < B; ++b) {
      if (nr[static_cast<size_t>(b)] == 0.0) {
        if (it == iters - 1) ++fallbacks;
        for (int64_t j = 0; j < n; ++j)
          (*d.data)[static_cast<size_t>(b * n + j)] = (*d0.data)[static_cast<size_t>(b * n + j)];
      } else {
        for (int64_t j = 0; j < n; ++j)
          (*d.data)[static_cast<size_t>(b * n + j)] =
              (*grad.data)[static_cast<size_t>(b * n + j)] / nr[static_cast<size_t>(b)];
      }
    }
  }

  VaaResult out;
  out.direction = d;
  out.fallbacks = fallbacks;
  out.x_adv = Tensor::zeros(x.shape);
  for (int64_t i = 0; i < x.size(); ++i)
    (*out.x_adv.data)[static_cast<size_t>(i)] = x[i] + eps * (*d.data)[static_cast<size_t>(i)];
  return out;
}

void adamw_step(ParamMap& params, const std::map<std::string, Tensor>& grads, AdamWState& state, double lr,
                double weight_decay, double beta1, double beta2, double eps) {
  if (state.step == 0) {
    for (const auto& [name, p] : params) {
      state.m.emplace(name, Tensor::zeros(p.shape));
      state.v.emplace(name, Tensor::zeros(p.shape));
    }
  }
  ++state.step;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    auto fresh = std::make_shared<std::vector<double>>(p.size());
    for (int64_t i = 0; i < p.size(); ++i) {
      double gi = g[i];
      (*m.data)[static_cast<size_t>(i)] = beta1 * m[i] + (1.0 - beta1) * gi;
      (*v.data)[static_cast<size_t>(i)] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      double mh = m[i] / bc1, vh = v[i] / bc2;
      (*fresh)[static_cast<size_t>(i)] = p[i] - lr * (mh / (std::sqrt(vh) + eps) + weight_decay * p[i]);
    }
    p.data = fresh;
  }
}

PretrainState init_pretrain(const BackboneConfig& bc, const PretrainConfig& pc) {
  PretrainState st;
  st.backbone = bc;
  st.cfg = pc;
  st.theta_q = init_backbone_params(bc, pc.seed);
  st.theta_k = st.theta_q;  // key encoder starts as a copy
  for (auto& [name, t] : st.theta_k) t.data = std::make_shared<std::vector<double>>(*t.data);
  return st;
}

Tensor frames_to_tensor(const std::vector<IQFrame>& frames, const std::vector<int64_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("frames_to_tensor: empty batch");
  int64_t L = frames[static_cast<size_t>(indices[0])].length();
  Tensor x = Tensor::zeros({static_cast<int64_t>(indices.size()), 2, L});
  for (size_t b = 0; b < indices.size(); ++b) {
    const IQFrame& f = frames[static_cast<size_t>(indices[b])];
    for (int64_t n = 0; n < L; ++n) {
      (*x.data)[b * 2 * L + static_cast<size_t>(n)] = f.i[static_cast<size_t>(n)];
      (*x.data)[b * 2 * L + static_cast<size_t>(L + n)] = f.q[static_cast<size_t>(n)];
    }
  }
  return x;
}

StepMetrics train_step(PretrainState& state, const std::vector<IQFrame>& frames,
                       const std::vector<int64_t>& batch) {
  const PretrainConfig& cfg = state.cfg;
  const BackboneConfig& bc = state.backbone;
  int64_t B = static_cast<int64_t>(batch.size());

  Tensor x = frames_to_tensor(frames, batch);

  // Weak view through the physical augmentation pipeline.
  std::vector<IQFrame> weak(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) {
    Rng s = Rng::stream(cfg.seed, {0x617567ULL, static_cast<uint64_t>(state.global_step), static_cast<uint64_t>(b)});
    weak[static_cast<size_t>(b)] = apply_policy(frames[static_cast<size_t>(batch[static_cast<size_t>(b)])], cfg.policy, s);
  }
  std::vector<int64_t> all(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) all[static_cast<size_t>(b)] = b;
  Tensor x_weak = frames_to_tensor(weak, all);

  // Momentum keys, no gradient.
  Tensor keys = encode_nograd(x_weak, state.theta_k, bc).projection;
  // Anchor projections of the clean input; reference for VAA and for L_SC.
  Tensor anchor = encode_nograd(x, state.theta_q, bc).projection;

  StepMetrics metrics;
  Tensor x_adv;
  if (cfg.use_vaa) {
    ProjFn proj = [&](Tape& t, const Tensor& xin) {
      BoundParams bp = bind_params(t, state.theta_q, false);
      return encode(t, xin, bp, bc).projection;
    };
    Rng vstream = Rng::stream(cfg.seed, {0x766161ULL, static_cast<uint64_t>(state.global_step)});
    VaaResult vr = vaa_perturb(proj, x, keys, cfg.tau, cfg.epsilon, cfg.xi, cfg.power_iters, vstream);
    x_adv = vr.x_adv;
    metrics.vaa_fallbacks = vr.fallbacks;
  } else {
    // Ablation: a second independent augmentation replaces the adversarial view.
    std::vector<IQFrame> aug2(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
      Rng s = Rng::stream(cfg.seed, {0x61756732ULL, static_cast<uint64_t>(state.global_step), static_cast<uint64_t>(b)});
      aug2[static_cast<size_t>(b)] = apply_policy(frames[static_cast<size_t>(batch[static_cast<size_t>(b)])], cfg.policy, s);
    }
    x_adv = frames_to_tensor(aug2, all);
  }

  // Query pass with parameter gradients.
  Tape tape;
  BoundParams bp = bind_params(tape, state.theta_q, true);
  Tensor q = encode(tape, tape.leaf(x_adv, false), bp, bc).projection;
  Tensor logits = mul(matmul(q, transpose(tape.leaf(keys, false), {1, 0})), 1.0 / cfg.tau);
  Tensor logprob = log(softmax(logits, 1));
  Tensor eye = Tensor::zeros({B, B});
  for (int64_t b = 0; b < B; ++b) (*eye.data)[static_cast<size_t>(b * B + b)] = 1.0;
  Tensor l_nce = mul(neg(sum(mul(logprob, tape.leaf(eye, false)))), 1.0 / static_cast<double>(B));
  // L_SC on unit projections: mean_b (1 - q_b . anchor_b).
  Tensor dot = sum(mul(q, tape.leaf(anchor, false)));
  Tensor l_sc = add(mul(dot, -1.0 / static_cast<double>(B)), 1.0);
  Tensor l_total = add(l_nce, mul(l_sc, cfg.lambda_sc));

  metrics.l_nce = l_nce.scalar();
  metrics.l_sc = l_sc.scalar();
  metrics.l_total = l_total.scalar();
  if (!std::isfinite(metrics.l_total)) {
    double pnorm = 0.0;
    for (const auto& [name, p] : state.theta_q)
      for (double v : *p.data) pnorm += v * v;
    throw NumericalAbort("non-finite loss at step " + std::to_string(state.global_step) +
                         " (l_nce=" + std::to_string(metrics.l_nce) + ", l_sc=" + std::to_string(metrics.l_sc) +
                         ", param_norm=" + std::to_string(std::sqrt(pnorm)) + ")");
  }

  GradMap g = tape.backward(l_total);
  std::map<std::string, Tensor> grads;
  double gn2 = 0.0;
  for (const auto& [name, pt] : bp.t) {
    Tensor gt = g.at(pt);
    for (double v : *gt.data) gn2 += v * v;
    grads.emplace(name, std::move(gt));
  }
  metrics.grad_norm = std::sqrt(gn2);
  if (cfg.clip_norm > 0.0 && metrics.grad_norm > cfg.clip_norm) {
    double scale = cfg.clip_norm / metrics.grad_norm;
    for (auto& [name, gt] : grads)
      for (auto& v : *gt.data) v *= scale;
  }

  adamw_step(state.theta_q, grads, state.opt, cfg.lr, cfg.weight_decay);
  momentum_update(state.theta_k, state.theta_q, cfg.momentum);
  ++state.global_step;
  return metrics;
}

void pretrain(PretrainState& state, const std::vector<IQFrame>& frames, std::ostream* log) {
  int64_t N = static_cast<int64_t>(frames.size());
  if (N < 2) throw std::invalid_argument("pretrain: need at least 2 frames");
  std::vector<int64_t> order(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) order[static_cast<size_t>(i)] = i;
  for (int64_t epoch = 0; epoch < state.cfg.epochs; ++epoch) {
    Rng shuffle = Rng::stream(state.cfg.seed, {0x73687566ULL, static_cast<uint64_t>(epoch)});
    for (int64_t i = N - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuffle.uniform_int(0, i))]);
    for (int64_t start = 0; start + 2 <= N; start += state.cfg.batch_size) {
      int64_t bs = std::min(state.cfg.batch_size, N - start);
      if (bs < 2) break;  // a contrastive batch needs at least one negative
      std::vector<int64_t> batch(order.begin() + start, order.begin() + start + bs);
      StepMetrics m = train_step(state, frames, batch);
      if (log) {
        nlohmann::json j{{"step", state.global_step - 1}, {"epoch", epoch},     {"l_nce", m.l_nce},
                         {"l_sc", m.l_sc},               {"l_total", m.l_total}, {"grad_norm", m.grad_norm},
                         {"vaa_fallbacks", m.vaa_fallbacks}};
        (*log) << j.dump() << "\n";
      }
    }
  }
}

}  // namespace dyco
