#include "dyco/fusion.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "dyco/pretrain.hpp"

namespace dyco {

using namespace ops;

namespace {

Tensor fanin_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : *t.data) v = rng.uniform(-bound, bound);
  return t;
}

// (B, n) rows scaled by a (B, 1) column: tile the column via matmul.
Tensor scale_rows(Tape& tape, const Tensor& rows, const Tensor& col) {
  Tensor ones = tape.leaf(Tensor::full({1, rows.shape[1]}, 1.0), false);
  return mul(rows, matmul(col, ones));
}

}  // namespace

ParamMap init_fusion_params(const FusionConfig& cfg, uint64_t seed) {
  Rng rng = Rng::stream(seed, {0x66757365ULL});  // "fuse"
  ParamMap p;
  int64_t dp = cfg.d_p, df = cfg.d_f, h = cfg.lstm_hidden;
  p.emplace("s1.conv1.w", fanin_uniform({8, 4, 3, 3}, 4 * 9, rng));
  p.emplace("s1.conv1.b", Tensor::zeros({8}));
  p.emplace("s1.conv2.w", fanin_uniform({16, 8, 3, 3}, 8 * 9, rng));
  p.emplace("s1.conv2.b", Tensor::zeros({16}));
  int64_t flat = 16 * (kGafSize / 4) * (kGafSize / 4);
  p.emplace("s1.spatial.w", fanin_uniform({flat, dp}, flat, rng));
  p.emplace("s1.spatial.b", Tensor::zeros({dp}));
  for (const char* dir : {"fwd", "bwd"}) {
    p.emplace(std::string("s1.lstm.") + dir + ".w", fanin_uniform({2 + h, 4 * h}, 2 + h, rng));
    p.emplace(std::string("s1.lstm.") + dir + ".b", Tensor::zeros({4 * h}));
  }
  p.emplace("s1.temporal.w", fanin_uniform({2 * h, dp}, 2 * h, rng));
  p.emplace("s1.temporal.b", Tensor::zeros({dp}));
  p.emplace("s1.gate.w1", fanin_uniform({2 * dp, 32}, 2 * dp, rng));
  p.emplace("s1.gate.b1", Tensor::zeros({32}));
  p.emplace("s1.gate.w2", fanin_uniform({32, 2}, 32, rng));
  p.emplace("s1.gate.b2", Tensor::zeros({2}));
  p.emplace("s1.fc.w", fanin_uniform({dp, dp}, dp, rng));
  p.emplace("s1.fc.b", Tensor::zeros({dp}));
  p.emplace("s1.concat.w", fanin_uniform({2 * dp, dp}, 2 * dp, rng));
  p.emplace("s1.concat.b", Tensor::zeros({dp}));

  p.emplace("s2.tok_p.w", fanin_uniform({dp, df}, dp, rng));
  p.emplace("s2.tok_p.b", Tensor::zeros({df}));
  p.emplace("s2.tok_c.w", fanin_uniform({cfg.contrast_dim, df}, cfg.contrast_dim, rng));
  p.emplace("s2.tok_c.b", Tensor::zeros({df}));
  p.emplace("s2.type", fanin_uniform({2, df}, df, rng));
  p.emplace("s2.ln1.g", Tensor::full({df}, 1.0));
  p.emplace("s2.ln1.b", Tensor::zeros({df}));
  p.emplace("s2.qkv.w", fanin_uniform({df, 3 * df}, df, rng));
  p.emplace("s2.qkv.b", Tensor::zeros({3 * df}));
  p.emplace("s2.proj.w", fanin_uniform({df, df}, df, rng));
  p.emplace("s2.proj.b", Tensor::zeros({df}));
  p.emplace("s2.ln2.g", Tensor::full({df}, 1.0));
  p.emplace("s2.ln2.b", Tensor::zeros({df}));
  p.emplace("s2.mlp.w1", fanin_uniform({df, 2 * df}, df, rng));
  p.emplace("s2.mlp.b1", Tensor::zeros({2 * df}));
  p.emplace("s2.mlp.w2", fanin_uniform({2 * df, df}, 2 * df, rng));
  p.emplace("s2.mlp.b2", Tensor::zeros({df}));
  p.emplace("s2.concat.w", fanin_uniform({dp + cfg.contrast_dim, df}, dp + cfg.contrast_dim, rng));
  p.emplace("s2.concat.b", Tensor::zeros({df}));

  for (int64_t k = 0; k < cfg.num_heads_k; ++k) {
    std::string pre = "head" + std::to_string(k) + ".";
    p.emplace(pre + "w1", fanin_uniform({df, 32}, df, rng));
    p.emplace(pre + "b1", Tensor::zeros({32}));
    p.emplace(pre + "w2", fanin_uniform({32, cfg.num_classes}, 32, rng));
    p.emplace(pre + "b2", Tensor::zeros({cfg.num_classes}));
  }
  return p;
}

PriorInput priors_to_tensors(const std::vector<PriorFeatures>& feats) {
  if (feats.empty()) throw std::invalid_argument("priors_to_tensors: empty batch");
  int64_t B = static_cast<int64_t>(feats.size());
  int64_t S = kGafSize, L = static_cast<int64_t>(feats[0].p4.size());
  PriorInput in;
  in.gaf = Tensor::zeros({B, 4, S, S});
  in.sequence = Tensor::zeros({B, L, 2});
  for (int64_t b = 0; b < B; ++b) {
    const PriorFeatures& f = feats[static_cast<size_t>(b)];
    const std::vector<double>* chans[4] = {&f.gasf_p4, &f.gadf_p4, &f.gasf_ereg, &f.gadf_ereg};
    for (int c = 0; c < 4; ++c)
      std::copy(chans[c]->begin(), chans[c]->end(),
                in.gaf.data->begin() + (b * 4 + c) * S * S);
    for (int64_t n = 0; n < L; ++n) {
      (*in.sequence.data)[static_cast<size_t>((b * L + n) * 2)] = f.p4[static_cast<size_t>(n)];
      (*in.sequence.data)[static_cast<size_t>((b * L + n) * 2 + 1)] = f.e_reg[static_cast<size_t>(n)];
    }
  }
  return in;
}

namespace {

// Last hidden state of a single-direction LSTM over (B, L, 2).
Tensor lstm_last(Tape& tape, const Tensor& seq, const Tensor& w, const Tensor& b, int64_t hidden,
                 bool reverse) {
  int64_t B = seq.shape[0], L = seq.shape[1];
  Tensor h = tape.leaf(Tensor::zeros({B, hidden}), false);
  Tensor c = h;
  for (int64_t step = 0; step < L; ++step) {
    int64_t t = reverse ? L - 1 - step : step;
    Tensor xt = reshape(slice(seq, 1, t, 1), {B, seq.shape[2]});
    Tensor z = add(matmul(concat({xt, h}, 1), w), b);
    Tensor i = sigmoid(slice(z, 1, 0, hidden));
    Tensor f = sigmoid(slice(z, 1, hidden, hidden));
    Tensor g = tanh(slice(z, 1, 2 * hidden, hidden));
    Tensor o = sigmoid(slice(z, 1, 3 * hidden, hidden));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, tanh(c));
  }
  return h;
}

}  // namespace

Tensor stage1_prior(Tape& tape, const PriorInput& in, const BoundParams& p, const FusionConfig& cfg) {
  Tensor g = tape.leaf(in.gaf, false);
  Tensor hs = gelu(conv2d(g, p.at("s1.conv1.w"), p.at("s1.conv1.b"), 2, 1));
  hs = gelu(conv2d(hs, p.at("s1.conv2.w"), p.at("s1.conv2.b"), 2, 1));
  int64_t B = in.gaf.shape[0];
  hs = reshape(hs, {B, hs.size() / B});
  Tensor h_spatial = add(matmul(hs, p.at("s1.spatial.w")), p.at("s1.spatial.b"));

  Tensor seq = tape.leaf(in.sequence, false);
  Tensor hf = lstm_last(tape, seq, p.at("s1.lstm.fwd.w"), p.at("s1.lstm.fwd.b"), cfg.lstm_hidden, false);
  Tensor hb = lstm_last(tape, seq, p.at("s1.lstm.bwd.w"), p.at("s1.lstm.bwd.b"), cfg.lstm_hidden, true);
  Tensor h_temporal = add(matmul(concat({hf, hb}, 1), p.at("s1.temporal.w")), p.at("s1.temporal.b"));

  if (!cfg.use_gating)
    return add(matmul(concat({h_spatial, h_temporal}, 1), p.at("s1.concat.w")), p.at("s1.concat.b"));

  Tensor cat = concat({h_spatial, h_temporal}, 1);
  Tensor alpha = softmax(
      add(matmul(gelu(add(matmul(cat, p.at("s1.gate.w1")), p.at("s1.gate.b1"))), p.at("s1.gate.w2")),
          p.at("s1.gate.b2")),
      1);
  Tensor mixed = add(scale_rows(tape, h_spatial, slice(alpha, 1, 0, 1)),
                     scale_rows(tape, h_temporal, slice(alpha, 1, 1, 1)));
  return add(matmul(mixed, p.at("s1.fc.w")), p.at("s1.fc.b"));
}

Tensor stage2_fuse(Tape& tape, const Tensor& h_prior, const Tensor& h_contrast, const BoundParams& p,
                   const FusionConfig& cfg) {
  if (h_prior.shape.size() != 2 || h_prior.shape[1] != cfg.d_p)
    throw std::invalid_argument("stage2_fuse: h_prior must be (B, d_p)");
  if (h_contrast.shape.size() != 2 || h_contrast.shape[1] != cfg.contrast_dim)
    throw std::invalid_argument("stage2_fuse: h_contrast must be (B, contrast_dim)");
  if (h_prior.shape[0] != h_contrast.shape[0])
    throw std::invalid_argument("stage2_fuse: batch size mismatch");

  if (!cfg.use_attention)
    return add(matmul(concat({h_prior, h_contrast}, 1), p.at("s2.concat.w")), p.at("s2.concat.b"));

  int64_t B = h_prior.shape[0], df = cfg.d_f, H = cfg.heads, dh = df / H;
  const Tensor& type = p.at("s2.type");
  Tensor tp = add(add(matmul(h_prior, p.at("s2.tok_p.w")), p.at("s2.tok_p.b")),
                  reshape(slice(type, 0, 0, 1), {df}));
  Tensor tc = add(add(matmul(h_contrast, p.at("s2.tok_c.w")), p.at("s2.tok_c.b")),
                  reshape(slice(type, 0, 1, 1), {df}));
  Tensor x = concat({reshape(tp, {B, 1, df}), reshape(tc, {B, 1, df})}, 1);

  Tensor xn = layer_norm(x, p.at("s2.ln1.g"), p.at("s2.ln1.b"), cfg.ln_eps);
  Tensor qkv = add(matmul(xn, p.at("s2.qkv.w")), p.at("s2.qkv.b"));
  auto heads = [&](const Tensor& t) {
    return transpose(reshape(t, {B, 2, H, dh}), {0, 2, 1, 3});
  };
  Tensor q = heads(slice(qkv, 2, 0, df));
  Tensor k = heads(slice(qkv, 2, df, df));
  Tensor v = heads(slice(qkv, 2, 2 * df, df));
  Tensor attn = softmax(mul(matmul(q, transpose(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(dh))), 3);
  Tensor out = reshape(transpose(matmul(attn, v), {0, 2, 1, 3}), {B, 2, df});
  x = add(x, add(matmul(out, p.at("s2.proj.w")), p.at("s2.proj.b")));

  Tensor xn2 = layer_norm(x, p.at("s2.ln2.g"), p.at("s2.ln2.b"), cfg.ln_eps);
  Tensor mlp = add(matmul(gelu(add(matmul(xn2, p.at("s2.mlp.w1")), p.at("s2.mlp.b1"))), p.at("s2.mlp.w2")),
                   p.at("s2.mlp.b2"));
  x = add(x, mlp);
  return mean(x, 1);
}

Tensor ensemble_predict(Tape& tape, const Tensor& h_fused, const BoundParams& p, const FusionConfig& cfg) {
  Tensor acc;
  for (int64_t k = 0; k < cfg.num_heads_k; ++k) {
    std::string pre = "head" + std::to_string(k) + ".";
    Tensor logits = add(
        matmul(gelu(add(matmul(h_fused, p.at(pre + "w1")), p.at(pre + "b1"))), p.at(pre + "w2")),
        p.at(pre + "b2"));
    Tensor pk = softmax(logits, 1);
    Tensor sq = mul(pk, pk);
    acc = (k == 0) ? sq : add(acc, sq);
  }
  Tensor norm = sum(acc, 1);  // (B)
  return transpose(div(transpose(acc, {1, 0}), norm), {1, 0});
}

Tensor fusion_forward(Tape& tape, const PriorInput& in, const Tensor& h_contrast, const BoundParams& p,
                      const FusionConfig& cfg) {
  Tensor h_prior = stage1_prior(tape, in, p, cfg);
  Tensor h_fused = stage2_fuse(tape, h_prior, h_contrast, p, cfg);
  return ensemble_predict(tape, h_fused, p, cfg);
}

Tensor contrast_features(const std::vector<IQFrame>& frames, const std::vector<int64_t>& indices,
                         const ParamMap& backbone_params, const BackboneConfig& bc, bool from_projection) {
  Tensor x = frames_to_tensor(frames, indices);
  EncodeOut out = encode_nograd(x, backbone_params, bc);
  return from_projection ? out.projection : out.pooled;
}

FinetuneResult finetune_fewshot(const std::vector<IQFrame>& frames, const std::vector<int64_t>& support,
                                const ParamMap& backbone_params, const BackboneConfig& bc,
                                const FusionConfig& fc, const FinetuneConfig& ft) {
  if (support.empty()) throw std::invalid_argument("finetune_fewshot: empty support set");
  std::set<uint16_t> seen;
  for (int64_t idx : support) seen.insert(frames[static_cast<size_t>(idx)].label);
  for (int64_t c = 0; c < fc.num_classes; ++c)
    if (!seen.count(static_cast<uint16_t>(c)))
      throw std::invalid_argument("finetune_fewshot: class " + std::to_string(c) + " has no support frames");

  int64_t B = static_cast<int64_t>(support.size());
  std::vector<PriorFeatures> feats(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b)
    feats[static_cast<size_t>(b)] = extract_priors(frames[static_cast<size_t>(support[static_cast<size_t>(b)])]);
  PriorInput in = priors_to_tensors(feats);
  Tensor hc = contrast_features(frames, support, backbone_params, bc, ft.contrast_from_projection);

  Tensor onehot = Tensor::zeros({B, fc.num_classes});
  for (int64_t b = 0; b < B; ++b) {
    uint16_t lbl = frames[static_cast<size_t>(support[static_cast<size_t>(b)])].label;
    (*onehot.data)[static_cast<size_t>(b * fc.num_classes + lbl)] = 1.0;
  }

  FinetuneResult res;
  res.params = init_fusion_params(fc, ft.seed);
  AdamWState opt;
  for (int64_t step = 0; step < ft.steps; ++step) {
    Tape tape;
    BoundParams bp = bind_params(tape, res.params, true);
    Tensor y = fusion_forward(tape, in, tape.leaf(hc, false), bp, fc);
    Tensor loss = mul(neg(sum(mul(tape.leaf(onehot, false), log(add(y, 1e-12))))),
                      1.0 / static_cast<double>(B));
    res.loss_curve.push_back(loss.scalar());
    GradMap g = tape.backward(loss);
    std::map<std::string, Tensor> grads;
    for (const auto& [name, pt] : bp.t) grads.emplace(name, g.at(pt));
    adamw_step(res.params, grads, opt, ft.lr, ft.weight_decay);
  }
  return res;
}

}  // namespace dyco
