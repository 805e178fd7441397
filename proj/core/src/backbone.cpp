#include "dyco/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "dyco/rng.hpp"

namespace dyco {

using namespace ops;

namespace {

Tensor fanin_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(shape);
  for (auto& v : *t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

ParamMap init_backbone_params(const BackboneConfig& cfg, uint64_t seed) {
  Rng rng = Rng::stream(seed, {0x6261636bULL});  // "back"
  ParamMap p;
  int64_t ci = cfg.in_channels;
  for (int i = 0; i < 3; ++i) {
    int64_t co = cfg.stem_channels[i], k = cfg.stem_kernels[i];
    p.emplace("stem.c" + std::to_string(i) + ".w", fanin_uniform({co, ci, k}, ci * k, rng));
    p.emplace("stem.c" + std::to_string(i) + ".b", Tensor::zeros({co}));
    ci = co;
  }
  int64_t d = cfg.embed_dim;
  p.emplace("stem.ln.g", Tensor::full({d}, 1.0));
  p.emplace("stem.ln.b", Tensor::zeros({d}));
  for (int64_t b = 0; b < cfg.depth; ++b) {
    std::string pre = "blk" + std::to_string(b) + ".";
    p.emplace(pre + "ln1.g", Tensor::full({d}, 1.0));
    p.emplace(pre + "ln1.b", Tensor::zeros({d}));
    p.emplace(pre + "qkv.w", fanin_uniform({d, 3 * d}, d, rng));
    p.emplace(pre + "qkv.b", Tensor::zeros({3 * d}));
    p.emplace(pre + "bias_table", Tensor::zeros({cfg.heads, 2 * cfg.window - 1}));
    p.emplace(pre + "proj.w", fanin_uniform({d, d}, d, rng));
    p.emplace(pre + "proj.b", Tensor::zeros({d}));
    p.emplace(pre + "ln2.g", Tensor::full({d}, 1.0));
    p.emplace(pre + "ln2.b", Tensor::zeros({d}));
    p.emplace(pre + "mlp.w1", fanin_uniform({d, cfg.mlp_ratio * d}, d, rng));
    p.emplace(pre + "mlp.b1", Tensor::zeros({cfg.mlp_ratio * d}));
    p.emplace(pre + "mlp.w2", fanin_uniform({cfg.mlp_ratio * d, d}, cfg.mlp_ratio * d, rng));
    p.emplace(pre + "mlp.b2", Tensor::zeros({d}));
  }
  p.emplace("proj.w1", fanin_uniform({d, d}, d, rng));
  p.emplace("proj.b1", Tensor::zeros({d}));
  p.emplace("proj.w2", fanin_uniform({d, cfg.proj_dim}, d, rng));
  p.emplace("proj.b2", Tensor::zeros({cfg.proj_dim}));
  return p;
}

const Tensor& BoundParams::at(const std::string& name) const {
  auto it = t.find(name);
  if (it == t.end()) throw std::invalid_argument("missing parameter \"" + name + "\"");
  return it->second;
}

BoundParams bind_params(Tape& tape, const ParamMap& params, bool trainable) {
  BoundParams bp;
  for (const auto& [name, value] : params) bp.t.emplace(name, tape.leaf(value, trainable));
  return bp;
}

Tensor stem_forward(Tape& tape, const Tensor& x, const BoundParams& p, const BackboneConfig& cfg,
                    bool normalize) {
  (void)tape;
  if (x.shape.size() != 3 || x.shape[1] != cfg.in_channels || x.shape[2] % 8 != 0)
    throw std::invalid_argument("stem_forward: expected (B," + std::to_string(cfg.in_channels) +
                                ",L) with L divisible by 8, got " + shape_str(x.shape));
  Tensor h = x;
  for (int i = 0; i < 3; ++i) {
    std::string pre = "stem.c" + std::to_string(i);
    int64_t pad = cfg.stem_kernels[i] / 2;  // "same" at stride 2
    h = conv1d(h, p.at(pre + ".w"), p.at(pre + ".b"), 2, pad);
    h = gelu(h);
  }
  // (B, D, T) -> (B, T, D) tokens.
  h = transpose(h, {0, 2, 1});
  if (normalize) h = layer_norm(h, p.at("stem.ln.g"), p.at("stem.ln.b"), cfg.ln_eps);
  return h;
}

Tensor window_attention(Tape& tape, const Tensor& tokens, const BoundParams& p, const std::string& prefix,
                        const BackboneConfig& cfg, int64_t window) {
  (void)tape;
  if (tokens.shape.size() != 3)
    throw std::invalid_argument("window_attention: expected (B,T,D), got " + shape_str(tokens.shape));
  int64_t B = tokens.shape[0], T = tokens.shape[1], D = tokens.shape[2];
  int64_t M = window, H = cfg.heads, dh = D / H;
  if (T % M != 0)
    throw std::invalid_argument("window_attention: window " + std::to_string(M) + " does not divide T=" +
                                std::to_string(T));
  int64_t NW = T / M;

  Tensor h = reshape(tokens, {B * NW, M, D});
  Tensor qkv = add(matmul(h, p.at(prefix + ".qkv.w")), p.at(prefix + ".qkv.b"));
  auto split_heads = [&](Tensor t) {
    t = reshape(t, {B * NW, M, H, dh});
    return transpose(t, {0, 2, 1, 3});  // (B*NW, H, M, dh)
  };
  Tensor q = split_heads(slice(qkv, 2, 0, D));
  Tensor k = split_heads(slice(qkv, 2, D, D));
  Tensor v = split_heads(slice(qkv, 2, 2 * D, D));

  Tensor logits = mul(matmul(q, transpose(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(dh)));

  // Relative position bias B[h][i][j] = table[h][i-j+M-1], materialized via a
  // constant 0/1 selector so gradients reach the table.
  const Tensor& table = p.at(prefix + ".bias_table");
  int64_t tw = table.shape[1];  // 2M'-1 for the table's own window M'
  if (tw == 2 * M - 1) {
    Tensor selector = Tensor::zeros({tw, M * M});
    for (int64_t i = 0; i < M; ++i)
      for (int64_t j = 0; j < M; ++j)
        (*selector.data)[static_cast<size_t>((i - j + M - 1) * M * M + i * M + j)] = 1.0;
    Tensor bias = reshape(matmul(table, selector), {H, M, M});
    logits = add(reshape(logits, {B * NW, H, M, M}), bias);
  }
  Tensor attn = softmax(logits, 3);
  Tensor out = matmul(attn, v);                     // (B*NW, H, M, dh)
  out = reshape(transpose(out, {0, 2, 1, 3}), {B * NW, M, D});
  out = add(matmul(out, p.at(prefix + ".proj.w")), p.at(prefix + ".proj.b"));
  return reshape(out, {B, T, D});
}

Tensor encoder_block(Tape& tape, const Tensor& tokens, const BoundParams& p, const std::string& prefix,
                     const BackboneConfig& cfg) {
  Tensor h = layer_norm(tokens, p.at(prefix + ".ln1.g"), p.at(prefix + ".ln1.b"), cfg.ln_eps);
  Tensor x1 = add(tokens, window_attention(tape, h, p, prefix, cfg, cfg.window));
  Tensor h2 = layer_norm(x1, p.at(prefix + ".ln2.g"), p.at(prefix + ".ln2.b"), cfg.ln_eps);
  Tensor m = add(matmul(h2, p.at(prefix + ".mlp.w1")), p.at(prefix + ".mlp.b1"));
  m = gelu(m);
  m = add(matmul(m, p.at(prefix + ".mlp.w2")), p.at(prefix + ".mlp.b2"));
  return add(x1, m);
}

EncodeOut encode(Tape& tape, const Tensor& x, const BoundParams& p, const BackboneConfig& cfg) {
  Tensor tokens = stem_forward(tape, x, p, cfg);
  for (int64_t b = 0; b < cfg.depth; ++b)
    tokens = encoder_block(tape, tokens, p, "blk" + std::to_string(b), cfg);
  Tensor pooled = mean(tokens, 1);  // (B, D)
  Tensor z = add(matmul(pooled, p.at("proj.w1")), p.at("proj.b1"));
  z = gelu(z);
  z = add(matmul(z, p.at("proj.w2")), p.at("proj.b2"));
  // Row-wise L2 normalization onto the unit hypersphere.
  Tensor n = ops::sqrt(sum(mul(z, z), 1));                      // (B)
  Tensor zn = transpose(div(transpose(z, {1, 0}), n), {1, 0});  // (B, D_z)
  EncodeOut out;
  out.projection = zn;
  out.pooled = pooled;
  return out;
}

EncodeOut encode_nograd(const Tensor& x, const ParamMap& params, const BackboneConfig& cfg) {
  Tape tape;
  BoundParams bp = bind_params(tape, params, false);
  Tensor xl = tape.leaf(x, false);
  EncodeOut out = encode(tape, xl, bp, cfg);
  out.projection = out.projection.detached();
  out.pooled = out.pooled.detached();
  return out;
}

void momentum_update(ParamMap& theta_k, const ParamMap& theta_q, double m) {
  for (auto& [name, tk] : theta_k) {
    auto it = theta_q.find(name);
    if (it == theta_q.end() || it->second.size() != tk.size())
      throw std::invalid_argument("momentum_update: parameter mismatch on \"" + name + "\"");
    auto fresh = std::make_shared<std::vector<double>>(tk.size());
    for (int64_t i = 0; i < tk.size(); ++i)
      (*fresh)[static_cast<size_t>(i)] = m * tk[i] + (1.0 - m) * it->second[i];
    tk.data = fresh;
  }
}

}  // namespace dyco
