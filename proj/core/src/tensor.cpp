#include "dyco/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dyco {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape s, std::vector<double> d)
    : shape(std::move(s)), data(std::make_shared<std::vector<double>>(std::move(d))) {
  if (numel(shape) != static_cast<int64_t>(data->size()))
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match buffer size " +
                                std::to_string(data->size()));
}

double Tensor::scalar() const {
  if (size() != 1) throw std::invalid_argument("tensor: scalar() on shape " + shape_str(shape));
  return (*data)[0];
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape = shape;
  t.data = data;
  return t;
}

Tensor Tensor::zeros(Shape s) {
  int64_t n = numel(s);
  return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape s, double v) {
  int64_t n = numel(s);
  return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), v));
}

Tensor Tensor::from_scalar(double v) { return Tensor({1}, {v}); }

Tensor GradMap::at(const Tensor& t) const {
  if (t.node >= 0) {
    auto it = by_node.find(t.node);
    if (it != by_node.end()) return it->second;
  }
  return Tensor::zeros(t.shape);
}

Tensor Tape::leaf(const Tensor& value, bool requires_grad) {
  Tensor t = value.detached();
  if (requires_grad) {
    t.tape = this;
    t.node = record(t.shape, {}, nullptr);
  }
  return t;
}

int64_t Tape::record(const Shape& out_shape, std::vector<int64_t> parents, BackFn back) {
  nodes_.push_back({out_shape, std::move(parents), std::move(back)});
  return static_cast<int64_t>(nodes_.size()) - 1;
}

GradMap Tape::backward(const Tensor& root) {
  if (root.tape != this || root.node < 0) throw std::invalid_argument("backward: root is not on this tape");
  if (root.size() != 1) throw std::invalid_argument("backward: root must be scalar-shaped, got " + shape_str(root.shape));

  int64_t n = static_cast<int64_t>(nodes_.size());
  std::vector<char> reachable(static_cast<size_t>(n), 0);
  reachable[static_cast<size_t>(root.node)] = 1;
  for (int64_t i = root.node; i >= 0; --i) {
    if (!reachable[static_cast<size_t>(i)]) continue;
    for (int64_t p : nodes_[static_cast<size_t>(i)].parents) reachable[static_cast<size_t>(p)] = 1;
  }

  std::vector<std::vector<double>> grads(static_cast<size_t>(n));
  for (int64_t i = 0; i <= root.node; ++i)
    if (reachable[static_cast<size_t>(i)])
      grads[static_cast<size_t>(i)].assign(static_cast<size_t>(numel(nodes_[static_cast<size_t>(i)].shape)), 0.0);
  grads[static_cast<size_t>(root.node)][0] = 1.0;

  for (int64_t i = root.node; i >= 0; --i) {
    const Node& nd = nodes_[static_cast<size_t>(i)];
    if (!reachable[static_cast<size_t>(i)] || !nd.back) continue;
    std::vector<std::vector<double>*> pg;
    pg.reserve(nd.parents.size());
    for (int64_t p : nd.parents) pg.push_back(&grads[static_cast<size_t>(p)]);
    nd.back(grads[static_cast<size_t>(i)], pg);
  }

  GradMap out;
  for (int64_t i = 0; i <= root.node; ++i) {
    if (!reachable[static_cast<size_t>(i)]) continue;
    out.by_node.emplace(i, Tensor(nodes_[static_cast<size_t>(i)].shape, std::move(grads[static_cast<size_t>(i)])));
  }
  return out;
}

void Tape::clear() { nodes_.clear(); }

namespace ops {
namespace {

Tape* tape_of(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (t->node < 0) continue;
    if (tape && t->tape != tape) throw std::invalid_argument("op: inputs live on different tapes");
    tape = t->tape;
  }
  return tape;
}

// Record an op whose differentiable parents are a subset of the inputs.
Tensor make_result(const char* /*name*/, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs,
                   const std::function<Tape::BackFn(const std::vector<int>&)>& make_back) {
  Tensor out(std::move(shape), std::move(data));
  Tape* tape = tape_of(inputs);
  if (!tape) return out;
  std::vector<int64_t> parents;
  std::vector<int> which;  // index of each differentiable input in `inputs`
  int idx = 0;
  for (const Tensor* t : inputs) {
    if (t->node >= 0) {
      parents.push_back(t->node);
      which.push_back(idx);
    }
    ++idx;
  }
  out.tape = tape;
  out.node = tape->record(out.shape, std::move(parents), make_back(which));
  return out;
}

void check_suffix_broadcast(const char* name, const Tensor& a, const Tensor& b) {
  if (a.shape == b.shape || b.size() == 1) return;
  if (b.shape.size() <= a.shape.size() &&
      std::equal(b.shape.rbegin(), b.shape.rend(), a.shape.rbegin()) &&
      a.size() % b.size() == 0)
    return;
  throw std::invalid_argument(std::string(name) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                              shape_str(b.shape));
}

// Generic elementwise binary with suffix broadcast of b.
template <typename FwdF, typename DaF, typename DbF>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, FwdF fwd, DaF da, DbF db) {
  check_suffix_broadcast(name, a, b);
  int64_t n = a.size(), m = b.size();
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.data->data();
  const double* pb = b.data->data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(pa[i], pb[i % m]);
  auto sa = a.data;
  auto sb = b.data;
  return make_result(name, a.shape, std::move(out), {&a, &b}, [=](const std::vector<int>& which) -> Tape::BackFn {
    return [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
      const double* va = sa->data();
      const double* vb = sb->data();
      for (size_t w = 0; w < which.size(); ++w) {
        std::vector<double>& dst = *pg[w];
        if (which[w] == 0) {
          for (int64_t i = 0; i < n; ++i) dst[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * da(va[i], vb[i % m]);
        } else {
          for (int64_t i = 0; i < n; ++i) dst[static_cast<size_t>(i % m)] += g[static_cast<size_t>(i)] * db(va[i], vb[i % m]);
        }
      }
    };
  });
}

template <typename FwdF, typename GradF>
Tensor unary_op(const char* name, const Tensor& a, FwdF fwd, GradF grad_from_in_out) {
  int64_t n = a.size();
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.data->data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(pa[i]);
  auto sa = a.data;
  auto so = std::make_shared<std::vector<double>>(out);
  return make_result(name, a.shape, std::move(out), {&a}, [=](const std::vector<int>&) -> Tape::BackFn {
    return [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
      const double* va = sa->data();
      const double* vo = so->data();
      std::vector<double>& dst = *pg[0];
      for (int64_t i = 0; i < n; ++i) dst[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * grad_from_in_out(va[i], vo[i]);
    };
  });
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op("add", a, b, [](double x, double y) { return x + y; },
                   [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op("sub", a, b, [](double x, double y) { return x - y; },
                   [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op("mul", a, b, [](double x, double y) { return x * y; },
                   [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op("div", a, b, [](double x, double y) { return x / y; },
                   [](double, double y) { return 1.0 / y; },
                   [](double x, double y) { return -x / (y * y); });
}

Tensor add(const Tensor& a, double b) {
  return unary_op("adds", a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
  return unary_op("muls", a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Tensor neg(const Tensor& a) { return mul(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary_op("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return unary_op("gelu", a,
                  [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
                  [](double x, double) {
                    double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                    return phi + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
                  });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op("sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary_op("tanh", a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op("sqrt", a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape.size() < 2 || b.shape.size() < 2)
    throw std::invalid_argument("matmul: needs rank >= 2, got " + shape_str(a.shape) + " x " + shape_str(b.shape));
  int64_t k = a.shape[a.shape.size() - 1];
  int64_t n = a.shape[a.shape.size() - 2];
  int64_t kb = b.shape[b.shape.size() - 2];
  int64_t m = b.shape[b.shape.size() - 1];
  bool b_batched = b.shape.size() > 2;
  int64_t batch = a.size() / (n * k);
  if (k != kb || (b_batched && b.size() / (kb * m) != batch))
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape) + " x " + shape_str(b.shape));

  Shape out_shape(a.shape.begin(), a.shape.end() - 1);
  out_shape.push_back(m);
  std::vector<double> out(static_cast<size_t>(batch * n * m), 0.0);

  const double* pa = a.data->data();
  const double* pb = b.data->data();
  for (int64_t bt = 0; bt < batch; ++bt) {
    const double* A = pa + bt * n * k;
    const double* B = pb + (b_batched ? bt * k * m : 0);
    double* C = out.data() + bt * n * m;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t l = 0; l < k; ++l) {
        double av = A[i * k + l];
        const double* Br = B + l * m;
        double* Cr = C + i * m;
        for (int64_t j = 0; j < m; ++j) Cr[j] += av * Br[j];
      }
  }

  auto sa = a.data;
  auto sb = b.data;
  return make_result("matmul", std::move(out_shape), std::move(out), {&a, &b},
                     [=](const std::vector<int>& which) -> Tape::BackFn {
    return [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
      const double* va = sa->data();
      const double* vb = sb->data();
      for (size_t w = 0; w < which.size(); ++w) {
        std::vector<double>& dst = *pg[w];
        if (which[w] == 0) {
          // dA = G * B^T
          for (int64_t bt = 0; bt < batch; ++bt) {
            const double* G = g.data() + bt * n * m;
            const double* B = vb + (b_batched ? bt * k * m : 0);
            double* dA = dst.data() + bt * n * k;
            for (int64_t i = 0; i < n; ++i)
              for (int64_t j = 0; j < m; ++j) {
                double gv = G[i * m + j];
                const double* Bc = B + j;  // column j, stride m
                double* dAr = dA + i * k;
                for (int64_t l = 0; l < k; ++l) dAr[l] += gv * Bc[l * m];
              }
          }
        } else {
          // dB = A^T * G (summed over batch when B is unbatched)
          for (int64_t bt = 0; bt < batch; ++bt) {
            const double* G = g.data() + bt * n * m;
            const double* A = va + bt * n * k;
            double* dB = dst.data() + (b_batched ? bt * k * m : 0);
            for (int64_t i = 0; i < n; ++i)
              for (int64_t l = 0; l < k; ++l) {
                double av = A[i * k + l];
                const double* Gr = G + i * m;
                double* dBr = dB + l * m;
                for (int64_t j = 0; j < m; ++j) dBr[j] += av * Gr[j];
              }
          }
        }
      }
    };
  });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad) {
  if (x.shape.size() != 3 || w.shape.size() != 3)
    throw std::invalid_argument("conv1d: expected x (B,Cin,L), w (Cout,Cin,K), got " + shape_str(x.shape) +
                                " and " + shape_str(w.shape));
  int64_t B = x.shape[0], Ci = x.shape[1], L = x.shape[2];
  int64_t Co = w.shape[0], K = w.shape[2];
  if (w.shape[1] != Ci || bias.size() != Co)
    throw std::invalid_argument("conv1d: channel mismatch " + shape_str(x.shape) + " vs " + shape_str(w.shape));
  int64_t Lo = (L + 2 * pad - K) / stride + 1;
  if (Lo <= 0) throw std::invalid_argument("conv1d: empty output for L=" + std::to_string(L));

  std::vector<double> out(static_cast<size_t>(B * Co * Lo));
  const double* px = x.data->data();
  const double* pw = w.data->data();
  const double* pbv = bias.data->data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t t = 0; t < Lo; ++t) {
        double acc = pbv[co];
        int64_t base = t * stride - pad;
        for (int64_t ci = 0; ci < Ci; ++ci) {
          const double* xr = px + (b * Ci + ci) * L;
          const double* wr = pw + (co * Ci + ci) * K;
          for (int64_t kk = 0; kk < K; ++kk) {
            int64_t p = base + kk;
            if (p >= 0 && p < L) acc += xr[p] * wr[kk];
          }
        }
        out[static_cast<size_t>((b * Co + co) * Lo + t)] = acc;
      }

  auto sx = x.data;
  auto sw = w.data;
  return make_result("conv1d", {B, Co, Lo}, std::move(out), {&x, &w, &bias},
                     [=](const std::vector<int>& which) -> Tape::BackFn {
    return [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
      const double* vx = sx->data();
      const double* vw = sw->data();
      for (size_t wi = 0; wi < which.size(); ++wi) {
        std::vector<double>& dst = *pg[wi];
        if (which[wi] == 0) {
          for (int64_t b = 0; b < B; ++b)
            for (int64_t co = 0; co < Co; ++co)
              for (int64_t t = 0; t < Lo; ++t) {
                double gv = g[static_cast<size_t>((b * Co + co) * Lo + t)];
                int64_t base = t * stride - pad;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                  double* dxr = dst.data() + (b * Ci + ci) * L;
                  const double* wr = vw + (co * Ci + ci) * K;
                  for (int64_t kk = 0; kk < K; ++kk) {
                    int64_t p = base + kk;
                    if (p >= 0 && p < L) dxr[p] += gv * wr[kk];
                  }
                }
              }
        } else if (which[wi] == 1) {
          for (int64_t b = 0; b < B; ++b)
            for (int64_t co = 0; co < Co; ++co)
              for (int64_t t = 0; t < Lo; ++t) {
                double gv = g[static_cast<size_t>((b * Co + co) * Lo + t)];
                int64_t base = t * stride - pad;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                  const double* xr = vx + (b * Ci + ci) * L;
                  double* dwr = dst.data() + (co * Ci + ci) * K;
                  for (int64_t kk = 0; kk < K; ++kk) {
                    int64_t p = base + kk;
                    if (p >= 0 && p < L) dwr[kk] += gv * xr[p];
                  }
                }
              }
        } else {
          for (int64_t b = 0; b < B; ++b)
            for (int64_t co = 0; co < Co; ++co)
              for (int64_t t = 0; t < Lo; ++t)
                dst[static_cast<size_t>(co)] += g[static_cast<size_t>((b * Co + co) * Lo + t)];
        }
      }
    };
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad) {
  if (x.shape.size() != 4 || w.shape.size() != 4)
    throw std::invalid_argument("conv2d: expected x (B,Cin,H,W), w (Cout,Cin,Kh,Kw), got " + shape_str(x.shape) +
                                " and " + shape_str(w.shape));
  int64_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
  int64_t Co = w.shape[0], Kh = w.shape[2], Kw = w.shape[3];
  if (w.shape[1] != Ci || bias.size() != Co)
    throw std::invalid_argument("conv2d: channel mismatch " + shape_str(x.shape) + " vs " + shape_str(w.shape));
  int64_t Ho = (H + 2 * pad - Kh) / stride + 1;
  int64_t Wo = (W + 2 * pad - Kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output");

  std::vector<double> out(static_cast<size_t>(B * Co * Ho * Wo));
  const double* px = x.data->data();
  const double* pw = w.data->data();
  const double* pb = bias.data->data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          double acc = pb[co];
          int64_t bh = oh * stride - pad, bw = ow * stride - pad;
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t kh = 0; kh < Kh; ++kh) {
              int64_t ph = bh + kh;
              if (ph < 0 || ph >= H) continue;
              const double* xr = px + ((b * Ci + ci) * H + ph) * W;
              const double* wr = pw + ((co * Ci + ci) * Kh + kh) * Kw;
              for (int64_t kw = 0; kw < Kw; ++kw) {
                int64_t pwd = bw + kw;
                if (pwd >= 0 && pwd < W) acc += xr[pwd] * wr[kw];
              }
            }
          out[static_cast<size_t>(((b * Co + co) * Ho + oh) * Wo + ow)] = acc;
        }

  auto sx = x.data;
  auto sw = w.data;
  return make_result("conv2d", {B, Co, Ho, Wo}, std::move(out), {&x, &w, &bias},
                     [=](const std::vector<int>& which) -> Tape::BackFn {
    return [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
      const double* vx = sx->data();
      const double* vw = sw->data();
      for (size_t wi = 0; wi < which.size(); ++wi) {
        std::vector<double>& dst = *pg[wi];
        for (int64_t b = 0; b < B; ++b)
          for (int64_t co = 0; co < Co; ++co)
            for (int64_t oh = 0; oh < Ho; ++oh)
              for (int64_t ow = 0; ow < Wo; ++ow) {
                double gv = g[static_cast<size_t>(((b * Co + co) * Ho + oh) * Wo + ow)];
                int64_t bh = oh * stride - pad, bw = ow * stride - pad;
                if (which[wi] == 2) {
                  dst[static_cast<size_t>(co)] += gv;
                  continue;
                }
                for (int64_t ci = 0; ci < Ci; ++ci)
                  for (int64_t kh = 0; kh < Kh; ++kh) {
                    int64_t ph = bh + kh;
                    if (ph < 0 || ph >= H) continue;
                    for (int64_t kw = 0; kw < Kw; ++kw) {
                      int64_t pwd = bw + kw;
                      if (pwd < 0 || pwd >= W) continue;
                      if (which[wi] == 0)
                        dst[static_cast<size_t>(((b * Ci + ci) * H + ph) * W + pwd)] +=
                            gv * vw[((co * Ci + ci) * Kh + kh) * Kw + kw];
                      else
                        dst[static_cast<size_t>(((co * Ci + ci) * Kh + kh) * Kw + kw)] +=
                            gv * vx[((b * Ci + ci) * H + ph) * W + pwd];
                    }
                  }
              }
      }
    };
  });
}

Tensor softmax(const Tensor& a, int64_t axis) {
  int64_t rank = static_cast<int64_t>(a.shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("softmax: bad axis");
  int64_t ax = a.shape[static_cast<size_t>(axis)];
  int64_t inner = 1, outer = 1;
  for (int64_t i = axis + 1; i < rank; ++i) inner *= a.shape[static_cast<size_t>(i)];
  for (int64_t i = 0; i < axis; ++i) outer *= a.shape[static_cast<size_t>(i)];

  std::vector<double> out(static_cast<size_t>(a.size()));
  const double* pa = a.data->data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * ax * inner + in;
      double mx = -1e300;
      for (int64_t j = 0; j < ax; ++j) mx = std::max(mx, pa[base + j * inner]);
      double z = 0.0;
      for (int64_t j = 0; j < ax; ++j) {
        double e = std::exp(pa[base + j * inner] - mx);
        out[static_cast<size_t>(base + j * inner)] = e;
        z += e;
      }
      for (int64_t j = 0; j < ax; ++j) out[static_cast<size_t>(base + j * inner)] /= z;
    }

  auto so = std::make_shared<std::vector<double>>(out);
  return make_result("softmax", a.shape, std::move(out), {&a}, [=](const std::vector<int>&) -> Tape::BackFn {
    return [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
      const double* y = so->data();
      std::vector<double>& dst = *pg[0];
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          int64_t base = o * ax * inner + in;
          double dot = 0.0;
          for (int64_t j = 0; j < ax; ++j) dot += g[static_cast<size_t>(base + j * inner)] * y[base + j * inner];
          for (int64_t j = 0; j < ax; ++j) {
            int64_t idx = base + j * inner;
            dst[static_cast<size_t>(idx)] += y[idx] * (g[static_cast<size_t>(idx)] - dot);
          }
        }
    };
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
  int64_t d = a.shape.back();
  if (gamma.size() != d || beta.size() != d)
    throw std::invalid_argument("layer_norm: parameter size mismatch for " + shape_str(a.shape));
  int64_t rows = a.size() / d;
  std::vector<double> out(static_cast<size_t>(a.size()));
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * 2));  // mean, inv_std per row
  const double* pa = a.data->data();
  const double* pgm = gamma.data->data();
  const double* pbt = beta.data->data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = pa + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += x[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[static_cast<size_t>(2 * r)] = mean;
    (*stats)[static_cast<size_t>(2 * r + 1)] = inv;
    for (int64_t j = 0; j < d; ++j)
      out[static_cast<size_t>(r * d + j)] = (x[j] - mean) * inv * pgm[j] + pbt[j];
  }

  auto sa = a.data;
  auto sg = gamma.data;
  return make_result("layer_norm", a.shape, std::move(out), {&a, &gamma, &beta},
                     [=](const std::vector<int>& which) -> Tape::BackFn {
    return [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
      const double* x = sa->data();
      const double* gm = sg->data();
      for (size_t w = 0; w < which.size(); ++w) {
        std::vector<double>& dst = *pg[w];
        for (int64_t r = 0; r < rows; ++r) {
          double mean = (*stats)[static_cast<size_t>(2 * r)];
          double inv = (*stats)[static_cast<size_t>(2 * r + 1)];
          const double* xr = x + r * d;
          const double* gr = g.data() + r * d;
          if (which[w] == 0) {
            // dx = inv * (gy*gamma - mean(gy*gamma) - xhat * mean(gy*gamma*xhat))
            double s1 = 0.0, s2 = 0.0;
            for (int64_t j = 0; j < d; ++j) {
              double gg = gr[j] * gm[j];
              double xh = (xr[j] - mean) * inv;
              s1 += gg;
              s2 += gg * xh;
            }
            s1 /= static_cast<double>(d);
            s2 /= static_cast<double>(d);
            for (int64_t j = 0; j < d; ++j) {
              double gg = gr[j] * gm[j];
              double xh = (xr[j] - mean) * inv;
              dst[static_cast<size_t>(r * d + j)] += inv * (gg - s1 - xh * s2);
            }
          } else if (which[w] == 1) {
            for (int64_t j = 0; j < d; ++j) dst[static_cast<size_t>(j)] += gr[j] * (xr[j] - mean) * inv;
          } else {
            for (int64_t j = 0; j < d; ++j) dst[static_cast<size_t>(j)] += gr[j];
          }
        }
      }
    };
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : *a.data) s += v;
  int64_t n = a.size();
  return make_result("sum", {1}, {s}, {&a}, [=](const std::vector<int>&) -> Tape::BackFn {
    return [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
      std::vector<double>& dst = *pg[0];
      for (int64_t i = 0; i < n; ++i) dst[static_cast<size_t>(i)] += g[0];
    };
  });
}

Tensor sum(const Tensor& a, int64_t axis) {
  int64_t rank = static_cast<int64_t>(a.shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("sum: bad axis");
  int64_t ax = a.shape[static_cast<size_t>(axis)];
  int64_t inner = 1, outer = 1;
  for (int64_t i = axis + 1; i < rank; ++i) inner *= a.shape[static_cast<size_t>(i)];
  for (int64_t i = 0; i < axis; ++i) outer *= a.shape[static_cast<size_t>(i)];
  Shape out_shape;
  for (int64_t i = 0; i < rank; ++i)
    if (i != axis) out_shape.push_back(a.shape[static_cast<size_t>(i)]);
  if (out_shape.empty()) out_shape.push_back(1);

  std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
  const double* pa = a.data->data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < ax; ++j)
      for (int64_t in = 0; in < inner; ++in)
        out[static_cast<size_t>(o * inner + in)] += pa[(o * ax + j) * inner + in];

  return make_result("sum_axis", std::move(out_shape), std::move(out), {&a},
                     [=](const std::vector<int>&) -> Tape::BackFn {
    return [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
      std::vector<double>& dst = *pg[0];
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < ax; ++j)
          for (int64_t in = 0; in < inner; ++in)
            dst[static_cast<size_t>((o * ax + j) * inner + in)] += g[static_cast<size_t>(o * inner + in)];
    };
  });
}

Tensor mean(const Tensor& a) { return mul(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor mean(const Tensor& a, int64_t axis) {
  int64_t rank = static_cast<int64_t>(a.shape.size());
  int64_t ax = a.shape[static_cast<size_t>(axis < 0 ? axis + rank : axis)];
  return mul(sum(a, axis), 1.0 / static_cast<double>(ax));
}

Tensor reshape(const Tensor& a, Shape s) {
  if (numel(s) != a.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape) + " as " + shape_str(s));
  return make_result("reshape", std::move(s), *a.data, {&a}, [](const std::vector<int>&) -> Tape::BackFn {
    return [](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
      std::vector<double>& dst = *pg[0];
      for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    };
  });
}

Tensor transpose(const Tensor& a, const std::vector<int64_t>& perm) {
  int64_t rank = static_cast<int64_t>(a.shape.size());
  if (static_cast<int64_t>(perm.size()) != rank) throw std::invalid_argument("transpose: bad permutation");
  Shape out_shape(static_cast<size_t>(rank));
  for (int64_t i = 0; i < rank; ++i) out_shape[static_cast<size_t>(i)] = a.shape[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  std::vector<int64_t> in_strides(static_cast<size_t>(rank), 1), out_strides(static_cast<size_t>(rank), 1);
  for (int64_t i = rank - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * a.shape[static_cast<size_t>(i + 1)];
  for (int64_t i = rank - 2; i >= 0; --i)
    out_strides[static_cast<size_t>(i)] = out_strides[static_cast<size_t>(i + 1)] * out_shape[static_cast<size_t>(i + 1)];

  int64_t n = a.size();
  auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n));  // out index -> in index
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.data->data();
  std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
  for (int64_t o = 0; o < n; ++o) {
    int64_t rem = o, in_off = 0;
    for (int64_t i = 0; i < rank; ++i) {
      int64_t c = rem / out_strides[static_cast<size_t>(i)];
      rem %= out_strides[static_cast<size_t>(i)];
      in_off += c * in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    (*map)[static_cast<size_t>(o)] = in_off;
    out[static_cast<size_t>(o)] = pa[in_off];
  }

  return make_result("transpose", std::move(out_shape), std::move(out), {&a},
                     [=](const std::vector<int>&) -> Tape::BackFn {
    return [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
      std::vector<double>& dst = *pg[0];
      for (size_t o = 0; o < g.size(); ++o) dst[static_cast<size_t>((*map)[o])] += g[o];
    };
  });
}

Tensor slice(const Tensor& a, int64_t axis, int64_t start, int64_t len) {
  int64_t rank = static_cast<int64_t>(a.shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank || start < 0 || start + len > a.shape[static_cast<size_t>(axis)])
    throw std::invalid_argument("slice: out of range on " + shape_str(a.shape));
  int64_t ax = a.shape[static_cast<size_t>(axis)];
  int64_t inner = 1, outer = 1;
  for (int64_t i = axis + 1; i < rank; ++i) inner *= a.shape[static_cast<size_t>(i)];
  for (int64_t i = 0; i < axis; ++i) outer *= a.shape[static_cast<size_t>(i)];
  Shape out_shape = a.shape;
  out_shape[static_cast<size_t>(axis)] = len;

  std::vector<double> out(static_cast<size_t>(outer * len * inner));
  const double* pa = a.data->data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < len; ++j)
      std::copy(pa + (o * ax + start + j) * inner, pa + (o * ax + start + j) * inner + inner,
                out.data() + (o * len + j) * inner);

  return make_result("slice", std::move(out_shape), std::move(out), {&a},
                     [=](const std::vector<int>&) -> Tape::BackFn {
    return [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
      std::vector<double>& dst = *pg[0];
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < len; ++j)
          for (int64_t in = 0; in < inner; ++in)
            dst[static_cast<size_t>((o * ax + start + j) * inner + in)] += g[static_cast<size_t>((o * len + j) * inner + in)];
    };
  });
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input list");
  int64_t rank = static_cast<int64_t>(parts[0].shape.size());
  if (axis < 0) axis += rank;
  Shape out_shape = parts[0].shape;
  int64_t total_ax = 0;
  for (const Tensor& p : parts) {
    if (static_cast<int64_t>(p.shape.size()) != rank) throw std::invalid_argument("concat: rank mismatch");
    for (int64_t i = 0; i < rank; ++i)
      if (i != axis && p.shape[static_cast<size_t>(i)] != out_shape[static_cast<size_t>(i)])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(p.shape) + " vs " + shape_str(out_shape));
    total_ax += p.shape[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total_ax;
  int64_t inner = 1, outer = 1;
  for (int64_t i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<size_t>(i)];
  for (int64_t i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];

  std::vector<double> out(static_cast<size_t>(numel(out_shape)));
  int64_t off = 0;
  std::vector<int64_t> offsets, lens;
  for (const Tensor& p : parts) {
    int64_t ax = p.shape[static_cast<size_t>(axis)];
    offsets.push_back(off);
    lens.push_back(ax);
    const double* pp = p.data->data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pp + o * ax * inner, pp + (o + 1) * ax * inner,
                out.data() + (o * total_ax + off) * inner);
    off += ax;
  }

  // Record against all differentiable parts.
  Tape* tape = nullptr;
  for (const Tensor& p : parts)
    if (p.node >= 0) {
      if (tape && p.tape != tape) throw std::invalid_argument("concat: inputs live on different tapes");
      tape = p.tape;
    }
  Tensor result(std::move(out_shape), std::move(out));
  if (!tape) return result;
  std::vector<int64_t> parents;
  std::vector<int64_t> poffs, plens;
  for (size_t i = 0; i < parts.size(); ++i)
    if (parts[i].node >= 0) {
      parents.push_back(parts[i].node);
      poffs.push_back(offsets[i]);
      plens.push_back(lens[i]);
    }
  result.tape = tape;
  result.node = tape->record(result.shape, std::move(parents),
                             [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
    for (size_t w = 0; w < pg.size(); ++w) {
      std::vector<double>& dst = *pg[w];
      int64_t ax = plens[w], o0 = poffs[w];
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < ax; ++j)
          for (int64_t in = 0; in < inner; ++in)
            dst[static_cast<size_t>((o * ax + j) * inner + in)] += g[static_cast<size_t>((o * total_ax + o0 + j) * inner + in)];
    }
  });
  return result;
}

Tensor l2_norm(const Tensor& a) { return sqrt(sum(mul(a, a))); }

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  Tensor dot = sum(mul(a, b));
  return div(dot, mul(l2_norm(a), l2_norm(b)));
}

Tensor stop_gradient(const Tensor& a) { return a.detached(); }

}  // namespace ops

Tensor vjp(const DiffFn& f, const Tensor& x, const Tensor& w) {
  Tape tape;
  Tensor xl = tape.leaf(x);
  Tensor y = f(tape, xl);
  if (w.size() != y.size())
    throw std::invalid_argument("vjp: cotangent shape " + shape_str(w.shape) + " does not match output " +
                                shape_str(y.shape));
  Tensor s = ops::sum(ops::mul(y, w.detached()));
  GradMap g = tape.backward(s);
  return g.at(xl);
}

Tensor jvp(const DiffFn& f, const Tensor& x, const Tensor& v, double step) {
  if (v.size() != x.size())
    throw std::invalid_argument("jvp: tangent shape " + shape_str(v.shape) + " does not match input " +
                                shape_str(x.shape));
  Tensor xp = Tensor::zeros(x.shape), xm = Tensor::zeros(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    (*xp.data)[static_cast<size_t>(i)] = x[i] + step * v[i];
    (*xm.data)[static_cast<size_t>(i)] = x[i] - step * v[i];
  }
  Tape tp, tm;
  Tensor yp = f(tp, tp.leaf(xp, false));
  Tensor ym = f(tm, tm.leaf(xm, false));
  Tensor out = Tensor::zeros(yp.shape);
  for (int64_t i = 0; i < yp.size(); ++i)
    (*out.data)[static_cast<size_t>(i)] = (yp[i] - ym[i]) / (2.0 * step);
  return out;
}

}  // namespace dyco
