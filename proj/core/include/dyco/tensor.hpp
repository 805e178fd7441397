#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace dyco {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

// Shape-carrying multidimensional array of f64 values, optionally attached
// to a gradient tape. Data buffers are shared and treated as immutable once
// an op has produced them.
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  Tape* tape = nullptr;
  int64_t node = -1;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d);

  bool requires_grad() const { return node >= 0; }
  int64_t size() const { return data ? static_cast<int64_t>(data->size()) : 0; }
  const std::vector<double>& vec() const { return *data; }
  double operator[](int64_t i) const { return (*data)[i]; }
  double scalar() const;
  Tensor detached() const;

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor from_scalar(double v);
};

struct GradMap {
  std::unordered_map<int64_t, Tensor> by_node;
  // Gradient of the root wrt t; zeros if t never influenced the root.
  Tensor at(const Tensor& t) const;
  bool contains(const Tensor& t) const { return t.node >= 0 && by_node.count(t.node) > 0; }
};

// Dynamic (define-by-run) gradient tape. Single-threaded; nodes are stored
// in creation order, which is a topological order by construction.
class Tape {
 public:
  using BackFn = std::function<void(const std::vector<double>& gout,
                                    const std::vector<std::vector<double>*>& parent_grads)>;

  // Wrap a value as a differentiable leaf on this tape.
  Tensor leaf(const Tensor& value, bool requires_grad = true);

  int64_t record(const Shape& out_shape, std::vector<int64_t> parents, BackFn back);

  // Reverse pass from a scalar root. Gradients accumulate additively across
  // fan-out; every node reachable from the root gets an entry.
  GradMap backward(const Tensor& root);

  void clear();
  int64_t num_nodes() const { return static_cast<int64_t>(nodes_.size()); }

 private:
  struct Node {
    Shape shape;
    std::vector<int64_t> parents;
    BackFn back;
  };
  std::vector<Node> nodes_;
};

namespace ops {

// Elementwise binary ops. Shapes must match exactly, or `b` must be a
// scalar or a suffix of `a`'s shape (bias-style broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor neg(const Tensor& a);

// a: (..., n, k); b: (k, m) or (..., k, m) with identical leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// x: (B, Cin, L); w: (Cout, Cin, K); bias: (Cout). Explicit zero padding.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad);
// x: (B, Cin, H, W); w: (Cout, Cin, Kh, Kw).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);

Tensor softmax(const Tensor& a, int64_t axis);
// Normalizes over the last axis; gamma/beta shaped like the last axis.
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

Tensor sum(const Tensor& a);                       // scalar
Tensor sum(const Tensor& a, int64_t axis);         // axis removed
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int64_t axis);

Tensor reshape(const Tensor& a, Shape s);
Tensor transpose(const Tensor& a, const std::vector<int64_t>& perm);
Tensor slice(const Tensor& a, int64_t axis, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis);

Tensor l2_norm(const Tensor& a);                   // scalar ||a||_2
Tensor cosine_similarity(const Tensor& a, const Tensor& b);
Tensor stop_gradient(const Tensor& a);

}  // namespace ops

// f: builds output of a traced function on the given tape from a leaf input.
using DiffFn = std::function<Tensor(Tape&, const Tensor&)>;

// Vector-Jacobian product w^T J_f(x), exact via one reverse pass.
Tensor vjp(const DiffFn& f, const Tensor& x, const Tensor& w);

// Jacobian-vector product J_f(x) v. Implemented as central finite
// differences at step 1e-5 (the documented choice, used consistently by the
// whole verification suite).
Tensor jvp(const DiffFn& f, const Tensor& x, const Tensor& v, double step = 1e-5);

}  // namespace dyco
