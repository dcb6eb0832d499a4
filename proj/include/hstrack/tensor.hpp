#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace hstrack {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int shape_numel(const Shape& s);

class Tape;

/// Dense row-major f64 tensor. Immutable value type: the payload is shared
/// and never written after construction, so copies are cheap and tensors can
/// move freely between threads. A tensor becomes differentiable by being the
/// output of an op whose inputs were tracked on a Tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  int numel() const { return numel_; }
  int dim(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  int rank() const { return static_cast<int>(shape_.size()); }

  const std::vector<double>& values() const { return *data_; }
  double value() const;                    // scalar tensors only
  double at(const std::vector<int>& idx) const;

  bool requires_grad() const { return node_ >= 0; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  /// Same values, no tape attachment.
  Tensor detach() const;

  // Internal constructor used by ops; not intended for callers.
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data,
         Tape* tape, int node);

 private:
  std::shared_ptr<const std::vector<double>> data_;
  Shape shape_;
  int numel_ = 0;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

/// Named trainable parameter: master value plus an accumulated gradient
/// buffer written by Tape::collect(). Single-writer.
struct Var {
  std::string name;
  Tensor value;
  std::vector<double> grad;
  bool trainable = true;

  Var() = default;
  Var(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)),
        grad(static_cast<size_t>(value.numel()), 0.0) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
  void assign(Tensor v);  // shape-checked value replacement
};

/// Wengert list. Records every executed op in order; backward() replays the
/// adjoints in exact reverse execution order, accumulating gradients
/// additively. Confined to a single thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Track a parameter. Repeated watches of the same Var return the same
  /// node so gradient contributions accumulate in one place.
  Tensor watch(Var& v);
  /// Track a plain tensor as a leaf (used by grad_check).
  Tensor watch(const Tensor& t);

  /// Seed the scalar root with gradient 1 and run all adjoints.
  void backward(const Tensor& root);

  /// Gradient of a tracked leaf after backward().
  std::vector<double> grad_of(const Tensor& leaf) const;

  /// Scatter accumulated node gradients into every watched Var (additive).
  void collect();

  size_t num_nodes() const { return nodes_.size(); }

  // --- op-implementation interface ---
  int push_leaf(int numel);
  int push_op(int numel, std::function<void(Tape&)> bw);
  std::vector<double>& grad_buf(int node);  // lazily allocated, zero-filled
  bool has_grad(int node) const;

 private:
  struct Node {
    int numel = 0;
    std::function<void(Tape&)> bw;  // empty for leaves
    std::vector<double> grad;       // allocated on first write
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<Var*, int>> watched_;
  std::unordered_map<const Var*, int> watch_memo_;
};

// ---------------------------------------------------------------------------
// Op catalogue. Every op has an exact hand-written adjoint; composites
// (attention, batch norm, layer norm) are built from these so their
// gradients are covered by the per-op checks.
//
// Binary elementwise ops broadcast numpy-style; the backward pass reduces
// gradients over broadcast dimensions.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.01);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);   // argument clamped to [-700, 700]
Tensor log(const Tensor& a);   // argument clamped to >= 1e-12
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor acos(const Tensor& a);  // argument clamped to [-1, 1]

Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K] x [K,N]
Tensor bmm(const Tensor& a, const Tensor& b);     // [B,M,K] x [B,K,N]

/// 2D convolution over [N,C,H,W] (or [C,H,W], treated as N=1) with stride,
/// zero padding and channel groups. kernel is [Co, Ci/groups, kh, kw].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias,
              int stride, int padding, int groups);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& dims);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);

Tensor softmax(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis, bool keepdim = true);
Tensor mean_axis(const Tensor& a, int axis, bool keepdim = true);

/// Scaled dot-product attention composed from bmm/softmax so its gradient
/// is covered by the op catalogue. q:[B,T,D], k,v:[B,S,D].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// Max over coordinates of |analytic - central difference| / max(1, |cd|).
/// f must be deterministic and scalar-valued. Throws if the analytic
/// gradient is non-finite, naming the coordinate.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const Tensor& x, double eps);

}  // namespace hstrack
