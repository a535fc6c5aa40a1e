#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle. Values are immutable once produced by an op;
// only leaf tensors (parameters) may be mutated in place, and only the grad
// slot changes during backward(). Each op that touches a requires_grad input
// records a node holding its inputs and a backward closure. backward() walks
// the recorded graph once in reverse topological order and then releases it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace protonc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
  bool graph_released = false;
};

/// grad_in[i] is null when input i does not require a gradient; otherwise it
/// points at a zero-initialised (or partially accumulated) buffer to add into.
using GradSinks = std::vector<std::vector<double>*>;
using BackwardFn = std::function<void(std::span<const double> grad_out, const GradSinks& grad_in)>;

struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  /// Result of a differentiable op. The node is only recorded when grad mode
  /// is on and at least one input requires a gradient.
  static Tensor from_op(std::string op, Shape shape, std::vector<double> values,
                        const std::vector<Tensor>& inputs, detail::BackwardFn backward);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  double item() const;
  /// In-place access for leaf tensors only (initialisation, optimizer steps).
  std::span<double> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Same values, no history, no gradient.
  Tensor detach() const;

  /// Reverse sweep from a scalar. Leaf gradients accumulate across calls.
  void backward(bool retain_graph = false) const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// ---- elementwise -----------------------------------------------------------
// Binary ops accept equal shapes, or one operand whose shape is a suffix of the
// other's (broadcast over leading axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);

// ---- reductions ------------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);
/// Sum of squares along one axis.
Tensor sqnorm(const Tensor& a, std::size_t axis);

// ---- shape -----------------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Rows [start, start+count) along axis 0.
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);

// ---- linear algebra and losses ----------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
/// out[i,j] = ||a_i - b_j||^2 for a[m,d], b[n,d].
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);
/// Row-wise log-softmax of a rank-2 tensor (max-shifted).
Tensor log_softmax(const Tensor& a);
/// out[i] = a[i, index[i]] for rank-2 a.
Tensor pick(const Tensor& a, std::span<const std::size_t> index);

}  // namespace protonc
