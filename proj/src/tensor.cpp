#include "protonc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "protonc/errors.hpp"
#include "protonc/kernels.hpp"

namespace protonc {

using detail::GradSinks;
using detail::Node;
using detail::TensorImpl;

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

thread_local bool t_grad_mode = true;

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
}

const TensorImpl& checked(const std::shared_ptr<TensorImpl>& impl) {
  if (!impl) throw ContractError("operation on an undefined tensor");
  return *impl;
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::from_op(std::string op, Shape shape, std::vector<double> values,
                       const std::vector<Tensor>& inputs, detail::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!t_grad_mode) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl_->requires_grad = true;
  out.impl_->grad_fn = std::move(node);
  return out;
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const double> Tensor::data() const { return checked(impl_).data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

std::span<double> Tensor::mutable_data() {
  checked(impl_);
  if (impl_->grad_fn) throw ContractError("mutable_data() on a non-leaf tensor");
  return impl_->data;
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

void Tensor::set_requires_grad(bool value) {
  checked(impl_);
  if (impl_->grad_fn) throw ContractError("set_requires_grad() on a non-leaf tensor");
  impl_->requires_grad = value;
}

bool Tensor::is_leaf() const { return checked(impl_).grad_fn == nullptr; }

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(impl_).grad; }

void Tensor::zero_grad() {
  checked(impl_);
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& impl = checked(impl_);
  return Tensor(impl.shape, impl.data, false);
}

void Tensor::backward(bool retain_graph) const {
  const auto& root = checked(impl_);
  if (root.data.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(root.shape));
  }
  if (root.graph_released) {
    throw ContractError("backward() through a graph that was already released; pass retain_graph");
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS: every node appears after all of its inputs.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->grad_fn.get();
    if (node && next < node->inputs.size()) {
      TensorImpl* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  // Leaves collect this sweep's gradient in scratch space and receive it with
  // a single addition, so repeated calls accumulate exact multiples.
  std::unordered_map<TensorImpl*, std::vector<double>> leaf_sweep;
  for (auto* impl : order) {
    if (impl->grad_fn) {
      impl->grad.assign(impl->data.size(), 0.0);
    } else if (impl != impl_.get()) {
      leaf_sweep[impl].assign(impl->data.size(), 0.0);
    }
  }
  if (impl_->grad.empty()) impl_->grad.assign(1, 0.0);
  impl_->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (!impl->grad_fn) continue;
    GradSinks sinks;
    sinks.reserve(impl->grad_fn->inputs.size());
    for (const auto& input : impl->grad_fn->inputs) {
      if (!input->requires_grad) {
        sinks.push_back(nullptr);
        continue;
      }
      if (auto leaf = leaf_sweep.find(input.get()); leaf != leaf_sweep.end()) {
        sinks.push_back(&leaf->second);
      } else {
        sinks.push_back(&input->grad);
      }
    }
    impl->grad_fn->backward(impl->grad, sinks);
  }
  for (auto& [leaf, g] : leaf_sweep) {
    if (leaf->grad.size() != g.size()) leaf->grad.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) leaf->grad[i] += g[i];
  }

  if (!retain_graph) {
    for (auto* impl : order) {
      if (!impl->grad_fn) continue;
      impl->grad_fn.reset();
      impl->grad.clear();
      impl->grad.shrink_to_fit();
      impl->requires_grad = false;
      impl->graph_released = true;
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_mode) { t_grad_mode = false; }
NoGradGuard::~NoGradGuard() { t_grad_mode = previous_; }
bool grad_mode_enabled() { return t_grad_mode; }

// ---------------------------------------------------------------------------
namespace {

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  const auto is_suffix = [](const Shape& small, const Shape& big) {
    return small.size() < big.size() && std::equal(small.rbegin(), small.rend(), big.rbegin());
  };
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " +
                       shape_string(b));
}

template <typename Forward, typename GradA, typename GradB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Forward forward, GradA grad_a,
              GradB grad_b) {
  Shape shape = broadcast_shape(a.shape(), b.shape(), op);
  const std::size_t n = shape_numel(shape);
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t na = av.size();
  const std::size_t nb = bv.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = forward(av[i % na], bv[i % nb]);
  auto ai = a.impl();
  auto bi = b.impl();
  return Tensor::from_op(op, std::move(shape), std::move(out), {a, b},
                         [ai, bi, n, grad_a, grad_b](std::span<const double> g, const GradSinks& s) {
                           const auto& x = ai->data;
                           const auto& y = bi->data;
                           const std::size_t nx = x.size();
                           const std::size_t ny = y.size();
                           if (s[0]) {
                             auto& sink = *s[0];
                             for (std::size_t i = 0; i < n; ++i)
                               sink[i % nx] += grad_a(x[i % nx], y[i % ny], g[i]);
                           }
                           if (s[1]) {
                             auto& sink = *s[1];
                             for (std::size_t i = 0; i < n; ++i)
                               sink[i % ny] += grad_b(x[i % nx], y[i % ny], g[i]);
                           }
                         });
}

// Elementwise unary op; `grad` receives (input, output, upstream).
template <typename Forward, typename Grad>
Tensor unary(const char* op, const Tensor& a, Forward forward, Grad grad) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = forward(av[i]);
  auto ai = a.impl();
  Tensor result = Tensor::from_op(op, a.shape(), std::move(out), {a}, nullptr);
  if (!result.is_leaf()) {
    // The closure needs the output values; capture a weak reference to avoid
    // a cycle between the output tensor and its own node.
    std::weak_ptr<TensorImpl> wo = result.impl();
    result.impl()->grad_fn->backward = [ai, wo, grad](std::span<const double> g,
                                                       const GradSinks& s) {
      auto o = wo.lock();
      auto& sink = *s[0];
      for (std::size_t i = 0; i < g.size(); ++i) sink[i] += grad(ai->data[i], o->data[i], g[i]);
    };
  }
  return result;
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
  Shape reduced;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  s.reduced = shape;
  s.reduced.erase(s.reduced.begin() + static_cast<std::ptrdiff_t>(axis));
  return s;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return g; }, [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return g; }, [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double g) { return g * y; },
      [](double x, double, double g) { return g * x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double, double g) { return factor * g; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      "add_scalar", a, [value](double x) { return x + value; },
      [](double, double, double g) { return g; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y, double g) { return g * y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double, double g) { return g / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y, double g) { return g / (2.0 * y); });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

Tensor sum(const Tensor& a) {
  const auto av = a.data();
  double total = 0.0;
  for (double v : av) total += v;
  return Tensor::from_op("sum", Shape{}, {total}, {a},
                         [](std::span<const double> g, const GradSinks& s) {
                           for (auto& v : *s[0]) v += g[0];
                         });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape(), axis);
  const auto av = a.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.extent; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += av[(o * sp.extent + k) * sp.inner + i];
  return Tensor::from_op("sum_axis", sp.reduced, std::move(out), {a},
                         [sp](std::span<const double> g, const GradSinks& s) {
                           auto& sink = *s[0];
                           for (std::size_t o = 0; o < sp.outer; ++o)
                             for (std::size_t k = 0; k < sp.extent; ++k)
                               for (std::size_t i = 0; i < sp.inner; ++i)
                                 sink[(o * sp.extent + k) * sp.inner + i] += g[o * sp.inner + i];
                         });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean(const Tensor& a, std::size_t axis) {
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor sqnorm(const Tensor& a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape(), axis);
  const auto av = a.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.extent; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const double v = av[(o * sp.extent + k) * sp.inner + i];
        out[o * sp.inner + i] += v * v;
      }
  auto ai = a.impl();
  return Tensor::from_op("sqnorm", sp.reduced, std::move(out), {a},
                         [ai, sp](std::span<const double> g, const GradSinks& s) {
                           auto& sink = *s[0];
                           for (std::size_t o = 0; o < sp.outer; ++o)
                             for (std::size_t k = 0; k < sp.extent; ++k)
                               for (std::size_t i = 0; i < sp.inner; ++i) {
                                 const std::size_t idx = (o * sp.extent + k) * sp.inner + i;
                                 sink[idx] += 2.0 * ai->data[idx] * g[o * sp.inner + i];
                               }
                         });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  std::vector<double> values(a.data().begin(), a.data().end());
  return Tensor::from_op("reshape", std::move(shape), std::move(values), {a},
                         [](std::span<const double> g, const GradSinks& s) {
                           auto& sink = *s[0];
                           for (std::size_t i = 0; i < g.size(); ++i) sink[i] += g[i];
                         });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.dim(1);
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = av[r * cols + c];
  return Tensor::from_op("transpose", Shape{cols, rows}, std::move(out), {a},
                         [rows, cols](std::span<const double> g, const GradSinks& s) {
                           auto& sink = *s[0];
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < cols; ++c)
                               sink[r * cols + c] += g[c * rows + r];
                         });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  AxisSplit base = split_axis(first, axis);
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    Shape a = s;
    Shape b = first;
    if (a.size() != b.size()) {
      throw DimensionError("concat: " + shape_string(first) + " vs " + shape_string(s));
    }
    a[axis] = b[axis] = 0;
    if (a != b) throw DimensionError("concat: " + shape_string(first) + " vs " + shape_string(s));
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape shape = first;
  shape[axis] = total;
  std::vector<double> out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    for (std::size_t o = 0; o < base.outer; ++o)
      for (std::size_t e = 0; e < extents[k]; ++e)
        for (std::size_t i = 0; i < base.inner; ++i)
          out[(o * total + offset + e) * base.inner + i] = pv[(o * extents[k] + e) * base.inner + i];
    offset += extents[k];
  }
  const std::size_t outer = base.outer;
  const std::size_t inner = base.inner;
  return Tensor::from_op("concat", std::move(shape), std::move(out), parts,
                         [extents, total, outer, inner](std::span<const double> g,
                                                        const GradSinks& s) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < extents.size(); ++k) {
                             if (s[k]) {
                               auto& sink = *s[k];
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t e = 0; e < extents[k]; ++e)
                                   for (std::size_t i = 0; i < inner; ++i)
                                     sink[(o * extents[k] + e) * inner + i] +=
                                         g[(o * total + offset + e) * inner + i];
                             }
                             offset += extents[k];
                           }
                         });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  if (a.rank() == 0 || count == 0 || start + count > a.dim(0)) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + "," +
                         std::to_string(start + count) + ") of " + shape_string(a.shape()));
  }
  const std::size_t row = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = count;
  const auto av = a.data();
  std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(start * row),
                          av.begin() + static_cast<std::ptrdiff_t>((start + count) * row));
  return Tensor::from_op("slice_rows", std::move(shape), std::move(out), {a},
                         [start, row](std::span<const double> g, const GradSinks& s) {
                           auto& sink = *s[0];
                           for (std::size_t i = 0; i < g.size(); ++i) sink[start * row + i] += g[i];
                         });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents disagree, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm(m, n, k, {a.data(), false}, {b.data(), false}, out, false);
  auto ai = a.impl();
  auto bi = b.impl();
  return Tensor::from_op("matmul", Shape{m, n}, std::move(out), {a, b},
                         [ai, bi, m, n, k](std::span<const double> g, const GradSinks& s) {
                           if (s[0]) kernels::gemm(m, k, n, {g, false}, {bi->data, true}, *s[0], true);
                           if (s[1]) kernels::gemm(k, n, m, {ai->data, true}, {g, false}, *s[1], true);
                         });
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "pairwise_sqdist");
  require_rank(b, 2, "pairwise_sqdist");
  const std::size_t m = a.dim(0);
  const std::size_t n = b.dim(0);
  const std::size_t d = a.dim(1);
  if (b.dim(1) != d) {
    throw DimensionError("pairwise_sqdist: feature dimensions disagree, " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::pairwise_sqdist(m, n, d, a.data(), b.data(), out);
  auto ai = a.impl();
  auto bi = b.impl();
  return Tensor::from_op(
      "pairwise_sqdist", Shape{m, n}, std::move(out), {a, b},
      [ai, bi, m, n, d](std::span<const double> g, const GradSinks& s) {
        // d/da_i = 2 sum_j g_ij (a_i - b_j);  d/db_j = -2 sum_i g_ij (a_i - b_j)
        if (s[0]) {
          auto& sink = *s[0];
          for (std::size_t i = 0; i < m; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) row += g[i * n + j];
            for (std::size_t p = 0; p < d; ++p) sink[i * d + p] += 2.0 * row * ai->data[i * d + p];
          }
          std::vector<double> gb(m * d);
          kernels::gemm(m, d, n, {g, false}, {bi->data, false}, gb, false);
          for (std::size_t i = 0; i < m * d; ++i) sink[i] -= 2.0 * gb[i];
        }
        if (s[1]) {
          auto& sink = *s[1];
          for (std::size_t j = 0; j < n; ++j) {
            double col = 0.0;
            for (std::size_t i = 0; i < m; ++i) col += g[i * n + j];
            for (std::size_t p = 0; p < d; ++p) sink[j * d + p] += 2.0 * col * bi->data[j * d + p];
          }
          std::vector<double> ga(n * d);
          kernels::gemm(n, d, m, {g, true}, {ai->data, false}, ga, false);
          for (std::size_t i = 0; i < n * d; ++i) sink[i] -= 2.0 * ga[i];
        }
      });
}

Tensor log_softmax(const Tensor& a) {
  require_rank(a, 2, "log_softmax");
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.dim(1);
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    const double peak = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(x[c] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c] - lse;
  }
  Tensor result = Tensor::from_op("log_softmax", a.shape(), std::move(out), {a}, nullptr);
  if (!result.is_leaf()) {
    std::weak_ptr<TensorImpl> wo = result.impl();
    result.impl()->grad_fn->backward = [wo, rows, cols](std::span<const double> g,
                                                        const GradSinks& s) {
      auto o = wo.lock();
      auto& sink = *s[0];
      for (std::size_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          sink[i] += g[i] - std::exp(o->data[i]) * gsum;
        }
      }
    };
  }
  return result;
}

Tensor pick(const Tensor& a, std::span<const std::size_t> index) {
  require_rank(a, 2, "pick");
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.dim(1);
  if (index.size() != rows) {
    throw DimensionError("pick: " + std::to_string(index.size()) + " indices for " +
                         shape_string(a.shape()));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(rows);
  const auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= cols) {
      throw ContractError("pick: index " + std::to_string(idx[r]) + " out of range for " +
                          std::to_string(cols) + " columns");
    }
    out[r] = av[r * cols + idx[r]];
  }
  return Tensor::from_op("pick", Shape{rows}, std::move(out), {a},
                         [idx = std::move(idx), cols](std::span<const double> g, const GradSinks& s) {
                           auto& sink = *s[0];
                           for (std::size_t r = 0; r < idx.size(); ++r) sink[r * cols + idx[r]] += g[r];
                         });
}

}  // namespace protonc
