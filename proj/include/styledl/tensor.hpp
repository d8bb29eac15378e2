#pragma once

// Dense float64 tensors with a dynamically recorded reverse-mode graph.
//
// Every op returns a fresh Tensor. When gradient recording is enabled and any
// input requires a gradient, the result keeps strong references to its inputs
// and a closure that pushes its own gradient back into them. backward() runs
// those closures in reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "styledl/errors.hpp"

namespace styledl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw ContractViolation("tensor: shape " + shape_str(shape) + " does not hold " +
                              std::to_string(values.size()) + " values");
    for (auto e : shape)
      if (e == 0) throw ContractViolation("tensor: zero extent in " + shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto count = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(count, value), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::ptrdiff_t axis) const {
    auto r = static_cast<std::ptrdiff_t>(rank());
    if (axis < 0) axis += r;
    require(axis >= 0 && axis < r, "dim: axis out of range for " + shape_str(shape()));
    return node_->shape[static_cast<std::size_t>(axis)];
  }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> data_mut() { return node_->data; }
  double operator[](std::size_t i) const { return node_->data.at(i); }
  double item() const {
    require(numel() == 1, "item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; empty span when nothing has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad_mut() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Leaf copy of the current values, cut off from the graph.
  Tensor detach() const { return from(shape(), node_->data, false); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                          const char* op, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  bool track = false;
  if (grad_mode())
    for (const auto& t : inputs) track = track || t.requires_grad();
  if (track) {
    n->requires_grad = true;
    for (const auto& t : inputs) n->inputs.push_back(t.ptr());
    n->backward = std::move(bw);
  }
  return Tensor(std::move(n));
}

inline std::size_t norm_axis(std::ptrdiff_t axis, std::size_t rank, const char* op) {
  auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ContractViolation(std::string(op) + ": invalid axis");
  return static_cast<std::size_t>(axis);
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// C[M,N] += op(A) * op(B), row-major, op = optional transpose.
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n, bool trans_a, bool trans_b) {
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double av = a[i * k + p];
        const double* brow = b + p * n;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else if (trans_a && !trans_b) {
    // a stored [k,m]
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) {
        double av = a[p * m + i];
        const double* brow = b + p * n;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else if (!trans_a && trans_b) {
    // b stored [n,k]
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double* arow = a + i * k;
        const double* brow = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        c[i * n + j] += s;
      }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
        c[i * n + j] += s;
      }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph execution
// ---------------------------------------------------------------------------

/// Populates dLoss/dT for every tensor reachable from `loss` that requires a
/// gradient. Leaf gradients accumulate across calls until zero_grad().
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractViolation("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  if (!std::isfinite(loss.item()))
    throw TrainingError("backward: non-finite loss value " + std::to_string(loss.item()));
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto* n : order)
    if (n->backward) n->grad.clear();
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace detail {

enum class Binary { add, sub, mul };

inline Tensor binary(Binary kind, const Tensor& a, const Tensor& b, const char* name) {
  bool a_scalar = a.numel() == 1 && b.numel() != 1;
  bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape())
    throw ContractViolation(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
  const Shape& out_shape = a_scalar ? b.shape() : a.shape();
  std::size_t n = shape_numel(out_shape);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = av[a_scalar ? 0 : i];
    double y = bv[b_scalar ? 0 : i];
    out[i] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
  }
  Node* an = a.node();
  Node* bn = b.node();
  return make_result(out_shape, std::move(out), {a, b}, name,
                     [=](Node& o) {
                       for (std::size_t i = 0; i < n; ++i) {
                         double g = o.grad[i];
                         std::size_t ia = a_scalar ? 0 : i;
                         std::size_t ib = b_scalar ? 0 : i;
                         if (an->requires_grad) {
                           double d = kind == Binary::mul ? g * bn->data[ib] : g;
                           an->grad_buffer()[ia] += d;
                         }
                         if (bn->requires_grad) {
                           double d = kind == Binary::mul ? g * an->data[ia]
                                      : kind == Binary::sub ? -g
                                                            : g;
                           bn->grad_buffer()[ib] += d;
                         }
                       }
                     });
}

// y = f(x); dy/dx expressed through (x, y).
template <typename F, typename D>
Tensor unary(const Tensor& x, const char* name, F f, D deriv) {
  std::size_t n = x.numel();
  auto xv = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(xv[i]);
  Node* xn = x.node();
  return make_result(x.shape(), std::move(out), {x}, name, [=](Node& o) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * deriv(xn->data[i], o.data[i]);
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(detail::Binary::add, a, b, "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(detail::Binary::sub, a, b, "sub"); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(detail::Binary::mul, a, b, "mul"); }

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}
inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& x, double slope = 0.2) {
  return detail::unary(
      x, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

/// Identity forward; multiplies the incoming gradient by -1.
inline Tensor grad_reverse(const Tensor& x) {
  return detail::unary(x, "grad_reverse", [](double v) { return v; }, [](double, double) { return -1.0; });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ContractViolation("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  detail::Node* xn = x.node();
  std::size_t n = x.numel();
  return detail::make_result(std::move(shape), std::move(out), {x}, "reshape", [=](detail::Node& o) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i];
  });
}

inline Tensor flatten(const Tensor& x) { return reshape(x, {x.numel()}); }

inline Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis_in) {
  require(!parts.empty(), "concat: no parts");
  const Shape& s0 = parts[0].shape();
  std::size_t axis = detail::norm_axis(axis_in, s0.size(), "concat");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw ContractViolation("concat: extent mismatch " + shape_str(s0) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  auto split = detail::split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> widths;
  std::vector<detail::Node*> nodes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::size_t w = p.shape()[axis] * split.inner;
    auto pv = p.data();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(o * split.n * split.inner + offset));
    offset += w;
    widths.push_back(w);
    nodes.push_back(p.node());
  }
  std::size_t row = split.n * split.inner;
  std::size_t outer = split.outer;
  return detail::make_result(out_shape, std::move(out), parts, "concat", [=](detail::Node& o) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      std::size_t w = widths[k];
      if (nodes[k]->requires_grad) {
        auto& g = nodes[k]->grad_buffer();
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t j = 0; j < w; ++j) g[r * w + j] += o.grad[r * row + off + j];
      }
      off += w;
    }
  });
}

/// Contiguous range [start, start+len) along `axis`.
inline Tensor slice(const Tensor& x, std::ptrdiff_t axis_in, std::size_t start, std::size_t len) {
  std::size_t axis = detail::norm_axis(axis_in, x.rank(), "slice");
  require(len > 0 && start + len <= x.shape()[axis], "slice: range out of bounds");
  auto split = detail::split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> out(shape_numel(out_shape));
  auto xv = x.data();
  std::size_t w = len * split.inner;
  std::size_t row = split.n * split.inner;
  std::size_t off = start * split.inner;
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t j = 0; j < w; ++j) out[o * w + j] = xv[o * row + off + j];
  detail::Node* xn = x.node();
  std::size_t outer = split.outer;
  return detail::make_result(out_shape, std::move(out), {x}, "slice", [=](detail::Node& o) {
    auto& g = xn->grad_buffer();
    for (std::size_t r = 0; r < outer; ++r)
      for (std::size_t j = 0; j < w; ++j) g[r * row + off + j] += o.grad[r * w + j];
  });
}

/// Drops the leading axis by taking entry `index`.
inline Tensor select(const Tensor& x, std::size_t index) {
  Shape rest(x.shape().begin() + 1, x.shape().end());
  if (rest.empty()) rest = {1};
  return reshape(slice(x, 0, index, 1), rest);
}

/// Inserts a new axis at `axis` holding `n` copies of x.
inline Tensor expand(const Tensor& x, std::ptrdiff_t axis_in, std::size_t n) {
  auto r = static_cast<std::ptrdiff_t>(x.rank()) + 1;
  if (axis_in < 0) axis_in += r;
  require(axis_in >= 0 && axis_in < r && n > 0, "expand: invalid axis");
  auto axis = static_cast<std::size_t>(axis_in);
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis; i < x.rank(); ++i) inner *= x.shape()[i];
  std::vector<double> out(outer * n * inner);
  auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < inner; ++j) out[(o * n + k) * inner + j] = xv[o * inner + j];
  detail::Node* xn = x.node();
  return detail::make_result(out_shape, std::move(out), {x}, "expand", [=](detail::Node& o) {
    auto& g = xn->grad_buffer();
    for (std::size_t oo = 0; oo < outer; ++oo)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < inner; ++j) g[oo * inner + j] += o.grad[(oo * n + k) * inner + j];
  });
}

/// Swaps the last two axes.
inline Tensor transpose_last2(const Tensor& x) {
  require(x.rank() >= 2, "transpose: rank < 2");
  Shape s = x.shape();
  std::size_t m = s[s.size() - 2], n = s[s.size() - 1];
  std::size_t batch = x.numel() / (m * n);
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = xv[b * m * n + i * n + j];
  detail::Node* xn = x.node();
  return detail::make_result(s, std::move(out), {x}, "transpose", [=](detail::Node& o) {
    auto& g = xn->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[b * m * n + i * n + j] += o.grad[b * m * n + j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// [M,K]x[K,N]. Either side may carry a leading batch axis; a 2-d side is
/// shared across the batch.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() >= 2 && a.rank() <= 3 && b.rank() >= 2 && b.rank() <= 3, "matmul: rank must be 2 or 3");
  bool a_batched = a.rank() == 3, b_batched = b.rank() == 3;
  std::size_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2)
    throw ContractViolation("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::size_t batch = 1;
  if (a_batched) batch = a.dim(0);
  if (b_batched) {
    if (a_batched && b.dim(0) != batch) throw ContractViolation("matmul: batch mismatch");
    batch = b.dim(0);
  }
  bool out_batched = a_batched || b_batched;
  Shape out_shape = out_batched ? Shape{batch, m, n} : Shape{m, n};
  std::vector<double> out(batch * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  std::size_t sa = a_batched ? m * k : 0, sb = b_batched ? k * n : 0;
  for (std::size_t i = 0; i < batch; ++i)
    detail::gemm_acc(ad + i * sa, bd + i * sb, out.data() + i * m * n, m, k, n, false, false);
  detail::Node* an = a.node();
  detail::Node* bn = b.node();
  return detail::make_result(out_shape, std::move(out), {a, b}, "matmul", [=](detail::Node& o) {
    for (std::size_t i = 0; i < batch; ++i) {
      const double* go = o.grad.data() + i * m * n;
      if (an->requires_grad)  // dA = dO * B^T
        detail::gemm_acc(go, bn->data.data() + i * sb, an->grad_buffer().data() + i * sa, m, n, k, false, true);
      if (bn->requires_grad)  // dB = A^T * dO
        detail::gemm_acc(an->data.data() + i * sa, go, bn->grad_buffer().data() + i * sb, k, m, n, true, false);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Output extent for a k-wide window. Floor division, except that windows
/// must not skip real input rows beyond the padding.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (in + 2 * pad < k) throw ConfigError("conv2d: kernel larger than padded input");
  std::size_t span = in + 2 * pad - k;
  if (span % stride > pad)
    throw ConfigError("conv2d: extent " + std::to_string(in) + " not tiled by kernel " + std::to_string(k) +
                      " stride " + std::to_string(stride) + " pad " + std::to_string(pad));
  return span / stride + 1;
}

namespace detail {

struct ConvGeom {
  std::size_t cin, h, w, k, stride, pad, ho, wo;
  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return ho * wo; }
};

inline void im2col(const double* img, const ConvGeom& g, double* col) {
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* dst = col + ((c * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                          ix < static_cast<std::ptrdiff_t>(g.w);
            dst[oy * g.wo + ox] =
                inside ? img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
}

inline void col2im_acc(const double* col, const ConvGeom& g, double* img) {
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* src = col + ((c * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                src[oy * g.wo + ox];
          }
        }
      }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
                     std::size_t pad) {
  require(input.rank() == 4, "conv2d: input must be [B,Cin,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 4, "conv2d: weight must be [Cout,Cin,k,k]");
  std::size_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  std::size_t cout = weight.dim(0), k = weight.dim(2);
  require(weight.dim(3) == k, "conv2d: kernel must be square");
  require(k == 1 || k == 3 || k == 7, "conv2d: kernel size must be 1, 3 or 7");
  if (weight.dim(1) != cin)
    throw ContractViolation("conv2d: weight " + shape_str(weight.shape()) + " vs input " + shape_str(input.shape()));
  require(bias.numel() == cout, "conv2d: bias must have Cout entries");
  detail::ConvGeom g{cin, h, w, k, stride, pad, conv_out_extent(h, k, stride, pad), conv_out_extent(w, k, stride, pad)};
  bool direct = k == 1 && stride == 1 && pad == 0;
  std::size_t rows = g.rows(), cols = g.cols(), in_step = cin * h * w, out_step = cout * cols;
  std::vector<double> out(batch * out_step);
  std::vector<double> col(direct ? 0 : rows * cols);
  const double* xd = input.data().data();
  const double* wd = weight.data().data();
  const double* bd = bias.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    double* ob = out.data() + b * out_step;
    for (std::size_t co = 0; co < cout; ++co) std::fill_n(ob + co * cols, cols, bd[co]);
    const double* src = xd + b * in_step;
    if (!direct) {
      detail::im2col(src, g, col.data());
      src = col.data();
    }
    detail::gemm_acc(wd, src, ob, cout, rows, cols, false, false);
  }
  detail::Node* xn = input.node();
  detail::Node* wn = weight.node();
  detail::Node* bn = bias.node();
  return detail::make_result({batch, cout, g.ho, g.wo}, std::move(out), {input, weight, bias}, "conv2d",
                             [=](detail::Node& o) {
                               std::vector<double> colb(direct ? 0 : rows * cols);
                               std::vector<double> dcol(direct ? 0 : rows * cols);
                               for (std::size_t b = 0; b < batch; ++b) {
                                 const double* go = o.grad.data() + b * out_step;
                                 if (bn->requires_grad) {
                                   auto& gb = bn->grad_buffer();
                                   for (std::size_t co = 0; co < cout; ++co) {
                                     double s = 0.0;
                                     for (std::size_t p = 0; p < cols; ++p) s += go[co * cols + p];
                                     gb[co] += s;
                                   }
                                 }
                                 const double* src = xn->data.data() + b * in_step;
                                 if (wn->requires_grad) {
                                   if (!direct) {
                                     detail::im2col(src, g, colb.data());
                                     src = colb.data();
                                   }
                                   detail::gemm_acc(go, src, wn->grad_buffer().data(), cout, cols, rows, false, true);
                                 }
                                 if (xn->requires_grad) {
                                   double* gx = xn->grad_buffer().data() + b * in_step;
                                   if (direct) {
                                     detail::gemm_acc(wn->data.data(), go, gx, rows, cout, cols, true, false);
                                   } else {
                                     std::fill(dcol.begin(), dcol.end(), 0.0);
                                     detail::gemm_acc(wn->data.data(), go, dcol.data(), rows, cout, cols, true, false);
                                     detail::col2im_acc(dcol.data(), g, gx);
                                   }
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Normalization, activations over an axis, resampling, reductions
// ---------------------------------------------------------------------------

/// Softmax along `axis`.
inline Tensor softmax(const Tensor& x, std::ptrdiff_t axis_in = -1) {
  std::size_t axis = detail::norm_axis(axis_in, x.rank(), "softmax");
  auto sp = detail::split_at(x.shape(), axis);
  auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j) {
      std::size_t base = o * sp.n * sp.inner + j;
      double mx = xv[base];
      for (std::size_t i = 1; i < sp.n; ++i) mx = std::max(mx, xv[base + i * sp.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) {
        double e = std::exp(xv[base + i * sp.inner] - mx);
        out[base + i * sp.inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < sp.n; ++i) out[base + i * sp.inner] /= z;
    }
  detail::Node* xn = x.node();
  return detail::make_result(x.shape(), std::move(out), {x}, "softmax", [=](detail::Node& o) {
    auto& g = xn->grad_buffer();
    for (std::size_t oo = 0; oo < sp.outer; ++oo)
      for (std::size_t j = 0; j < sp.inner; ++j) {
        std::size_t base = oo * sp.n * sp.inner + j;
        double dot = 0.0;
        for (std::size_t i = 0; i < sp.n; ++i) dot += o.grad[base + i * sp.inner] * o.data[base + i * sp.inner];
        for (std::size_t i = 0; i < sp.n; ++i) {
          std::size_t idx = base + i * sp.inner;
          g[idx] += o.data[idx] * (o.grad[idx] - dot);
        }
      }
  });
}

/// Per-sample normalization over every axis but the first, then a
/// per-channel (axis 1) affine transform.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  require(x.rank() >= 2, "layer_norm: rank < 2");
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  std::size_t batch = x.dim(0), ch = x.dim(1);
  std::size_t per = x.numel() / batch, spatial = per / ch;
  require(gamma.numel() == ch && beta.numel() == ch, "layer_norm: affine params must have C entries");
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = xv.data() + b * per;
    double mean = 0.0;
    for (std::size_t i = 0; i < per; ++i) mean += src[i];
    mean /= static_cast<double>(per);
    double var = 0.0;
    for (std::size_t i = 0; i < per; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(per);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[b] = is;
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t s = 0; s < spatial; ++s) {
        std::size_t i = b * per + c * spatial + s;
        xhat[i] = (xv[i] - mean) * is;
        out[i] = gv[c] * xhat[i] + bv[c];
      }
  }
  detail::Node* xn = x.node();
  detail::Node* gn = gamma.node();
  detail::Node* bn = beta.node();
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& o) {
        for (std::size_t b = 0; b < batch; ++b) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t s = 0; s < spatial; ++s) {
              std::size_t i = b * per + c * spatial + s;
              double dy = o.grad[i];
              if (gn->requires_grad) gn->grad_buffer()[c] += dy * xhat[i];
              if (bn->requires_grad) bn->grad_buffer()[c] += dy;
              double dxh = dy * gn->data[c];
              sum_d += dxh;
              sum_dx += dxh * xhat[i];
            }
          if (!xn->requires_grad) continue;
          auto& g = xn->grad_buffer();
          double np = static_cast<double>(per);
          for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t s = 0; s < spatial; ++s) {
              std::size_t i = b * per + c * spatial + s;
              double dxh = o.grad[i] * gn->data[c];
              g[i] += inv_std[b] / np * (np * dxh - sum_d - xhat[i] * sum_dx);
            }
        }
      });
}

/// Nearest-neighbour resampling of the last two axes with source index
/// floor(i * H / outH). Works in both directions.
inline Tensor resample_nearest(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require(x.rank() >= 2 && out_h > 0 && out_w > 0, "resample: bad request");
  std::size_t h = x.dim(-2), w = x.dim(-1);
  std::size_t planes = x.numel() / (h * w);
  Shape s = x.shape();
  s[s.size() - 2] = out_h;
  s[s.size() - 1] = out_w;
  std::vector<std::size_t> index(out_h * out_w);
  for (std::size_t i = 0; i < out_h; ++i)
    for (std::size_t j = 0; j < out_w; ++j) index[i * out_w + j] = (i * h / out_h) * w + (j * w / out_w);
  std::vector<double> out(planes * out_h * out_w);
  auto xv = x.data();
  std::size_t on = out_h * out_w;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t q = 0; q < on; ++q) out[p * on + q] = xv[p * h * w + index[q]];
  detail::Node* xn = x.node();
  return detail::make_result(s, std::move(out), {x}, "resample_nearest",
                             [=, index = std::move(index)](detail::Node& o) {
                               auto& g = xn->grad_buffer();
                               for (std::size_t p = 0; p < planes; ++p)
                                 for (std::size_t q = 0; q < on; ++q) g[p * h * w + index[q]] += o.grad[p * on + q];
                             });
}

inline Tensor upsample_nearest(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require(x.rank() >= 2, "upsample: rank < 2");
  if (out_h < x.dim(-2) || out_w < x.dim(-1))
    throw ContractViolation("upsample: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                            " smaller than input " + shape_str(x.shape()));
  return resample_nearest(x, out_h, out_w);
}

enum class Reduce { mean, max };

/// Reduces `axis` away. Max routes its gradient to the first maximal entry.
inline Tensor reduce(Reduce kind, const Tensor& x, std::ptrdiff_t axis_in) {
  std::size_t axis = detail::norm_axis(axis_in, x.rank(), "reduce");
  auto sp = detail::split_at(x.shape(), axis);
  Shape s = x.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  if (s.empty()) s = {1};
  auto xv = x.data();
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(kind == Reduce::max ? out.size() : 0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j) {
      std::size_t base = o * sp.n * sp.inner + j;
      if (kind == Reduce::mean) {
        double acc = 0.0;
        for (std::size_t i = 0; i < sp.n; ++i) acc += xv[base + i * sp.inner];
        out[o * sp.inner + j] = acc / static_cast<double>(sp.n);
      } else {
        std::size_t best = 0;
        for (std::size_t i = 1; i < sp.n; ++i)
          if (xv[base + i * sp.inner] > xv[base + best * sp.inner]) best = i;
        out[o * sp.inner + j] = xv[base + best * sp.inner];
        arg[o * sp.inner + j] = best;
      }
    }
  detail::Node* xn = x.node();
  return detail::make_result(s, std::move(out), {x}, kind == Reduce::mean ? "reduce_mean" : "reduce_max",
                             [=, arg = std::move(arg)](detail::Node& o) {
                               auto& g = xn->grad_buffer();
                               double inv = 1.0 / static_cast<double>(sp.n);
                               for (std::size_t oo = 0; oo < sp.outer; ++oo)
                                 for (std::size_t j = 0; j < sp.inner; ++j) {
                                   std::size_t base = oo * sp.n * sp.inner + j;
                                   double go = o.grad[oo * sp.inner + j];
                                   if (kind == Reduce::mean) {
                                     for (std::size_t i = 0; i < sp.n; ++i) g[base + i * sp.inner] += go * inv;
                                   } else {
                                     g[base + arg[oo * sp.inner + j] * sp.inner] += go;
                                   }
                                 }
                             });
}

inline Tensor reduce_mean(const Tensor& x, std::ptrdiff_t axis) { return reduce(Reduce::mean, x, axis); }
inline Tensor reduce_max(const Tensor& x, std::ptrdiff_t axis) { return reduce(Reduce::max, x, axis); }

/// Sum of every element, as a scalar.
inline Tensor sum(const Tensor& x) {
  auto xv = x.data();
  double acc = 0.0;
  for (double v : xv) acc += v;
  detail::Node* xn = x.node();
  std::size_t n = x.numel();
  return detail::make_result({1}, {acc}, {x}, "sum", [=](detail::Node& o) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0];
  });
}
inline Tensor mean(const Tensor& x) { return reduce(Reduce::mean, flatten(x), 0); }

/// Adds a vector along `axis` (bias broadcast).
inline Tensor add_bias(const Tensor& x, const Tensor& bias, std::ptrdiff_t axis_in) {
  std::size_t axis = detail::norm_axis(axis_in, x.rank(), "add_bias");
  auto sp = detail::split_at(x.shape(), axis);
  require(bias.numel() == sp.n, "add_bias: bias length " + std::to_string(bias.numel()) + " vs extent " +
                                    std::to_string(sp.n));
  auto xv = x.data();
  auto bv = bias.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.n; ++i)
      for (std::size_t j = 0; j < sp.inner; ++j) {
        std::size_t idx = (o * sp.n + i) * sp.inner + j;
        out[idx] = xv[idx] + bv[i];
      }
  detail::Node* xn = x.node();
  detail::Node* bn = bias.node();
  return detail::make_result(x.shape(), std::move(out), {x, bias}, "add_bias", [=](detail::Node& o) {
    for (std::size_t oo = 0; oo < sp.outer; ++oo)
      for (std::size_t i = 0; i < sp.n; ++i)
        for (std::size_t j = 0; j < sp.inner; ++j) {
          std::size_t idx = (oo * sp.n + i) * sp.inner + j;
          if (xn->requires_grad) xn->grad_buffer()[idx] += o.grad[idx];
          if (bn->requires_grad) bn->grad_buffer()[i] += o.grad[idx];
        }
  });
}

}  // namespace styledl
