// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with tape-free reverse-mode differentiation.
//
// Every forward op returns a new Tensor whose node remembers its parents and
// a closure that pushes the node's gradient back into them. backward() sorts
// the reachable subgraph topologically and runs those closures in reverse.
// Leaf tensors (parameters) accumulate gradients with += until zero_grad().
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rin/error.hpp"
#include "rin/rng.hpp"

namespace rin {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
};

inline thread_local bool grad_enabled = true;

inline void check_shape(const Shape& shape) {
  for (auto extent : shape)
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
}

}  // namespace detail

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Shared handle to a node of the computation graph. Copies alias the same
/// storage; use clone() for an independent leaf.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double fill, bool requires_grad = false) {
    const auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, fill), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    detail::check_shape(shape);
    if (numel(shape) != values.size())
      throw DimensionError("shape " + to_string(shape) + " needs " + std::to_string(numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false) {
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = rng.uniform(lo, hi);
    return from(std::move(shape), std::move(values), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const& { return node_->value; }
  std::span<const double> values() const&& = delete;  // would dangle once the temporary dies
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t i, std::size_t j) const { return node_->value[i * dim(1) + j]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return node_->value[(i * dim(1) + j) * dim(2) + k];
  }
  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  /// Writable values; only leaves may be mutated in place.
  std::span<double> mutable_values() {
    if (!node_->is_leaf()) throw ContractError("cannot mutate values of a non-leaf tensor");
    return node_->value;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaves");
    node_->requires_grad = on;
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const double> grad() const {
    if (!has_grad()) throw ContractError("tensor " + to_string(shape()) + " has no gradient");
    return node_->grad;
  }
  std::span<double> mutable_grad() {
    if (!has_grad()) throw ContractError("tensor " + to_string(shape()) + " has no gradient");
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  /// Independent leaf holding a copy of the values.
  Tensor clone(bool requires_grad = false) const { return from(shape(), node_->value, requires_grad); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

inline void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

namespace detail {

/// Builds an op result. The closure is attached only when some input needs
/// a gradient and graph construction is enabled.
inline Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

inline Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

// Gradient buffer of a parent, or nullptr when it does not take gradients.
inline double* grad_of(Node& self, std::size_t parent) {
  auto& p = *self.parents[parent];
  return p.requires_grad ? p.grad.data() : nullptr;
}

/// Neumaier-compensated accumulator; loss totals add thousands of terms.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      carry_ += (sum_ - t) + x;
    else
      carry_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

}  // namespace detail

/// Fills the grad of every reachable tensor that requires one.
inline void backward(const Tensor& loss) {
  using detail::Node;
  if (loss.size() != 1) throw ContractError("backward() needs a scalar loss, got " + to_string(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; LSTM chains are deep enough to make recursion risky.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order) {
    if (!node->is_leaf())
      node->grad.assign(node->value.size(), 0.0);
    else if (node->grad.size() != node->value.size())
      node->grad.assign(node->value.size(), 0.0);
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (!(*it)->is_leaf()) (*it)->backward(**it);
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  std::vector<double> out(r * c, 0.0);
  const auto A = a.values();
  const auto B = b.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += av * B[p * c + j];
    }
  return detail::make_result({r, c}, std::move(out), {a, b}, [r, k, c](detail::Node& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    const auto& G = self.grad;
    if (double* dA = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += G[i * c + j] * B[p * c + j];
          dA[i * k + p] += s;
        }
    if (double* dB = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          for (std::size_t j = 0; j < c; ++j) dB[p * c + j] += av * G[i * c + j];
        }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const auto A = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  return detail::make_result({c, r}, std::move(out), {a}, [r, c](detail::Node& self) {
    if (double* dA = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dA[i * c + j] += self.grad[j * r + i];
  });
}

/// x·Wᵀ (+ b): x is [n×in], W is [out×in], b is [out] or undefined.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {}) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in)
    throw DimensionError("linear: input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
  const bool has_bias = b.defined();
  if (has_bias && b.shape() != Shape{out})
    throw DimensionError("linear: bias " + to_string(b.shape()) + " does not match weight " + to_string(w.shape()));
  std::vector<double> y(n * out);
  const auto X = x.values();
  const auto W = w.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double s = has_bias ? b[o] : 0.0;
      for (std::size_t p = 0; p < in; ++p) s += X[i * in + p] * W[o * in + p];
      y[i * out + o] = s;
    }
  auto bw = [n, in, out, has_bias](detail::Node& self) {
    const auto& X = self.parents[0]->value;
    const auto& W = self.parents[1]->value;
    const auto& G = self.grad;
    if (double* dX = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) {
          const double g = G[i * out + o];
          for (std::size_t p = 0; p < in; ++p) dX[i * in + p] += g * W[o * in + p];
        }
    if (double* dW = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) {
          const double g = G[i * out + o];
          for (std::size_t p = 0; p < in; ++p) dW[o * in + p] += g * X[i * in + p];
        }
    if (has_bias)
      if (double* dB = detail::grad_of(self, 2))
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < out; ++o) dB[o] += G[i * out + o];
  };
  if (has_bias) return detail::make_result({n, out}, std::move(y), {x, w, b}, bw);
  return detail::make_result({n, out}, std::move(y), {x, w}, bw);
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (double* d = detail::grad_of(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (double* d = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    if (double* d = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] -= self.grad[i];
  });
}

/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (double* d = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * B[i];
    if (double* d = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * A[i];
  });
}

/// alpha·a + beta, elementwise.
inline Tensor affine(const Tensor& a, double alpha, double beta = 0.0) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * a[i] + beta;
  return detail::make_result(a.shape(), std::move(out), {a}, [alpha](detail::Node& self) {
    if (double* d = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += alpha * self.grad[i];
  });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return affine(a, s); }
inline Tensor operator-(double s, const Tensor& a) { return affine(a, -1.0, s); }

/// x[n×c] + b[c] broadcast over rows.
inline Tensor add_row(const Tensor& x, const Tensor& b) {
  detail::require_rank(x, 2, "add_row");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (b.shape() != Shape{c})
    throw DimensionError("add_row: " + to_string(x.shape()) + " vs bias " + to_string(b.shape()));
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + b[j];
  return detail::make_result(x.shape(), std::move(out), {x, b}, [n, c](detail::Node& self) {
    if (double* d = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < n * c; ++i) d[i] += self.grad[i];
    if (double* d = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) d[j] += self.grad[i * c + j];
  });
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { sigmoid, tanh, relu, softmax };

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x[i]);
  return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    if (double* d = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.value[i];
        d[i] += self.grad[i] * y * (1.0 - y);
      }
  });
}

inline Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    if (double* d = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.value[i];
        d[i] += self.grad[i] * (1.0 - y * y);
      }
  });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    const auto& X = self.parents[0]->value;
    if (double* d = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (X[i] > 0.0) d[i] += self.grad[i];
  });
}

/// Softmax over the last axis, max-subtracted.
inline Tensor softmax(const Tensor& x) {
  const std::size_t width = x.rank() == 0 ? 1 : x.shape().back();
  const std::size_t rows = x.size() / width;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.values().data() + r * width;
    double* o = out.data() + r * width;
    const double mx = *std::max_element(in, in + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < width; ++j) o[j] /= total;
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [rows, width](detail::Node& self) {
    double* d = detail::grad_of(self, 0);
    if (!d) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * width;
      const double* g = self.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < width; ++j) d[r * width + j] += y[j] * (g[j] - dot);
    }
  });
}

inline Tensor activation(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return tanh(x);
    case Activation::relu: return relu(x);
    case Activation::softmax: return softmax(x);
  }
  throw ContractError("unknown activation");
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  detail::check_shape(shape);
  if (numel(shape) != x.size())
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  std::vector<double> out(x.values().begin(), x.values().end());
  return detail::make_result(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    if (double* d = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
}

/// Concatenation along `axis`; every other extent must agree.
inline Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + to_string(first));
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t d = 0; ok && d < first.size(); ++d) ok = d == axis || p.dim(d) == first[d];
    if (!ok) throw DimensionError("concat: incompatible extents " + to_string(first) + " and " + to_string(p.shape()));
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  std::vector<std::size_t> blocks;
  for (const auto& p : parts) blocks.push_back(p.dim(axis) * inner);
  const std::size_t row = shape[axis] * inner;

  std::vector<double> out(numel(shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = o * row;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const double* src = parts[k].values().data() + o * blocks[k];
      std::copy(src, src + blocks[k], out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += blocks[k];
    }
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return detail::make_result(std::move(shape), std::move(out), inputs, [outer, row, blocks](detail::Node& self) {
    for (std::size_t o = 0; o < outer; ++o) {
      std::size_t offset = o * row;
      for (std::size_t k = 0; k < blocks.size(); ++k) {
        if (double* d = detail::grad_of(self, k))
          for (std::size_t i = 0; i < blocks[k]; ++i) d[o * blocks[k] + i] += self.grad[offset + i];
        offset += blocks[k];
      }
    }
  });
}

inline Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  const Tensor parts[] = {a, b};
  return concat(std::span<const Tensor>(parts), axis);
}

/// Elements [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.dim(axis))
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " of " + to_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t src_row = x.dim(axis) * inner;
  const std::size_t dst_row = (end - begin) * inner;
  const std::size_t skip = begin * inner;
  Shape shape = x.shape();
  shape[axis] = end - begin;
  std::vector<double> out(outer * dst_row);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < dst_row; ++i) out[o * dst_row + i] = x[o * src_row + skip + i];
  return detail::make_result(std::move(shape), std::move(out), {x}, [=](detail::Node& self) {
    if (double* d = detail::grad_of(self, 0))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < dst_row; ++i) d[o * src_row + skip + i] += self.grad[o * dst_row + i];
  });
}

/// Inverse of concat: pieces with the given extents along `axis`.
inline std::vector<Tensor> split(const Tensor& x, std::size_t axis, std::span<const std::size_t> extents) {
  std::size_t total = 0;
  for (auto e : extents) total += e;
  if (axis >= x.rank() || total != x.dim(axis))
    throw DimensionError("split: extents do not cover axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  std::vector<Tensor> out;
  std::size_t begin = 0;
  for (auto e : extents) {
    out.push_back(slice(x, axis, begin, begin + e));
    begin += e;
  }
  return out;
}

/// Row lookup: table[V×d], ids → [n×d]. Gradients scatter-add into the used rows.
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  detail::require_rank(table, 2, "gather_rows");
  if (ids.empty()) throw ContractError("gather_rows: empty index list");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  for (auto id : ids)
    if (id >= rows)
      throw ContractError("gather_rows: index " + std::to_string(id) + " out of range for table " + to_string(table.shape()));
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.values().data() + ids[i] * d, d, out.data() + i * d);
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return detail::make_result({ids.size(), d}, std::move(out), {table}, [idx, d](detail::Node& self) {
    if (double* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
  });
}

/// Every ordered row pair: out[i·m + j] = p[i] + q[j] for p[n×d], q[m×d].
inline Tensor pairwise_sum(const Tensor& p, const Tensor& q) {
  detail::require_rank(p, 2, "pairwise_sum");
  detail::require_rank(q, 2, "pairwise_sum");
  if (p.dim(1) != q.dim(1))
    throw DimensionError("pairwise_sum: " + to_string(p.shape()) + " vs " + to_string(q.shape()));
  const std::size_t n = p.dim(0), m = q.dim(0), d = p.dim(1);
  std::vector<double> out(n * m * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < d; ++k) out[(i * m + j) * d + k] = p[i * d + k] + q[j * d + k];
  return detail::make_result({n * m, d}, std::move(out), {p, q}, [n, m, d](detail::Node& self) {
    double* dp = detail::grad_of(self, 0);
    double* dq = detail::grad_of(self, 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < d; ++k) {
          const double g = self.grad[(i * m + j) * d + k];
          if (dp) dp[i * d + k] += g;
          if (dq) dq[j * d + k] += g;
        }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  detail::CompensatedSum total;
  for (double v : x.values()) total.add(v);
  return detail::make_result({}, {total.value()}, {x}, [](detail::Node& self) {
    if (double* d = detail::grad_of(self, 0)) {
      const double g = self.grad[0];
      for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) d[i] += g;
    }
  });
}

inline Tensor sum(std::span<const Tensor> terms) {
  if (terms.empty()) return Tensor::scalar(0.0);
  for (const auto& t : terms)
    if (t.size() != 1) throw ContractError("sum of scalars: got shape " + to_string(t.shape()));
  detail::CompensatedSum total;
  for (const auto& t : terms) total.add(t[0]);
  std::vector<Tensor> inputs(terms.begin(), terms.end());
  return detail::make_result({}, {total.value()}, inputs, [](detail::Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p)
      if (double* d = detail::grad_of(self, p)) d[0] += self.grad[0];
  });
}

struct MaxResult {
  Tensor values;
  std::vector<std::size_t> argmax;
};

/// Max over the middle axis of x[a×b×c] → [a×c]. argmax[i·c + k] is the
/// winning middle index; ties go to the first occurrence.
inline MaxResult max_over_axis1(const Tensor& x) {
  detail::require_rank(x, 3, "max_over_axis1");
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2);
  std::vector<double> out(a * c);
  std::vector<std::size_t> arg(a * c, 0);
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      double best = x[(i * b) * c + k];
      for (std::size_t j = 1; j < b; ++j) {
        const double v = x[(i * b + j) * c + k];
        if (v > best) {
          best = v;
          arg[i * c + k] = j;
        }
      }
      out[i * c + k] = best;
    }
  auto values = detail::make_result({a, c}, std::move(out), {x}, [arg, b, c](detail::Node& self) {
    if (double* d = detail::grad_of(self, 0))
      for (std::size_t ik = 0; ik < arg.size(); ++ik) {
        const std::size_t i = ik / c, k = ik % c;
        d[(i * b + arg[ik]) * c + k] += self.grad[ik];
      }
  });
  return {std::move(values), std::move(arg)};
}

/// Column maxima of x[m×l] → [l] plus the argmax row per column.
inline MaxResult reduce_max_rows(const Tensor& x) {
  detail::require_rank(x, 2, "reduce_max_rows");
  if (x.dim(0) == 0) throw ContractError("reduce_max_rows: empty reduction");
  const std::size_t l = x.dim(1);
  auto r = max_over_axis1(reshape(x, {1, x.dim(0), l}));
  return {reshape(r.values, {l}), std::move(r.argmax)};
}

// ---------------------------------------------------------------------------
// Losses on probabilities. Logs are clamped at kLogFloor; the clamped branch
// has zero derivative.

inline constexpr double kLogFloor = 1e-12;

/// Σᵢ wᵢ · −log p[i, targetᵢ] over probs[N×C].
inline Tensor neg_log_likelihood(const Tensor& probs, std::span<const std::size_t> target,
                                 std::span<const double> weight) {
  detail::require_rank(probs, 2, "neg_log_likelihood");
  const std::size_t rows = probs.dim(0), cols = probs.dim(1);
  if (target.size() != rows || weight.size() != rows)
    throw DimensionError("neg_log_likelihood: " + std::to_string(target.size()) + " targets for " + to_string(probs.shape()));
  detail::CompensatedSum total;
  for (std::size_t i = 0; i < rows; ++i) {
    if (target[i] >= cols) throw ContractError("neg_log_likelihood: target index out of range");
    if (weight[i] != 0.0) total.add(-weight[i] * std::log(std::max(probs[i * cols + target[i]], kLogFloor)));
  }
  std::vector<std::size_t> t(target.begin(), target.end());
  std::vector<double> w(weight.begin(), weight.end());
  return detail::make_result({}, {total.value()}, {probs}, [t, w, cols](detail::Node& self) {
    double* d = detail::grad_of(self, 0);
    if (!d) return;
    const auto& P = self.parents[0]->value;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double p = P[i * cols + t[i]];
      if (w[i] != 0.0 && p > kLogFloor) d[i * cols + t[i]] += -self.grad[0] * w[i] / p;
    }
  });
}

/// Σ w · −[t·log p + (1−t)·log(1−p)], elementwise over probs of any shape.
inline Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> target,
                                   std::span<const double> weight) {
  if (target.size() != probs.size() || weight.size() != probs.size())
    throw DimensionError("binary_cross_entropy: target/weight size differs from " + to_string(probs.shape()));
  detail::CompensatedSum total;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (weight[i] == 0.0) continue;
    const double p = probs[i], t = target[i];
    double term = 0.0;
    if (t != 0.0) term -= t * std::log(std::max(p, kLogFloor));
    if (t != 1.0) term -= (1.0 - t) * std::log(std::max(1.0 - p, kLogFloor));
    total.add(weight[i] * term);
  }
  std::vector<double> t(target.begin(), target.end());
  std::vector<double> w(weight.begin(), weight.end());
  return detail::make_result({}, {total.value()}, {probs}, [t, w](detail::Node& self) {
    double* d = detail::grad_of(self, 0);
    if (!d) return;
    const auto& P = self.parents[0]->value;
    const double g = self.grad[0];
    for (std::size_t i = 0; i < P.size(); ++i) {
      if (w[i] == 0.0) continue;
      const double p = P[i];
      double dp = 0.0;
      if (t[i] != 0.0 && p > kLogFloor) dp -= t[i] / p;
      if (t[i] != 1.0 && 1.0 - p > kLogFloor) dp += (1.0 - t[i]) / (1.0 - p);
      d[i] += g * w[i] * dp;
    }
  });
}

// ---------------------------------------------------------------------------
// Dropout

enum class Mode { train, eval };

/// Inverted dropout: in train mode each component is zeroed with probability
/// `rate` and survivors are scaled by 1/(1−rate). Identity in eval mode.
inline Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0,1), got " + std::to_string(rate));
  if (mode == Mode::eval || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return detail::make_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](detail::Node& self) {
    if (double* d = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < mask.size(); ++i) d[i] += self.grad[i] * mask[i];
  });
}

}  // namespace rin
