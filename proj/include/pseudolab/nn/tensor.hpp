#pragma once

// Dense float64 tensors with tape-free reverse-mode differentiation.
//
// Every op result keeps shared pointers to its inputs and a closure that
// pushes the result's gradient into them. backward() topologically sorts the
// graph reachable from a scalar and runs the closures in reverse order.

#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pseudolab/common.hpp"

namespace pseudolab::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording in its scope (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl>()) {
    if (numel_of(shape) != data.size()) {
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel_of(shape);
    return {std::move(shape), std::vector<double>(n, 0.0), requires_grad};
  }

  static Tensor scalar(double v) { return {{1}, {v}}; }

  [[nodiscard]] bool defined() const { return static_cast<bool>(impl_); }
  [[nodiscard]] const Shape& shape() const { return impl_->shape; }
  [[nodiscard]] std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  [[nodiscard]] std::size_t rank() const { return impl_->shape.size(); }
  [[nodiscard]] std::size_t numel() const { return impl_->data.size(); }
  [[nodiscard]] bool requires_grad() const { return impl_->requires_grad; }

  // Tensor is a handle: constness of the handle does not extend to storage.
  [[nodiscard]] std::span<double> data() const { return impl_->data; }
  [[nodiscard]] double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  [[nodiscard]] bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; zeros if nothing has been accumulated.
  [[nodiscard]] std::span<double> grad() const { return impl_->ensure_grad(); }
  void zero_grad() const { impl_->grad.clear(); }

  /// New leaf holding a copy of the values.
  [[nodiscard]] Tensor detach() const { return {shape(), impl_->data, false}; }

  [[nodiscard]] const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Creates an op result. The backward closure is kept only when recording is
/// enabled and some parent requires a gradient.
inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                          std::function<void(TensorImpl&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data));
  if (!detail::grad_enabled) return out;
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.defined() && p.requires_grad(); });
  if (!needs) return out;
  auto& impl = *out.impl();
  impl.requires_grad = true;
  for (auto& p : parents) {
    if (p.defined()) impl.parents.push_back(p.impl());
  }
  impl.backward_fn = std::move(backward_fn);
  return out;
}

/// Accumulates d(root)/d(leaf) into every reachable tensor that requires a
/// gradient. `root` must be a scalar.
inline void backward(const Tensor& root) {
  if (root.numel() != 1) throw ShapeError("backward() needs a scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root.impl().get(), 0}};
  seen.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.impl()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

}  // namespace pseudolab::nn
