#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "r2au/tensor.hpp"

namespace r2au {

/// Global (per-thread) switch for graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// One vertex of the recorded computation graph.
///
/// `backward` reads `grad` of this node and accumulates into the grads of
/// `parents` that require gradients.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-initialised on first touch.
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  Node& parent(std::size_t i) { return *parents[i]; }
};

/// Handle to a graph node. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  T item() const { return node_->value[0]; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; zeros when nothing has flowed here yet.
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  /// Reverse sweep from this (scalar) node. Interior graph state is released.
  void backward() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  /// Creates the result of a differentiable operation. The backward rule is
  /// recorded only if grad mode is on and some parent requires gradients.
  static Var make(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> backward);

 private:
  std::shared_ptr<Node<T>> node_;
};

extern template class Var<float>;
extern template class Var<double>;

}  // namespace r2au
