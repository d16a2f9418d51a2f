#include "r2au/autodiff.hpp"

#include <unordered_set>

namespace r2au {

namespace {
thread_local bool grad_enabled = true;
}

bool GradMode::enabled() { return grad_enabled; }
void GradMode::set_enabled(bool on) { grad_enabled = on; }

template <typename T>
Var<T> Var<T>::make(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> backward) {
  Var out(std::move(value), false);
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const Var& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (Var& p : parents) out.node_->parents.push_back(std::move(p.node_));
  out.node_->backward = std::move(backward);
  return out;
}

template <typename T>
void Var<T>::backward() const {
  if (node_->value.size() != 1) {
    throw ShapeError("backward() requires a scalar root, got " + to_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS for a topological order.
  // Owning references: clearing a node's parents must not free nodes still to visit.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      const std::shared_ptr<Node<T>>& p = n->parents[next++];
      if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = it->get();
    if (!n->backward) continue;
    if (!n->grad.empty()) n->backward(*n);
    n->backward = nullptr;
    n->parents.clear();
    n->grad = Tensor<T>();
  }
}

template class Var<float>;
template class Var<double>;

}  // namespace r2au
