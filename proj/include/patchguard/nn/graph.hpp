#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <string>

#include "patchguard/core/tensor.hpp"

namespace patchguard::nn {

/// Model parameter with its gradient accumulator. Frozen parameters
/// (trainable = false) never receive gradient.
template <class T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Param() = default;
  explicit Param(Tensor<T> v, bool train = true) : value(std::move(v)), grad(value.shape), trainable(train) {}
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T{0}); }
};

/// Ordered by name so iteration (hashing, serialization, optimizer state)
/// is deterministic.
template <class T>
using ParamMap = std::map<std::string, Param<T>>;

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
};

/// Single-use tape. Build the forward pass with the ops in ops.hpp, then
/// call backward() once on a scalar node. Parameter gradients accumulate
/// into Param::grad, so several graphs can contribute to one optimizer step.
template <class T>
class Graph {
 public:
  using Backward = std::function<void()>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor<T> value) {
    Node n;
    n.own = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// References the parameter; its storage must outlive the graph.
  Var param(Param<T>& p) {
    Node n;
    n.ext_value = &p.value;
    if (grad_enabled_ && p.trainable) {
      n.ext_grad = &p.grad;
      n.requires_grad = true;
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// Read-only weight with no gradient path.
  Var constant(const Tensor<T>& value) {
    Node n;
    n.ext_value = &value;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var push(Tensor<T> value, bool requires_grad, Backward backward) {
    Node n;
    n.own = std::move(value);
    n.requires_grad = grad_enabled_ && requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ext_value ? *n.ext_value : n.own;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }

  /// Gradient buffer, zero-filled on first access.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.ext_grad) return *n.ext_grad;
    if (n.grad.shape.empty() && n.grad.data.empty()) n.grad = Tensor<T>(value(v).shape);
    return n.grad;
  }

  bool has_grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ext_grad != nullptr || !n.grad.data.empty();
  }

  /// Seeds d(loss)/d(loss) = 1 and runs the tape in reverse.
  void backward(Var loss) {
    if (!requires_grad(loss)) return;
    grad(loss).data.assign(value(loss).numel(), T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && has_grad(Var{i})) n.backward();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> own;
    const Tensor<T>* ext_value = nullptr;
    Tensor<T>* ext_grad = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_;
};

}  // namespace patchguard::nn
