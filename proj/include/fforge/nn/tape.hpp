#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "fforge/nn/tensor.hpp"

namespace fforge::nn {

using NodeId = int;

/// Accumulated parameter gradients, keyed by parameter identity.
using Gradients = std::unordered_map<const Parameter*, std::vector<float>>;

/// Records a forward computation for reverse-mode differentiation.
///
/// Layers are immutable during a pass; everything a backward step needs
/// lives on the tape, so one model can be evaluated by many tapes at once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const noexcept { return record_; }

  /// Leaf node; its gradient is only propagated when `requires_grad`.
  NodeId input(Tensor value, bool requires_grad = false);
  NodeId push(Tensor value, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  /// Gradient buffer for a node, allocated as zeros on first use.
  Tensor& grad(NodeId id);
  bool has_grad(NodeId id) const { return !nodes_[id].grad.values().empty(); }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  std::vector<float>& param_grad(const Parameter& p);

  /// Seeds d(loss)/d(root) and runs every recorded backward step in reverse.
  void backward(NodeId root, const Tensor& seed);

  const Gradients& param_grads() const noexcept { return param_grads_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = true;
  };

  bool record_;
  std::vector<Node> nodes_;
  Gradients param_grads_;
};

}  // namespace fforge::nn
