#include "fforge/nn/tape.hpp"

#include "fforge/error.hpp"

namespace fforge::nn {

NodeId Tape::input(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, requires_grad && record_});
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::push(Tensor value, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), Tensor{}, record_ ? std::move(backward) : nullptr, record_});
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor& Tape::grad(NodeId id) {
  Node& node = nodes_[id];
  if (node.grad.numel() != node.value.numel() || node.grad.shape() != node.value.shape()) {
    node.grad = Tensor(node.value.shape());
  }
  return node.grad;
}

std::vector<float>& Tape::param_grad(const Parameter& p) {
  auto& g = param_grads_[&p];
  if (g.size() != p.value.size()) g.assign(p.value.size(), 0.0f);
  return g;
}

void Tape::backward(NodeId root, const Tensor& seed) {
  if (!record_) throw Error(ErrorCode::InvalidParams, "backward on a non-recording tape");
  if (seed.shape() != nodes_[root].value.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient seed " + to_string(seed.shape()) +
                                              " vs node " + to_string(nodes_[root].value.shape()));
  }
  grad(root).add(seed);
  for (NodeId id = root; id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.backward && has_grad(id)) node.backward(*this, id);
  }
}

}  // namespace fforge::nn
