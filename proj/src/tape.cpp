#include "mpt/tape.hpp"

#include "mpt/errors.hpp"

namespace mpt {

std::span<const float> BackwardContext::out_grad() const { return tape_.node(self_).grad; }

const Tensor& BackwardContext::value(VarId id) const { return tape_.node(id).value; }

bool BackwardContext::needs_grad(VarId id) const { return tape_.node(id).requires_grad; }

std::span<float> BackwardContext::grad(VarId id) {
  auto& n = tape_.node(id);
  if (!n.requires_grad) throw ContractError("gradient requested for a constant tape node");
  if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(n.value.size()), 0.0f);
  return n.grad;
}

Tape::VarId Tape::input(Tensor value) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return nodes_.size() - 1;
}

Tape::VarId Tape::record(Tensor value, std::vector<VarId> parents, BackwardFn fn, bool owns_params) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  bool req = owns_params;
  for (auto p : parents) {
    if (p >= nodes_.size()) throw ContractError("tape parent id out of range");
    req = req || nodes_[p].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, std::move(parents), std::move(fn), req});
  return nodes_.size() - 1;
}

const Tensor& Tape::value(VarId id) const { return node(id).value; }

bool Tape::requires_grad(VarId id) const { return node(id).requires_grad; }

Tape::Node& Tape::node(VarId id) {
  if (id >= nodes_.size()) throw ContractError("tape node id out of range");
  return nodes_[id];
}

const Tape::Node& Tape::node(VarId id) const {
  if (id >= nodes_.size()) throw ContractError("tape node id out of range");
  return nodes_[id];
}

void Tape::backward(VarId loss) {
  if (consumed_) throw ContractError("backward() called twice without a new forward pass");
  if (nodes_.empty()) throw ContractError("backward() called before any forward pass");
  auto& root = node(loss);
  if (root.value.size() != 1) throw ContractError("backward() requires a scalar loss");
  consumed_ = true;
  order_.clear();
  if (!root.requires_grad) return;
  root.grad.assign(1, 1.0f);
  for (VarId id = loss + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (!n.fn || n.grad.empty() || !n.requires_grad) continue;
    BackwardContext ctx(*this, id);
    n.fn(ctx);
    order_.push_back(id);
  }
}

}  // namespace mpt
