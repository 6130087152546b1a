#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mpt/tensor.hpp"

namespace mpt {

class Tape;

// Handed to a node's backward closure. Parent gradients are accumulated with +=.
class BackwardContext {
 public:
  using VarId = std::size_t;

  std::span<const float> out_grad() const;
  const Tensor& value(VarId id) const;
  bool needs_grad(VarId id) const;
  std::span<float> grad(VarId id);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, VarId self) : tape_(tape), self_(self) {}
  Tape& tape_;
  VarId self_;
};

// Linear record of forward operations. Gradients flow only into nodes that
// require them; parameters (scores, BN affine) are updated by the closures
// themselves, weights are captured as constants.
class Tape {
 public:
  using VarId = std::size_t;
  using BackwardFn = std::function<void(BackwardContext&)>;

  // Constant leaf (data batch); never receives a gradient.
  VarId input(Tensor value);
  // requires_grad marks nodes that own or lead to trainable parameters.
  VarId record(Tensor value, std::vector<VarId> parents, BackwardFn fn, bool owns_params);

  const Tensor& value(VarId id) const;
  bool requires_grad(VarId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse sweep from a scalar node. A tape supports exactly one sweep.
  void backward(VarId loss);
  bool consumed() const noexcept { return consumed_; }
  // Node ids in the order their closures ran during the last backward().
  const std::vector<VarId>& backward_order() const noexcept { return order_; }

 private:
  friend class BackwardContext;
  struct Node {
    Tensor value;
    std::vector<float> grad;
    std::vector<VarId> parents;
    BackwardFn fn;
    bool requires_grad = false;
  };
  Node& node(VarId id);
  const Node& node(VarId id) const;

  std::vector<Node> nodes_;
  std::vector<VarId> order_;
  bool consumed_ = false;
};

}  // namespace mpt
