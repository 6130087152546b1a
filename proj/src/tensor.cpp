#include "mpt/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "mpt/errors.hpp"

namespace mpt {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (numel(shape) != size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

std::span<float> Tensor::grad() {
  if (!has_grad_) {
    grad_.assign(data_.size(), 0.0f);
    has_grad_ = true;
  }
  return grad_;
}

std::span<const float> Tensor::grad() const {
  if (!has_grad_) throw ContractError("tensor has no gradient");
  return grad_;
}

void Tensor::zero_grad() {
  grad_.assign(data_.size(), 0.0f);
  has_grad_ = true;
}

void Tensor::drop_grad() noexcept {
  grad_.clear();
  grad_.shrink_to_fit();
  has_grad_ = false;
}

}  // namespace mpt
