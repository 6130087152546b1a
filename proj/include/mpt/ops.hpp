#pragma once

// Dense and convolution kernels over masked binary weights, plus the small
// set of recorded ops the ticket search needs. Only pruning scores and
// BatchNorm affine parameters ever receive gradients.

#include <cstdint>
#include <span>

#include "mpt/tape.hpp"
#include "mpt/tensor.hpp"

namespace mpt {

struct ConvGeometry {
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t padding = 1;

  void validate() const;
  std::int64_t out_size(std::int64_t in) const;
};

// Effective weight of a layer is alpha * ternary, with ternary = M (.) B for
// binary tickets. Diagnostic paths pass real matrices (M (.) W) with alpha = 1.
struct MaskedBinaryOperand {
  float alpha = 0.0f;
  const Tensor* ternary = nullptr;  // [rows, cols]
  const Tensor* sign = nullptr;     // B, used by the straight-through score gradient
  Tensor* scores = nullptr;         // receives dL/dS during backward; may be null
};

// x[batch, in] -> x (alpha (M (.) B))^T. M in {0,1}, B in {-1,+1}.
Tensor matmul_masked_binary(const Tensor& x, float alpha, const Tensor& mask, const Tensor& sign);
// x[N, C, H, W] with weights [Cout, C*k*k]; im2col semantics, zero padding.
Tensor conv2d_masked_binary(const Tensor& x, float alpha, const Tensor& mask, const Tensor& sign,
                            ConvGeometry geom);

// out = scale * (x W^T). When raw is non-null it receives the unscaled product.
Tensor linear_scaled(const Tensor& x, const Tensor& weight, float scale, Tensor* raw = nullptr);
Tensor conv2d_scaled(const Tensor& x, const Tensor& weight, float scale, ConvGeometry geom,
                     Tensor* raw = nullptr);

Tensor relu(const Tensor& x);
// sgn with sgn(0) := +1.
Tensor sign_act(const Tensor& x);
Tensor maxpool2d(const Tensor& x, std::int64_t window = 2);

// Per-channel affine used for eval-mode BatchNorm and for pack-time folding.
struct BnFold {
  std::vector<float> scale;
  std::vector<float> shift;
};
BnFold fold_batchnorm(std::span<const float> gamma, std::span<const float> beta, std::span<const float> mean,
                      std::span<const float> var, float eps);
// x is [N, C] or [N, C, H, W].
Tensor apply_channel_affine(const Tensor& x, const BnFold& fold);

// Image patch extraction for one sample: in [C, H, W] -> cols [C*k*k, OH*OW].
void im2col(const float* in, std::int64_t channels, std::int64_t height, std::int64_t width,
            const ConvGeometry& g, float* cols);
// Adjoint of im2col: accumulates cols back into out [C, H, W].
void col2im(const float* cols, std::int64_t channels, std::int64_t height, std::int64_t width,
            const ConvGeometry& g, float* out);

namespace tape_ops {

using VarId = Tape::VarId;

VarId linear(Tape& tape, VarId x, const MaskedBinaryOperand& w);
VarId conv2d(Tape& tape, VarId x, const MaskedBinaryOperand& w, ConvGeometry geom);
VarId relu(Tape& tape, VarId x);
// Forward uses sgn; backward multiplies by the spline surrogate s_t'(x).
VarId sign(Tape& tape, VarId x, float spline_t);
VarId maxpool2d(Tape& tape, VarId x, std::int64_t window = 2);
VarId add(Tape& tape, VarId a, VarId b);
VarId flatten(Tape& tape, VarId x);

struct BatchNormParams {
  Tensor* gamma = nullptr;
  Tensor* beta = nullptr;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  float eps = 1e-5f;
  float momentum = 0.1f;
  bool learn_affine = false;
};
// Batch statistics; updates running stats in place.
VarId batchnorm(Tape& tape, VarId x, const BatchNormParams& bn);

// Mean softmax cross-entropy over the batch; returns a scalar node.
VarId softmax_cross_entropy(Tape& tape, VarId logits, std::span<const int> labels);

}  // namespace tape_ops

// Eager mean cross-entropy (no tape).
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace mpt
