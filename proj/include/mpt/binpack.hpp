#pragma once
// Bit-packed tickets. Planes are row-major, 64-bit words, LSB-first
// (bit b of word w is column 64w + b); rows are padded to a word boundary
// and padding bits are 0 in every plane.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "mpt/layers.hpp"

namespace mpt::binpack {

inline constexpr std::int64_t kWordBits = 64;

constexpr std::int64_t words_for(std::int64_t bits) { return (bits + kWordBits - 1) / kWordBits; }

struct PackedLayer {
  LayerKind kind = LayerKind::Dense;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::int64_t words_per_row = 0;
  ConvGeometry geom{};
  std::vector<std::uint64_t> sign_plane;  // 1 <=> +1
  std::vector<std::uint64_t> mask_plane;  // 1 <=> kept
  float alpha = 0.0f;

  const std::uint64_t* sign_row(std::int64_t r) const { return sign_plane.data() + r * words_per_row; }
  const std::uint64_t* mask_row(std::int64_t r) const { return mask_plane.data() + r * words_per_row; }
  std::int64_t nonzero() const;
};

// sgn(u) bits for one activation vector. valid, when non-empty, marks entries that
// exist; zero-padding positions of a convolution window have valid = 0 and contribute nothing.
struct PackedActivation {
  std::int64_t length = 0;
  std::vector<std::uint64_t> bits;
  std::vector<std::uint64_t> valid;
};

PackedLayer pack(const MaskedBinaryLayer& layer);
// alpha (M (.) B) as a dense [rows, cols] tensor.
Tensor unpack(const PackedLayer& layer);
// Bit for x_i >= 0.
PackedActivation pack_signs(std::span<const float> x);

// popcount(m & v) - 2 popcount((s ^ x) & m & v): the +-1 dot product over kept, valid entries.
std::int64_t xnor_count(const std::uint64_t* sign, const std::uint64_t* mask, const std::uint64_t* x,
                        const std::uint64_t* valid, std::int64_t words);
// alpha * sum over the mask of B_i x_i for B, x in {-1,+1}. Throws DimensionError on a length mismatch.
float xnor_dot(const PackedLayer& w, std::int64_t row, const PackedActivation& x);
// sum_{mask & sign} x_i - sum_{mask & !sign} x_i, unscaled.
float masked_signed_sum(const PackedLayer& w, std::int64_t row, const float* x);
// alpha * masked_signed_sum.
float masked_signed_dot(const PackedLayer& w, std::int64_t row, std::span<const float> x);

struct PackedBlock {
  PackedLayer layer;
  std::optional<BnFold> bn;
  Activation act = Activation::None;
  bool pool = false;
  bool pool_before_bn = false;
  bool residual = false;
  bool flatten_input = false;
  Shape in_shape;
  Shape out_shape;
};

struct PackedNetwork {
  ActivationMode mode = ActivationMode::Real;
  Shape input_shape;
  std::int64_t num_classes = 0;
  float bn_eps = 1e-5f;
  std::vector<PackedBlock> blocks;

  // Blocks whose input is a sign activation (1/1 mode, every block after the first).
  bool binary_input(std::size_t block) const { return mode == ActivationMode::Binary && block > 0; }
};

// Packs every layer and folds eval-mode BatchNorm into per-channel scale/shift.
PackedNetwork pack_network(const NetworkState& net);

struct PackedTrace {
  // Unscaled layer products, same layout as EvalTrace::raw.
  std::vector<Tensor> raw;
  // Integer accumulators of binary-input layers (empty for real-input layers).
  std::vector<std::vector<std::int32_t>> accumulators;
};

Tensor packed_forward(const PackedNetwork& net, const Tensor& x, PackedTrace* trace = nullptr);
// Runs blocks [first, end) on a real activation tensor h. A 1/1 network only accepts
// real activations at block 0; anything else raises ModeError, as does a non-sign value
// fed to a binary-input block.
Tensor packed_forward_from(const PackedNetwork& net, std::size_t first, const Tensor& h, PackedTrace* trace = nullptr);
// Same, from packed sign activations (one per sample). Only valid for binary-input blocks.
Tensor packed_forward_from(const PackedNetwork& net, std::size_t first, std::span<const PackedActivation> h,
                           PackedTrace* trace = nullptr);

// Per-layer record: rows u32, cols u32, alpha f32, bn channel count u32, scale f32[c], shift f32[c],
// sign words u64[rows * words_per_row], mask words u64[rows * words_per_row]; all little-endian.
void write_layer_record(std::ostream& out, const PackedLayer& layer, const BnFold* bn);
struct LayerRecord {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  float alpha = 0.0f;
  std::optional<BnFold> bn;
  std::vector<std::uint64_t> sign_plane;
  std::vector<std::uint64_t> mask_plane;
};
// offset tracks the absolute byte position for error messages.
LayerRecord read_layer_record(std::istream& in, std::uint64_t& offset);
std::uint64_t layer_record_bytes(const PackedLayer& layer, std::int64_t bn_channels);
// Sum of layer records for a whole network.
std::uint64_t packed_payload_bytes(const PackedNetwork& net);

}  // namespace mpt::binpack
