#pragma once
// Checkpoint container, little-endian throughout:
//   "MPTK" | version u32 | kind u32 | meta length u32 | meta JSON | layer count u32 | layers
// Full layers: rows u32, cols u32, alpha f32, flags u32 (1 scores, 2 prunable, 4 bn),
//   [bn: channels u32, eps f32, running_mean, running_var, gamma, beta as f32[c]],
//   [scores f32[rows*cols]], sign words, mask words.
// Packed layers: binpack layer records (folded BN, no scores).
// W is never stored; it is regenerated from meta.seed and the network spec and
// checked against meta.weights_hash and the stored sign plane.

#include <cstdint>
#include <filesystem>
#include <optional>

#include "mpt/binpack.hpp"
#include "mpt/config.hpp"
#include "mpt/layers.hpp"

namespace mpt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint32_t { Full = 0, Packed = 1 };

// Metadata every checkpoint carries. network and seed are required to rebuild W.
Json checkpoint_meta(const RunConfig& cfg, const NetworkState& net, int epoch, const Json& metrics);

void save_checkpoint(const std::filesystem::path& path, const NetworkState& net, const Json& meta,
                     bool with_scores = true);
void save_packed_checkpoint(const std::filesystem::path& path, const NetworkState& net, const Json& meta);

struct LoadedCheckpoint {
  CheckpointKind kind = CheckpointKind::Full;
  Json meta;
  NetworkState net;  // full: restored state; packed: rebuilt W, masks and gains from the packed planes
  std::optional<binpack::PackedNetwork> packed;
  bool has_scores = false;
};

// Throws IoError if the file cannot be opened and FormatError on malformed content.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mpt
