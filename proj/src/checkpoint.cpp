#include "mpt/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "mpt/binio.hpp"
#include "mpt/errors.hpp"

namespace mpt {

namespace {

constexpr char kMagic[4] = {'M', 'P', 'T', 'K'};
constexpr std::uint32_t kHasScores = 1;
constexpr std::uint32_t kPrunable = 2;
constexpr std::uint32_t kHasBn = 4;

void put_floats(std::ostream& out, const Tensor& t) { binio::put_span(out, t.data()); }

void get_floats(std::istream& in, Tensor& t, std::uint64_t& off, const char* what) {
  binio::get_span(in, t.data(), off, what);
}

void write_header(std::ostream& out, CheckpointKind kind, const Json& meta, std::size_t layers) {
  out.write(kMagic, 4);
  binio::put<std::uint32_t>(out, kCheckpointVersion);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(kind));
  const std::string m = meta.dump();
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.size()));
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(layers));
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  return out;
}

// Rebuilds W from the metadata and checks it against the recorded hash.
NetworkState rebuild(const Json& meta) {
  NetworkState net;
  try {
    float spline_t = 1.0f;
    const NetworkSpec spec = network_from_json(meta.at("network"), nullptr, &spline_t);
    net = build_network(spec, meta.at("seed").get<std::uint64_t>());
    net.spline_t = spline_t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata incomplete: ") + e.what(), 16);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint network spec invalid: ") + e.what(), 16);
  }
  const std::string expect = meta.value("weights_hash", "");
  const std::string got = hex64(weights_hash(net));
  if (expect != got) {
    throw FormatError("regenerated weights hash " + got + " does not match recorded " + expect, 16);
  }
  return net;
}

void check_dims(const MaskedBinaryLayer& l, std::int64_t rows, std::int64_t cols, std::size_t i, std::uint64_t off) {
  if (rows != l.rows || cols != l.cols) {
    throw FormatError("layer " + std::to_string(i) + " is " + std::to_string(rows) + "x" + std::to_string(cols) +
                          ", network expects " + std::to_string(l.rows) + "x" + std::to_string(l.cols),
                      off);
  }
}

void check_signs(const binpack::PackedLayer& expect, const std::vector<std::uint64_t>& got, std::size_t i,
                 std::uint64_t off) {
  if (expect.sign_plane != got) {
    throw FormatError("layer " + std::to_string(i) + " sign plane does not match sgn(W) of the regenerated weights",
                      off);
  }
}

// Writes the mask plane back into a dense layer.
void restore_mask(MaskedBinaryLayer& l, const std::vector<std::uint64_t>& mask_plane) {
  const auto wpr = binpack::words_for(l.cols);
  for (std::int64_t r = 0; r < l.rows; ++r) {
    for (std::int64_t c = 0; c < l.cols; ++c) {
      const auto w = mask_plane[static_cast<std::size_t>(r * wpr + c / 64)];
      l.mask[r * l.cols + c] = ((w >> (c % 64)) & 1u) ? 1.0f : 0.0f;
    }
  }
  l.refresh_ternary();
}

}  // namespace

Json checkpoint_meta(const RunConfig& cfg, const NetworkState& net, int epoch, const Json& metrics) {
  Json m;
  m["config_hash"] = hex64(cfg.hash());
  m["seed"] = net.seed;
  m["epoch"] = epoch;
  m["metrics"] = metrics;
  m["network"] = network_to_json(cfg);
  m["mode"] = to_string(net.spec.activation);
  m["weights_hash"] = hex64(weights_hash(net));
  m["config"] = cfg.doc;
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkState& net, const Json& meta, bool with_scores) {
  Json m = meta;
  m["format"] = "full";
  auto out = open_out(path);
  write_header(out, CheckpointKind::Full, m, net.blocks.size());
  for (const auto& b : net.blocks) {
    const auto& l = b.layer;
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(l.rows));
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(l.cols));
    binio::put<float>(out, l.alpha);
    std::uint32_t flags = 0;
    if (with_scores) flags |= kHasScores;
    if (l.prunable) flags |= kPrunable;
    if (b.bn) flags |= kHasBn;
    binio::put<std::uint32_t>(out, flags);
    if (b.bn) {
      binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(b.bn->channels()));
      binio::put<float>(out, b.bn->eps);
      put_floats(out, b.bn->running_mean);
      put_floats(out, b.bn->running_var);
      put_floats(out, b.bn->gamma);
      put_floats(out, b.bn->beta);
    }
    if (with_scores) put_floats(out, l.scores);
    const auto p = binpack::pack(l);
    binio::put_span<std::uint64_t>(out, p.sign_plane);
    binio::put_span<std::uint64_t>(out, p.mask_plane);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void save_packed_checkpoint(const std::filesystem::path& path, const NetworkState& net, const Json& meta) {
  Json m = meta;
  m["format"] = "packed";
  m["mode"] = to_string(net.spec.activation);
  const auto packed = binpack::pack_network(net);
  auto out = open_out(path);
  write_header(out, CheckpointKind::Packed, m, packed.blocks.size());
  for (const auto& b : packed.blocks) write_layer_record(out, b.layer, b.bn ? &*b.bn : nullptr);
  if (!out) throw IoError("write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::uint64_t off = 0;
  char magic[4];
  binio::read_bytes(in, magic, 4, off, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic, expected MPTK", 0);
  const auto version = binio::get<std::uint32_t>(in, off, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), off - 4);
  }
  const auto kind_raw = binio::get<std::uint32_t>(in, off, "kind");
  if (kind_raw > 1) throw FormatError("unknown checkpoint kind " + std::to_string(kind_raw), off - 4);
  const auto meta_len = binio::get<std::uint32_t>(in, off, "metadata length");
  std::string meta_text(meta_len, '\0');
  const auto meta_off = off;
  binio::read_bytes(in, meta_text.data(), meta_len, off, "metadata");

  LoadedCheckpoint ck;
  ck.kind = static_cast<CheckpointKind>(kind_raw);
  try {
    ck.meta = Json::parse(meta_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("metadata is not JSON: ") + e.what(), meta_off);
  }
  ck.net = rebuild(ck.meta);
  auto& net = ck.net;

  const auto layers = binio::get<std::uint32_t>(in, off, "layer count");
  if (layers != net.blocks.size()) {
    throw FormatError("checkpoint has " + std::to_string(layers) + " layers, network has " +
                          std::to_string(net.blocks.size()),
                      off - 4);
  }

  if (ck.kind == CheckpointKind::Full) {
    for (std::size_t i = 0; i < layers; ++i) {
      auto& b = net.blocks[i];
      auto& l = b.layer;
      const auto at = off;
      const auto rows = binio::get<std::uint32_t>(in, off, "layer rows");
      const auto cols = binio::get<std::uint32_t>(in, off, "layer cols");
      check_dims(l, rows, cols, i, at);
      l.alpha = binio::get<float>(in, off, "alpha");
      if (!(l.alpha >= 0.0f)) throw FormatError("negative or NaN alpha in layer " + std::to_string(i), off - 4);
      const auto flags = binio::get<std::uint32_t>(in, off, "layer flags");
      if (flags & ~(kHasScores | kPrunable | kHasBn)) throw FormatError("unknown layer flags", off - 4);
      l.prunable = (flags & kPrunable) != 0;
      if (((flags & kHasBn) != 0) != b.bn.has_value()) {
        throw FormatError("layer " + std::to_string(i) + " BatchNorm presence differs from the network spec", off - 4);
      }
      if (b.bn) {
        const auto c = binio::get<std::uint32_t>(in, off, "bn channels");
        if (c != b.bn->channels()) throw FormatError("bn channel count mismatch", off - 4);
        b.bn->eps = binio::get<float>(in, off, "bn eps");
        get_floats(in, b.bn->running_mean, off, "bn running mean");
        get_floats(in, b.bn->running_var, off, "bn running var");
        get_floats(in, b.bn->gamma, off, "bn gamma");
        get_floats(in, b.bn->beta, off, "bn beta");
      }
      if (flags & kHasScores) {
        get_floats(in, l.scores, off, "scores");
        ck.has_scores = true;
      }
      const auto expect = binpack::pack(l);
      std::vector<std::uint64_t> sign(expect.sign_plane.size()), mask(expect.mask_plane.size());
      const auto sign_off = off;
      binio::get_span<std::uint64_t>(in, sign, off, "sign plane");
      check_signs(expect, sign, i, sign_off);
      binio::get_span<std::uint64_t>(in, mask, off, "mask plane");
      restore_mask(l, mask);
    }
  } else {
    binpack::PackedNetwork packed = binpack::pack_network(net);
    for (std::size_t i = 0; i < layers; ++i) {
      auto& pb = packed.blocks[i];
      const auto at = off;
      auto rec = binpack::read_layer_record(in, off);
      check_dims(net.blocks[i].layer, rec.rows, rec.cols, i, at);
      check_signs(pb.layer, rec.sign_plane, i, at);
      if (rec.bn.has_value() != pb.bn.has_value()) {
        throw FormatError("layer " + std::to_string(i) + " BatchNorm presence differs from the network spec", at);
      }
      pb.layer.alpha = rec.alpha;
      pb.layer.mask_plane = std::move(rec.mask_plane);
      pb.bn = std::move(rec.bn);
      auto& l = net.blocks[i].layer;
      l.alpha = rec.alpha;
      restore_mask(l, pb.layer.mask_plane);
    }
    ck.packed = std::move(packed);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after last layer", off);
  return ck;
}

}  // namespace mpt
