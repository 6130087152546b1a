#include "mpt/binpack.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "mpt/binio.hpp"
#include "mpt/errors.hpp"

namespace mpt::binpack {

namespace {

void set_bit(std::uint64_t* words, std::int64_t i) {
  words[i / kWordBits] |= std::uint64_t{1} << (i % kWordBits);
}

bool get_bit(const std::uint64_t* words, std::int64_t i) { return (words[i / kWordBits] >> (i % kWordBits)) & 1u; }

// Products of one block's layer against a real input, in the layout of linear_scaled/conv2d_scaled.
Tensor real_layer(const PackedLayer& L, const Tensor& h) {
  const auto n = h.dim(0);
  if (L.kind == LayerKind::Dense) {
    if (h.rank() != 2 || h.dim(1) != L.cols) throw DimensionError("packed dense layer input width mismatch");
    Tensor y({n, L.rows});
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t r = 0; r < L.rows; ++r) y[i * L.rows + r] = masked_signed_sum(L, r, h.ptr() + i * L.cols);
    }
    return y;
  }
  if (h.rank() != 4) throw DimensionError("packed conv layer expects [N, C, H, W] input");
  const auto c = h.dim(1), hh = h.dim(2), ww = h.dim(3);
  if (c * L.geom.kernel * L.geom.kernel != L.cols) throw DimensionError("packed conv layer channel mismatch");
  const auto oh = L.geom.out_size(hh), ow = L.geom.out_size(ww), ohw = oh * ow;
  Tensor y({n, L.rows, oh, ow});
  std::vector<float> cols(static_cast<std::size_t>(L.cols * ohw));
  std::vector<float> colt(cols.size());
  for (std::int64_t i = 0; i < n; ++i) {
    im2col(h.ptr() + i * c * hh * ww, c, hh, ww, L.geom, cols.data());
    for (std::int64_t k = 0; k < L.cols; ++k) {
      for (std::int64_t p = 0; p < ohw; ++p) colt[static_cast<std::size_t>(p * L.cols + k)] = cols[static_cast<std::size_t>(k * ohw + p)];
    }
    for (std::int64_t r = 0; r < L.rows; ++r) {
      float* dst = y.ptr() + (i * L.rows + r) * ohw;
      for (std::int64_t p = 0; p < ohw; ++p) dst[p] = masked_signed_sum(L, r, colt.data() + p * L.cols);
    }
  }
  return y;
}

// Integer accumulators of one block's layer against packed sign activations.
std::vector<std::int32_t> binary_layer(const PackedLayer& L, std::span<const PackedActivation> h, const Shape& in_shape,
                                       Shape& out_shape) {
  const auto n = static_cast<std::int64_t>(h.size());
  std::vector<std::int32_t> acc;
  if (L.kind == LayerKind::Dense) {
    out_shape = {n, L.rows};
    acc.resize(static_cast<std::size_t>(n * L.rows));
    for (std::int64_t i = 0; i < n; ++i) {
      const auto& x = h[static_cast<std::size_t>(i)];
      if (x.length != L.cols) throw DimensionError("packed activation length does not match layer cols");
      const std::uint64_t* valid = x.valid.empty() ? nullptr : x.valid.data();
      for (std::int64_t r = 0; r < L.rows; ++r) {
        acc[static_cast<std::size_t>(i * L.rows + r)] = static_cast<std::int32_t>(
            xnor_count(L.sign_row(r), L.mask_row(r), x.bits.data(), valid, L.words_per_row));
      }
    }
    return acc;
  }
  if (in_shape.size() != 3) throw DimensionError("packed conv layer expects [C, H, W] activations");
  const auto c = in_shape[0], hh = in_shape[1], ww = in_shape[2];
  const auto& g = L.geom;
  const auto oh = g.out_size(hh), ow = g.out_size(ww);
  out_shape = {n, L.rows, oh, ow};
  acc.resize(static_cast<std::size_t>(n * L.rows * oh * ow));
  std::vector<std::uint64_t> col(static_cast<std::size_t>(L.words_per_row));
  std::vector<std::uint64_t> valid(col.size());
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& x = h[static_cast<std::size_t>(i)];
    if (x.length != c * hh * ww) throw DimensionError("packed activation length does not match conv input");
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        std::fill(col.begin(), col.end(), 0);
        std::fill(valid.begin(), valid.end(), 0);
        std::int64_t j = 0;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
            for (std::int64_t kx = 0; kx < g.kernel; ++kx, ++j) {
              const auto iy = oy * g.stride - g.padding + ky, ix = ox * g.stride - g.padding + kx;
              if (iy < 0 || iy >= hh || ix < 0 || ix >= ww) continue;
              set_bit(valid.data(), j);
              if (get_bit(x.bits.data(), (ch * hh + iy) * ww + ix)) set_bit(col.data(), j);
            }
          }
        }
        for (std::int64_t r = 0; r < L.rows; ++r) {
          acc[static_cast<std::size_t>(((i * L.rows + r) * oh + oy) * ow + ox)] = static_cast<std::int32_t>(
              xnor_count(L.sign_row(r), L.mask_row(r), col.data(), valid.data(), L.words_per_row));
        }
      }
    }
  }
  return acc;
}

// Everything after the layer product, mirroring forward_eval.
Tensor finish_block(const PackedBlock& b, Tensor h, const Tensor* skip, std::size_t index) {
  if (b.layer.alpha != 1.0f) {
    for (auto& v : h.storage()) v *= b.layer.alpha;
  }
  if (b.pool && b.pool_before_bn) h = maxpool2d(h);
  if (b.bn) h = apply_channel_affine(h, *b.bn);
  if (b.act == Activation::Relu) h = relu(h);
  if (b.act == Activation::Sign) h = sign_act(h);
  if (b.pool && !b.pool_before_bn) h = maxpool2d(h);
  if (skip) {
    for (std::int64_t k = 0; k < h.size(); ++k) h[k] += (*skip)[k];
  }
  for (float v : h.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite activation in packed forward", static_cast<int>(index));
  }
  return h;
}

std::vector<PackedActivation> pack_batch(const Tensor& h) {
  const auto n = h.dim(0);
  const auto per = n ? h.size() / n : 0;
  std::vector<PackedActivation> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out.push_back(pack_signs(std::span<const float>(h.ptr() + i * per, static_cast<std::size_t>(per))));
  return out;
}

Tensor run_blocks(const PackedNetwork& net, std::size_t first, Tensor h, std::vector<PackedActivation> bits,
                  PackedTrace* trace) {
  const auto n = h.empty() && !bits.empty() ? static_cast<std::int64_t>(bits.size()) : (h.rank() ? h.dim(0) : 0);
  for (std::size_t i = first; i < net.blocks.size(); ++i) {
    const PackedBlock& b = net.blocks[i];
    Tensor raw;
    if (net.binary_input(i)) {
      if (bits.empty() && n > 0) bits = pack_batch(h);
      Shape out_shape;
      auto acc = binary_layer(b.layer, bits, b.in_shape, out_shape);
      raw = Tensor(out_shape);
      for (std::size_t k = 0; k < acc.size(); ++k) raw.storage()[k] = static_cast<float>(acc[k]);
      if (trace) trace->accumulators.push_back(std::move(acc));
    } else {
      if (b.flatten_input) h = std::move(h).reshaped({n, h.size() / std::max<std::int64_t>(n, 1)});
      raw = real_layer(b.layer, h);
      if (trace) trace->accumulators.emplace_back();
    }
    if (trace) trace->raw.push_back(raw);
    const Tensor skip = b.residual ? h : Tensor{};
    h = finish_block(b, std::move(raw), b.residual ? &skip : nullptr, i);
    bits.clear();
  }
  return h;
}

}  // namespace

std::int64_t PackedLayer::nonzero() const {
  std::int64_t c = 0;
  for (auto w : mask_plane) c += std::popcount(w);
  return c;
}

PackedLayer pack(const MaskedBinaryLayer& layer) {
  PackedLayer p;
  p.kind = layer.kind;
  p.rows = layer.rows;
  p.cols = layer.cols;
  p.geom = layer.geom;
  p.alpha = layer.alpha;
  p.words_per_row = words_for(layer.cols);
  p.sign_plane.assign(static_cast<std::size_t>(p.rows * p.words_per_row), 0);
  p.mask_plane.assign(p.sign_plane.size(), 0);
  for (std::int64_t r = 0; r < p.rows; ++r) {
    auto* s = p.sign_plane.data() + r * p.words_per_row;
    auto* m = p.mask_plane.data() + r * p.words_per_row;
    for (std::int64_t c = 0; c < p.cols; ++c) {
      const auto k = r * p.cols + c;
      if (layer.sign[k] > 0.0f) set_bit(s, c);
      if (layer.mask[k] != 0.0f) set_bit(m, c);
    }
  }
  return p;
}

Tensor unpack(const PackedLayer& layer) {
  Tensor t({layer.rows, layer.cols});
  for (std::int64_t r = 0; r < layer.rows; ++r) {
    for (std::int64_t c = 0; c < layer.cols; ++c) {
      const float m = get_bit(layer.mask_row(r), c) ? 1.0f : 0.0f;
      const float s = get_bit(layer.sign_row(r), c) ? 1.0f : -1.0f;
      t[r * layer.cols + c] = layer.alpha * m * s;
    }
  }
  return t;
}

PackedActivation pack_signs(std::span<const float> x) {
  PackedActivation a;
  a.length = static_cast<std::int64_t>(x.size());
  a.bits.assign(static_cast<std::size_t>(words_for(a.length)), 0);
  for (std::int64_t i = 0; i < a.length; ++i) {
    if (x[static_cast<std::size_t>(i)] >= 0.0f) set_bit(a.bits.data(), i);
  }
  return a;
}

std::int64_t xnor_count(const std::uint64_t* sign, const std::uint64_t* mask, const std::uint64_t* x,
                        const std::uint64_t* valid, std::int64_t words) {
  std::int64_t kept = 0, disagree = 0;
  for (std::int64_t w = 0; w < words; ++w) {
    const std::uint64_t m = valid ? mask[w] & valid[w] : mask[w];
    kept += std::popcount(m);
    disagree += std::popcount((sign[w] ^ x[w]) & m);
  }
  return kept - 2 * disagree;
}

float xnor_dot(const PackedLayer& w, std::int64_t row, const PackedActivation& x) {
  if (x.length != w.cols) {
    throw DimensionError("xnor_dot: activation length " + std::to_string(x.length) + " != layer cols " +
                         std::to_string(w.cols));
  }
  if (row < 0 || row >= w.rows) throw DimensionError("xnor_dot: row out of range");
  const std::uint64_t* valid = x.valid.empty() ? nullptr : x.valid.data();
  return w.alpha * static_cast<float>(xnor_count(w.sign_row(row), w.mask_row(row), x.bits.data(), valid, w.words_per_row));
}

float masked_signed_sum(const PackedLayer& w, std::int64_t row, const float* x) {
  const auto* s = w.sign_row(row);
  const auto* m = w.mask_row(row);
  float acc = 0.0f;
  float coef[kWordBits];
  for (std::int64_t k = 0; k < w.words_per_row; ++k) {
    const std::int64_t base = k * kWordBits;
    const std::int64_t len = std::min(kWordBits, w.cols - base);
    for (std::int64_t b = 0; b < len; ++b) {
      const bool keep = (m[k] >> b) & 1u;
      const bool pos = (s[k] >> b) & 1u;
      coef[b] = keep ? (pos ? 1.0f : -1.0f) : 0.0f;
    }
    for (std::int64_t b = 0; b < len; ++b) acc += coef[b] * x[base + b];
  }
  return acc;
}

float masked_signed_dot(const PackedLayer& w, std::int64_t row, std::span<const float> x) {
  if (static_cast<std::int64_t>(x.size()) != w.cols) {
    throw DimensionError("masked_signed_dot: input length " + std::to_string(x.size()) + " != layer cols " +
                         std::to_string(w.cols));
  }
  if (row < 0 || row >= w.rows) throw DimensionError("masked_signed_dot: row out of range");
  return w.alpha * masked_signed_sum(w, row, x.data());
}

PackedNetwork pack_network(const NetworkState& net) {
  PackedNetwork p;
  p.mode = net.spec.activation;
  p.input_shape = net.spec.input_shape;
  p.num_classes = net.spec.num_classes;
  for (const auto& b : net.blocks) {
    PackedBlock pb;
    pb.layer = pack(b.layer);
    if (b.bn) {
      pb.bn = b.bn->fold();
      p.bn_eps = b.bn->eps;
    }
    pb.act = b.act;
    pb.pool = b.pool;
    pb.pool_before_bn = b.pool_before_bn;
    pb.residual = b.residual;
    pb.flatten_input = b.flatten_input;
    pb.in_shape = b.in_shape;
    pb.out_shape = b.out_shape;
    p.blocks.push_back(std::move(pb));
  }
  return p;
}

Tensor packed_forward(const PackedNetwork& net, const Tensor& x, PackedTrace* trace) {
  Shape expect{x.rank() ? x.dim(0) : 0};
  expect.insert(expect.end(), net.input_shape.begin(), net.input_shape.end());
  if (x.shape() != expect) {
    throw DimensionError("input shape " + shape_str(x.shape()) + " does not match packed network input " +
                         shape_str(expect));
  }
  return packed_forward_from(net, 0, x, trace);
}

Tensor packed_forward_from(const PackedNetwork& net, std::size_t first, const Tensor& h, PackedTrace* trace) {
  if (first > net.blocks.size()) throw DimensionError("packed block index out of range");
  if (trace) {
    trace->raw.clear();
    trace->accumulators.clear();
  }
  if (net.binary_input(first)) {
    for (float v : h.data()) {
      if (v != 1.0f && v != -1.0f) {
        throw ModeError("packed 1/1 network received a real activation at block " + std::to_string(first) +
                        "; only sign activations are valid after the first layer");
      }
    }
  }
  Tensor copy = h;
  copy.drop_grad();
  return run_blocks(net, first, std::move(copy), {}, trace);
}

Tensor packed_forward_from(const PackedNetwork& net, std::size_t first, std::span<const PackedActivation> h,
                           PackedTrace* trace) {
  if (first >= net.blocks.size()) throw DimensionError("packed block index out of range");
  if (!net.binary_input(first)) {
    throw ModeError("block " + std::to_string(first) + " of a " + to_string(net.mode) +
                    " network takes real activations, not packed signs");
  }
  if (trace) {
    trace->raw.clear();
    trace->accumulators.clear();
  }
  return run_blocks(net, first, Tensor{}, std::vector<PackedActivation>(h.begin(), h.end()), trace);
}

void write_layer_record(std::ostream& out, const PackedLayer& layer, const BnFold* bn) {
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(layer.rows));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(layer.cols));
  binio::put<float>(out, layer.alpha);
  const auto c = bn ? static_cast<std::uint32_t>(bn->scale.size()) : 0u;
  binio::put<std::uint32_t>(out, c);
  if (bn) {
    binio::put_span<float>(out, bn->scale);
    binio::put_span<float>(out, bn->shift);
  }
  binio::put_span<std::uint64_t>(out, layer.sign_plane);
  binio::put_span<std::uint64_t>(out, layer.mask_plane);
}

LayerRecord read_layer_record(std::istream& in, std::uint64_t& offset) {
  LayerRecord r;
  r.rows = binio::get<std::uint32_t>(in, offset, "layer rows");
  r.cols = binio::get<std::uint32_t>(in, offset, "layer cols");
  r.alpha = binio::get<float>(in, offset, "layer gain");
  if (!std::isfinite(r.alpha) || r.alpha < 0.0f) throw FormatError("invalid layer gain", offset - 4);
  const auto c = binio::get<std::uint32_t>(in, offset, "batchnorm channel count");
  if (c > 0) {
    if (c > (1u << 24)) throw FormatError("implausible batchnorm channel count", offset - 4);
    BnFold f;
    f.scale.resize(c);
    f.shift.resize(c);
    binio::get_span<float>(in, f.scale, offset, "batchnorm scale");
    binio::get_span<float>(in, f.shift, offset, "batchnorm shift");
    r.bn = std::move(f);
  }
  if (r.rows > (1 << 24) || r.cols > (1 << 28)) throw FormatError("implausible layer dimensions", offset);
  const auto words = static_cast<std::size_t>(r.rows * words_for(r.cols));
  r.sign_plane.resize(words);
  r.mask_plane.resize(words);
  const auto sign_at = offset;
  binio::get_span<std::uint64_t>(in, r.sign_plane, offset, "sign plane");
  const auto mask_at = offset;
  binio::get_span<std::uint64_t>(in, r.mask_plane, offset, "mask plane");
  const auto wpr = words_for(r.cols);
  const std::int64_t tail = r.cols % kWordBits;
  if (tail != 0) {
    const std::uint64_t pad = ~((std::uint64_t{1} << tail) - 1);
    for (std::int64_t row = 0; row < r.rows; ++row) {
      const auto k = static_cast<std::size_t>(row * wpr + wpr - 1);
      if (r.sign_plane[k] & pad) throw FormatError("nonzero padding bit in sign plane", sign_at + 8 * k);
      if (r.mask_plane[k] & pad) throw FormatError("nonzero padding bit in mask plane", mask_at + 8 * k);
    }
  }
  return r;
}

std::uint64_t layer_record_bytes(const PackedLayer& layer, std::int64_t bn_channels) {
  return 16 + 8 * static_cast<std::uint64_t>(bn_channels) + 16 * static_cast<std::uint64_t>(layer.rows * layer.words_per_row);
}

std::uint64_t packed_payload_bytes(const PackedNetwork& net) {
  std::uint64_t total = 0;
  for (const auto& b : net.blocks) {
    total += layer_record_bytes(b.layer, b.bn ? static_cast<std::int64_t>(b.bn->scale.size()) : 0);
  }
  return total;
}

}  // namespace mpt::binpack
