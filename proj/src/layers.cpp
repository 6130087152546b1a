#include "mpt/layers.hpp"

#include <cmath>
#include <random>

#include "mpt/errors.hpp"

namespace mpt {

namespace {

std::mt19937_64 layer_rng(std::uint64_t seed, std::size_t layer, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(layer), stream};
  return std::mt19937_64(seq);
}

void init_layer(MaskedBinaryLayer& L, WeightInit init, std::uint64_t seed, std::size_t index) {
  const auto n = static_cast<std::size_t>(L.count());
  const double fan_in = static_cast<double>(L.cols);
  const double std_dev = std::sqrt(2.0 / fan_in);
  L.weights = Tensor({L.rows, L.cols});
  auto wrng = layer_rng(seed, index, 1);
  if (init == WeightInit::KaimingNormal) {
    std::normal_distribution<double> dist(0.0, std_dev);
    for (std::size_t i = 0; i < n; ++i) L.weights.storage()[i] = static_cast<float>(dist(wrng));
  } else {
    std::bernoulli_distribution coin(0.5);
    const auto c = static_cast<float>(std_dev);
    for (std::size_t i = 0; i < n; ++i) L.weights.storage()[i] = coin(wrng) ? c : -c;
  }
  // Score scale follows the kaiming-uniform default used for linear layers (bound 1/sqrt(fan_in)).
  L.scores = Tensor({L.rows, L.cols});
  auto srng = layer_rng(seed, index, 2);
  const double bound = 1.0 / std::sqrt(fan_in);
  std::uniform_real_distribution<double> sdist(-bound, bound);
  for (std::size_t i = 0; i < n; ++i) L.scores.storage()[i] = static_cast<float>(sdist(srng));

  L.mask = Tensor({L.rows, L.cols}, 1.0f);
  L.sign = Tensor({L.rows, L.cols});
  double l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float w = L.weights.storage()[i];
    L.sign.storage()[i] = w >= 0.0f ? 1.0f : -1.0f;
    l1 += std::abs(static_cast<double>(w));
  }
  L.alpha = static_cast<float>(l1 / static_cast<double>(n));
  L.refresh_ternary();
}

void check_finite(const Tensor& t, int layer) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite activation", layer);
  }
}

std::int64_t scaled_width(std::int64_t w, double mult) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(w) * mult));
}

Tensor masked_real(const MaskedBinaryLayer& L) {
  Tensor t({L.rows, L.cols});
  for (std::int64_t i = 0; i < L.count(); ++i) t[i] = L.weights[i] * L.mask[i];
  return t;
}

}  // namespace

std::string to_string(ActivationMode m) { return m == ActivationMode::Real ? "mpt-1/32" : "mpt-1/1"; }
std::string to_string(BnPolicy p) { return p == BnPolicy::Frozen ? "frozen" : "learned"; }
std::string to_string(WeightInit w) { return w == WeightInit::KaimingNormal ? "kaiming-normal" : "signed-constant"; }

ActivationMode parse_activation_mode(const std::string& s) {
  if (s == "mpt-1/32" || s == "1/32") return ActivationMode::Real;
  if (s == "mpt-1/1" || s == "1/1") return ActivationMode::Binary;
  throw ConfigError("unknown activation mode '" + s + "'");
}

BnPolicy parse_bn_policy(const std::string& s) {
  if (s == "frozen") return BnPolicy::Frozen;
  if (s == "learned") return BnPolicy::Learned;
  throw ConfigError("unknown bn_policy '" + s + "'");
}

WeightInit parse_weight_init(const std::string& s) {
  if (s == "kaiming-normal") return WeightInit::KaimingNormal;
  if (s == "signed-constant") return WeightInit::SignedConstant;
  throw ConfigError("unknown init '" + s + "'");
}

NetworkSpec NetworkSpec::mlp(Shape input, std::vector<std::int64_t> widths, std::int64_t classes) {
  NetworkSpec s;
  s.input_shape = std::move(input);
  s.num_classes = classes;
  for (auto w : widths) s.hidden.push_back(LayerDesc{LayerKind::Dense, w});
  return s;
}

NetworkSpec NetworkSpec::conv(int depth, Shape input, std::int64_t classes) {
  if (depth < 2 || depth > 8 || depth % 2 != 0) throw ParameterError("Conv-d depth must be 2, 4, 6 or 8");
  NetworkSpec s;
  s.input_shape = std::move(input);
  s.num_classes = classes;
  const std::int64_t channels[] = {64, 128, 256, 512};
  for (int pair = 0; pair < depth / 2; ++pair) {
    s.hidden.push_back(LayerDesc{LayerKind::Conv, channels[pair], ConvGeometry{3, 1, 1}, false});
    s.hidden.push_back(LayerDesc{LayerKind::Conv, channels[pair], ConvGeometry{3, 1, 1}, true});
  }
  s.hidden.push_back(LayerDesc{LayerKind::Dense, 256});
  s.hidden.push_back(LayerDesc{LayerKind::Dense, 256});
  return s;
}

NetworkSpec NetworkSpec::vgg_small(Shape input, std::int64_t classes) {
  NetworkSpec s;
  s.input_shape = std::move(input);
  s.num_classes = classes;
  s.batchnorm = true;
  for (std::int64_t c : {128, 256, 512}) {
    s.hidden.push_back(LayerDesc{LayerKind::Conv, c, ConvGeometry{3, 1, 1}, false});
    s.hidden.push_back(LayerDesc{LayerKind::Conv, c, ConvGeometry{3, 1, 1}, true});
  }
  return s;
}

BatchNormState::BatchNormState(std::int64_t channels, bool trainable_)
    : running_mean({channels}, 0.0f),
      running_var({channels}, 1.0f),
      gamma({channels}, 1.0f),
      beta({channels}, 0.0f),
      trainable(trainable_) {}

BnFold BatchNormState::fold() const {
  return fold_batchnorm(gamma.data(), beta.data(), running_mean.data(), running_var.data(), eps);
}

std::int64_t MaskedBinaryLayer::nonzero() const {
  std::int64_t n = 0;
  for (float m : mask.data()) n += m != 0.0f;
  return n;
}

void MaskedBinaryLayer::refresh_ternary() {
  ternary = Tensor({rows, cols});
  for (std::int64_t i = 0; i < count(); ++i) ternary[i] = mask[i] * sign[i];
}

MaskedBinaryOperand MaskedBinaryLayer::operand(bool with_score_grad) {
  return MaskedBinaryOperand{alpha, &ternary, &sign, with_score_grad ? &scores : nullptr};
}

std::int64_t NetworkState::param_count() const {
  std::int64_t n = 0;
  for (const auto& b : blocks) n += b.layer.count();
  return n;
}

std::int64_t NetworkState::ticket_params() const {
  std::int64_t n = 0;
  for (const auto& b : blocks) n += b.layer.nonzero();
  return n;
}

NetworkState build_network(const NetworkSpec& spec, std::uint64_t seed) {
  if (spec.input_shape.size() != 1 && spec.input_shape.size() != 3) {
    throw ParameterError("input shape must be {features} or {C, H, W}");
  }
  for (auto d : spec.input_shape) {
    if (d <= 0) throw ParameterError("input dimensions must be positive");
  }
  if (spec.num_classes < 1) throw ParameterError("num_classes must be >= 1");
  if (!(spec.width_multiplier > 0.0)) throw ParameterError("width multiplier must be > 0");

  const bool binary = spec.activation == ActivationMode::Binary;
  NetworkState net;
  net.spec = spec;
  net.seed = seed;

  Shape cur = spec.input_shape;
  const std::size_t total = spec.hidden.size() + 1;
  for (std::size_t i = 0; i < total; ++i) {
    const bool last = i + 1 == total;
    LayerDesc d = last ? LayerDesc{LayerKind::Dense, spec.num_classes} : spec.hidden[i];
    const std::int64_t width = last ? d.width : scaled_width(d.width, spec.width_multiplier);
    if (width <= 0) throw ParameterError("layer width must be positive");

    Block b;
    b.layer.kind = d.kind;
    b.layer.rows = width;
    if (d.kind == LayerKind::Conv) {
      if (cur.size() != 3) throw ParameterError("conv layer " + std::to_string(i) + " follows a dense layer");
      d.geom.validate();
      b.in_shape = cur;
      b.layer.geom = d.geom;
      b.layer.cols = cur[0] * d.geom.kernel * d.geom.kernel;
      cur = {width, d.geom.out_size(cur[1]), d.geom.out_size(cur[2])};
    } else {
      b.in_shape = cur;
      if (cur.size() == 3) {
        b.flatten_input = true;
        cur = {cur[0] * cur[1] * cur[2]};
      }
      b.layer.cols = cur[0];
      cur = {width};
    }
    if (d.pool) {
      if (d.kind != LayerKind::Conv) throw ParameterError("pooling is only supported after conv layers");
      if (cur[1] < 2 || cur[2] < 2) throw ParameterError("feature map too small to pool at layer " + std::to_string(i));
      cur = {cur[0], cur[1] / 2, cur[2] / 2};
    }
    b.out_shape = cur;

    if (!last) {
      b.act = binary ? Activation::Sign : Activation::Relu;
      b.pool = d.pool;
      b.pool_before_bn = binary;
      if (binary || spec.batchnorm) b.bn.emplace(width, spec.bn_policy == BnPolicy::Learned);
      if (d.residual) {
        if (binary) throw ParameterError("residual blocks are not supported with sign activations");
        if (d.kind != LayerKind::Dense || b.in_shape != b.out_shape) {
          throw ParameterError("residual block " + std::to_string(i) + " needs a dense layer with equal in/out width");
        }
        b.residual = true;
      }
    }
    b.layer.prunable = !(spec.exempt_first_last && (i == 0 || last));
    init_layer(b.layer, spec.init, seed, i);
    net.blocks.push_back(std::move(b));
  }
  return net;
}

Tensor effective_weights(const MaskedBinaryLayer& layer) {
  Tensor t({layer.rows, layer.cols});
  for (std::int64_t i = 0; i < layer.count(); ++i) t[i] = layer.alpha * layer.mask[i] * layer.sign[i];
  return t;
}

Tensor forward_eval(const NetworkState& net, const Tensor& x, WeightSource source, EvalTrace* trace) {
  Shape expect{x.rank() ? x.dim(0) : 0};
  expect.insert(expect.end(), net.spec.input_shape.begin(), net.spec.input_shape.end());
  if (x.shape() != expect) {
    throw DimensionError("input shape " + shape_str(x.shape()) + " does not match network input " + shape_str(expect));
  }
  const auto n = x.dim(0);
  if (trace) {
    trace->raw.clear();
    trace->outputs.clear();
  }
  Tensor h = x;
  h.drop_grad();
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const Block& b = net.blocks[i];
    const MaskedBinaryLayer& L = b.layer;
    if (b.flatten_input) h = std::move(h).reshaped({n, h.size() / std::max<std::int64_t>(n, 1)});
    const Tensor skip = b.residual ? h : Tensor{};

    Tensor owned;
    const Tensor* w = &L.ternary;
    float scale = L.alpha;
    if (source == WeightSource::MaskedReal) {
      owned = masked_real(L);
      w = &owned;
      scale = 1.0f;
    } else if (source == WeightSource::DenseReal) {
      w = &L.weights;
      scale = 1.0f;
    }
    Tensor raw;
    Tensor* raw_out = trace ? &raw : nullptr;
    h = L.kind == LayerKind::Conv ? conv2d_scaled(h, *w, scale, L.geom, raw_out) : linear_scaled(h, *w, scale, raw_out);
    if (trace) trace->raw.push_back(std::move(raw));
    // relu and sign map NaN to a finite value, so check before them too.
    check_finite(h, static_cast<int>(i));

    if (b.pool && b.pool_before_bn) h = maxpool2d(h);
    if (b.bn) h = apply_channel_affine(h, b.bn->fold());
    if (b.act == Activation::Relu) h = relu(h);
    if (b.act == Activation::Sign) h = sign_act(h);
    if (b.pool && !b.pool_before_bn) h = maxpool2d(h);
    if (b.residual) {
      for (std::int64_t k = 0; k < h.size(); ++k) h[k] += skip[k];
    }
    check_finite(h, static_cast<int>(i));
    if (trace) trace->outputs.push_back(h);
  }
  return h;
}

Tape::VarId forward_search(NetworkState& net, Tape& tape, Tape::VarId x) {
  {
    const Tensor& xv = tape.value(x);
    Shape expect{xv.rank() ? xv.dim(0) : 0};
    expect.insert(expect.end(), net.spec.input_shape.begin(), net.spec.input_shape.end());
    if (xv.shape() != expect) {
      throw DimensionError("input shape " + shape_str(xv.shape()) + " does not match network input " +
                           shape_str(expect));
    }
  }
  auto h = x;
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    Block& b = net.blocks[i];
    MaskedBinaryLayer& L = b.layer;
    if (b.flatten_input) h = tape_ops::flatten(tape, h);
    const auto skip = h;
    const auto op = L.operand(true);
    h = L.kind == LayerKind::Conv ? tape_ops::conv2d(tape, h, op, L.geom) : tape_ops::linear(tape, h, op);
    check_finite(tape.value(h), static_cast<int>(i));
    if (b.pool && b.pool_before_bn) h = tape_ops::maxpool2d(tape, h);
    if (b.bn) {
      auto& bn = *b.bn;
      h = tape_ops::batchnorm(tape, h,
                              tape_ops::BatchNormParams{&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var, bn.eps,
                                                        bn.momentum, bn.trainable});
    }
    if (b.act == Activation::Relu) h = tape_ops::relu(tape, h);
    if (b.act == Activation::Sign) h = tape_ops::sign(tape, h, net.spline_t);
    if (b.pool && !b.pool_before_bn) h = tape_ops::maxpool2d(tape, h);
    if (b.residual) h = tape_ops::add(tape, h, skip);
    check_finite(tape.value(h), static_cast<int>(i));
  }
  return h;
}

Tensor forward(NetworkState& net, const Tensor& x, Mode mode) {
  if (mode == Mode::Eval) return forward_eval(net, x);
  Tape tape;
  const auto in = tape.input(x);
  return tape.value(forward_search(net, tape, in));
}

void zero_param_grads(NetworkState& net) {
  for (auto& b : net.blocks) {
    b.layer.scores.zero_grad();
    if (b.bn && b.bn->trainable) {
      b.bn->gamma.zero_grad();
      b.bn->beta.zero_grad();
    }
  }
}

std::uint64_t weights_hash(const NetworkState& net) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& b : net.blocks) {
    const auto* p = reinterpret_cast<const unsigned char*>(b.layer.weights.ptr());
    const auto len = static_cast<std::size_t>(b.layer.weights.size()) * sizeof(float);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace mpt
