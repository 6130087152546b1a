#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mpt/ops.hpp"
#include "mpt/tape.hpp"
#include "mpt/tensor.hpp"

namespace mpt {

// 1-bit weights with real activations (1/32) or with sign activations (1/1).
enum class ActivationMode { Real, Binary };
enum class BnPolicy { Frozen, Learned };
enum class WeightInit { KaimingNormal, SignedConstant };
enum class LayerKind { Dense, Conv };

std::string to_string(ActivationMode m);
std::string to_string(BnPolicy p);
std::string to_string(WeightInit w);
ActivationMode parse_activation_mode(const std::string& s);
BnPolicy parse_bn_policy(const std::string& s);
WeightInit parse_weight_init(const std::string& s);

struct LayerDesc {
  LayerKind kind = LayerKind::Dense;
  std::int64_t width = 0;  // units (dense) or output channels (conv)
  ConvGeometry geom{};     // conv only
  bool pool = false;       // 2x2 max pool attached to this block
  bool residual = false;   // y = block(x) + x; dense, 1/32 only
};

struct NetworkSpec {
  Shape input_shape;  // {features} or {C, H, W}
  std::int64_t num_classes = 10;
  // Hidden blocks; the classifier layer (dense, num_classes) is appended by build_network.
  std::vector<LayerDesc> hidden;
  ActivationMode activation = ActivationMode::Real;
  BnPolicy bn_policy = BnPolicy::Frozen;
  WeightInit init = WeightInit::KaimingNormal;
  double width_multiplier = 1.0;
  // BatchNorm after every hidden layer in 1/32 mode. 1/1 always has BN before each sign.
  bool batchnorm = false;
  // Keep the first and last layer dense (never pruned); they stay binarized.
  bool exempt_first_last = false;

  // Prunable layer count including the classifier.
  int depth() const { return static_cast<int>(hidden.size()) + 1; }

  static NetworkSpec mlp(Shape input, std::vector<std::int64_t> widths, std::int64_t classes);
  // Conv-2/4/6/8: pairs of 3x3 convs (64, 128, 256, 512 channels), 2x2 pool after each pair,
  // then a 256-256 dense head.
  static NetworkSpec conv(int depth, Shape input = {3, 32, 32}, std::int64_t classes = 10);
  // 128-128-P-256-256-P-512-512-P followed by the classifier, BN after each conv.
  static NetworkSpec vgg_small(Shape input = {3, 32, 32}, std::int64_t classes = 10);
};

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  Tensor gamma;
  Tensor beta;
  bool trainable = false;
  float eps = 1e-5f;
  float momentum = 0.1f;

  explicit BatchNormState(std::int64_t channels = 0, bool trainable_ = false);
  std::int64_t channels() const { return gamma.size(); }
  BnFold fold() const;
};

struct MaskedBinaryLayer {
  LayerKind kind = LayerKind::Dense;
  std::int64_t rows = 0;  // k_j: output units / channels
  std::int64_t cols = 0;  // k_{j-1}: inputs (dense) or C*k*k (conv)
  ConvGeometry geom{};
  Tensor weights;  // W, frozen after initialization
  Tensor scores;   // S
  Tensor mask;     // M in {0,1}
  Tensor sign;     // B = sgn(W)
  Tensor ternary;  // cached M (.) B
  float alpha = 0.0f;
  bool prunable = true;

  std::int64_t count() const { return rows * cols; }
  std::int64_t nonzero() const;
  // Rebuilds the M (.) B cache after a mask change.
  void refresh_ternary();
  MaskedBinaryOperand operand(bool with_score_grad);
};

enum class Activation { None, Relu, Sign };

// One prunable layer and what follows it. Order:
//   1/32: layer -> [BN] -> relu -> [pool] -> [+ skip]
//   1/1 : layer -> [pool] -> BN -> sign
//   classifier: layer only.
struct Block {
  MaskedBinaryLayer layer;
  std::optional<BatchNormState> bn;
  Activation act = Activation::None;
  bool pool = false;
  bool pool_before_bn = false;
  bool residual = false;
  bool flatten_input = false;  // conv -> dense transition
  Shape in_shape;              // per-sample input shape
  Shape out_shape;             // per-sample output shape
};

struct NetworkState {
  NetworkSpec spec;
  std::vector<Block> blocks;
  std::uint64_t seed = 0;
  float spline_t = 1.0f;

  std::int64_t param_count() const;    // dense count, sum of rows*cols
  std::int64_t ticket_params() const;  // sum of ||M||_0
};

enum class Mode { Search, Eval };

// Which weights the eval path multiplies with.
enum class WeightSource {
  Binary,      // alpha (M (.) B)
  MaskedReal,  // M (.) W
  DenseReal,   // W
};

NetworkState build_network(const NetworkSpec& spec, std::uint64_t seed);

// alpha (M (.) B) as a dense [rows, cols] matrix.
Tensor effective_weights(const MaskedBinaryLayer& layer);

// Per-block record of an eval pass. raw holds the unscaled layer product
// (for 1/1 hidden layers these are integer accumulators).
struct EvalTrace {
  std::vector<Tensor> raw;
  std::vector<Tensor> outputs;
};

// Pure eval-mode pass (running BN stats, no state change).
Tensor forward_eval(const NetworkState& net, const Tensor& x, WeightSource source = WeightSource::Binary,
                    EvalTrace* trace = nullptr);
// Search-mode pass: records on the tape, uses batch BN statistics and updates running stats.
Tape::VarId forward_search(NetworkState& net, Tape& tape, Tape::VarId x);
// Mode-dispatching form. Search mode runs on a private tape and returns its logits.
Tensor forward(NetworkState& net, const Tensor& x, Mode mode);

// Resets score (and BN affine) gradients before a new search step.
void zero_param_grads(NetworkState& net);

// FNV-1a over the bytes of every W tensor.
std::uint64_t weights_hash(const NetworkState& net);

}  // namespace mpt
