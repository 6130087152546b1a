#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mpt/data.hpp"
#include "mpt/layers.hpp"

namespace mpt {

enum class OptimizerKind { Sgd, Adam };
// When masks and gains are rebuilt from the scores.
enum class MaskCadence { Epoch, Batch };

std::string to_string(OptimizerKind k);
std::string to_string(MaskCadence c);
OptimizerKind parse_optimizer(const std::string& s);
MaskCadence parse_mask_cadence(const std::string& s);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double lr = 0.1;
  double momentum = 0.9;  // sgd only
  bool nesterov = false;
  double weight_decay = 1e-4;  // scores only
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int warmup_epochs = 0;
  double prune_percent = 50.0;
  int epochs = 1;
  int batch_size = 128;
  std::uint64_t seed = 0;
  BnPolicy bn_policy = BnPolicy::Frozen;
  MaskCadence cadence = MaskCadence::Epoch;
  double grad_norm_warn = 1e3;
  // Test-set evaluation after each epoch; eval_limit > 0 uses only the first items.
  bool evaluate = true;
  std::size_t eval_limit = 0;

  void validate() const;
};

// Learning rate for an epoch: linear warmup, then cosine decay to 0 over the remaining epochs.
double cosine_lr(double base, int epoch, int epochs, int warmup_epochs);

// Number of pruned entries for a layer: ceil(count * P / 100).
std::int64_t pruned_count(std::int64_t count, double prune_percent);

// M_i = 0 for the ceil(count P / 100) smallest |S_i| (lower index first on ties), 1 otherwise.
std::vector<float> recompute_mask(std::span<const float> scores, double prune_percent);
// ||M (.) W||_1 / ||M||_1, or 0 for an empty mask.
float recompute_gain(std::span<const float> mask, std::span<const float> weights);
// ||M (.) (W - alpha B)||_2
double binarization_error(const MaskedBinaryLayer& layer);
double binarization_error(std::span<const float> mask, std::span<const float> weights, float alpha,
                          std::span<const float> sign);
// Mean over the batch of ||g(x; M (.) W) - f(x; W*)||_2, with `reference` evaluated dense.
double subnetwork_error(const NetworkState& net, const NetworkState& reference, const Tensor& batch);

// Refreshes mask, gain and ternary cache of every layer (non-prunable layers keep M = 1).
void update_masks_and_gains(NetworkState& net, double prune_percent);

// Optimizer state over the score tensors (and BN affine when learned).
class ScoreOptimizer {
 public:
  ScoreOptimizer(const TrainConfig& cfg, NetworkState& net);
  // One step with learning rate lr on the gradients currently held by the parameters.
  // Returns the global gradient norm before the step.
  double step(double lr);
  std::int64_t steps() const noexcept { return t_; }

 private:
  struct Slot {
    Tensor* param;
    bool decay;
    std::vector<float> m;
    std::vector<float> v;
  };
  TrainConfig cfg_;
  std::vector<Slot> slots_;
  std::int64_t t_ = 0;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  bool grad_warning = false;
};

// Forward/backward on one batch and one optimizer step on the scores. W and B are untouched.
// predictions, when given, receives the argmax of the pre-step logits.
StepResult score_step(NetworkState& net, ScoreOptimizer& opt, const Tensor& x, std::span<const int> y, double lr,
                      double grad_norm_warn = 1e3, std::vector<int>* predictions = nullptr);

struct EpochReport {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_top1 = 0.0;
  double test_top1 = -1.0;  // -1 when not evaluated
  std::vector<float> alpha;
  std::vector<double> sparsity;  // pruned fraction per layer
  std::vector<std::int64_t> zeros;
  std::vector<double> binarization_error;
  int grad_warnings = 0;
  double seconds = 0.0;
};

double top1(const NetworkState& net, const data::Dataset& d, std::size_t limit = 0, std::size_t batch = 500);

using EpochCallback = std::function<void(const NetworkState&, const EpochReport&)>;

struct BipropResult {
  NetworkState net;
  std::vector<EpochReport> reports;
};

// Algorithm loop: every epoch runs score steps over all batches, then rebuilds masks and gains.
// test may be null. The spec's bn_policy is replaced by cfg.bn_policy.
BipropResult run_biprop(const NetworkSpec& spec, const data::Dataset& train, const data::Dataset* test,
                        const TrainConfig& cfg, const EpochCallback& on_epoch = {});
// Continues a search on an existing network.
std::vector<EpochReport> run_biprop(NetworkState& net, const data::Dataset& train, const data::Dataset* test,
                                    const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace mpt
