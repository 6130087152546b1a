#include "mpt/biprop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>

#include "mpt/errors.hpp"

namespace mpt {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }
std::string to_string(MaskCadence c) { return c == MaskCadence::Epoch ? "epoch" : "batch"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

MaskCadence parse_mask_cadence(const std::string& s) {
  if (s == "epoch") return MaskCadence::Epoch;
  if (s == "batch") return MaskCadence::Batch;
  throw ConfigError("unknown mask cadence '" + s + "' (expected epoch or batch)");
}

void TrainConfig::validate() const {
  if (!(prune_percent >= 0.0 && prune_percent < 100.0)) throw ParameterError("prune percent must be in [0, 100)");
  if (epochs < 0) throw ParameterError("epochs must be >= 0");
  if (!(lr > 0.0)) throw ParameterError("learning rate must be > 0");
  if (batch_size < 1) throw ParameterError("batch size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ParameterError("weight decay must be >= 0");
  if (warmup_epochs < 0) throw ParameterError("warmup epochs must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ParameterError("adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ParameterError("adam eps must be > 0");
}

double cosine_lr(double base, int epoch, int epochs, int warmup_epochs) {
  if (epoch < warmup_epochs) return base * static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs);
  const int span = epochs - warmup_epochs;
  if (span <= 0) return base;
  const double progress = static_cast<double>(epoch - warmup_epochs) / static_cast<double>(span);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * progress));
}

std::int64_t pruned_count(std::int64_t count, double prune_percent) {
  // Exact ceil(count * P / 100) for P given with a few decimals; guard against 0.1-style representation error.
  const double v = static_cast<double>(count) * prune_percent / 100.0;
  const double r = std::round(v);
  const auto k = std::abs(v - r) < 1e-9 ? static_cast<std::int64_t>(r) : static_cast<std::int64_t>(std::ceil(v));
  return std::clamp<std::int64_t>(k, 0, count);
}

std::vector<float> recompute_mask(std::span<const float> scores, double prune_percent) {
  if (!(prune_percent >= 0.0 && prune_percent < 100.0)) throw ParameterError("prune percent must be in [0, 100)");
  const auto n = static_cast<std::int64_t>(scores.size());
  const auto k = pruned_count(n, prune_percent);
  std::vector<float> mask(scores.size(), 1.0f);
  if (k == 0) return mask;
  std::vector<std::int64_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto less = [&](std::int64_t a, std::int64_t b) {
    const float x = std::abs(scores[static_cast<std::size_t>(a)]);
    const float y = std::abs(scores[static_cast<std::size_t>(b)]);
    return x < y || (x == y && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), less);
  for (std::int64_t i = 0; i < k; ++i) mask[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 0.0f;
  return mask;
}

float recompute_gain(std::span<const float> mask, std::span<const float> weights) {
  if (mask.size() != weights.size()) throw DimensionError("mask and weight sizes differ");
  double l1 = 0.0, m = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    l1 += std::abs(static_cast<double>(mask[i]) * weights[i]);
    m += mask[i];
  }
  return m == 0.0 ? 0.0f : static_cast<float>(l1 / m);
}

double binarization_error(std::span<const float> mask, std::span<const float> weights, float alpha,
                          std::span<const float> sign) {
  if (mask.size() != weights.size() || sign.size() != weights.size()) throw DimensionError("layer tensor sizes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double d = static_cast<double>(mask[i]) * (weights[i] - static_cast<double>(alpha) * sign[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

double binarization_error(const MaskedBinaryLayer& layer) {
  return binarization_error(layer.mask.data(), layer.weights.data(), layer.alpha, layer.sign.data());
}

double subnetwork_error(const NetworkState& net, const NetworkState& reference, const Tensor& batch) {
  const Tensor g = forward_eval(net, batch, WeightSource::MaskedReal);
  const Tensor f = forward_eval(reference, batch, WeightSource::DenseReal);
  if (g.shape() != f.shape()) throw DimensionError("network and reference outputs differ in shape");
  if (g.rank() == 0 || g.dim(0) == 0) return 0.0;
  const std::int64_t n = g.dim(0), d = g.size() / n;
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double diff = static_cast<double>(g[i * d + j]) - f[i * d + j];
      acc += diff * diff;
    }
    total += std::sqrt(acc);
  }
  return total / static_cast<double>(n);
}

void update_masks_and_gains(NetworkState& net, double prune_percent) {
  for (auto& b : net.blocks) {
    auto& L = b.layer;
    if (L.prunable) {
      L.mask.storage() = recompute_mask(L.scores.data(), prune_percent);
    } else {
      std::fill(L.mask.storage().begin(), L.mask.storage().end(), 1.0f);
    }
    L.alpha = recompute_gain(L.mask.data(), L.weights.data());
    L.refresh_ternary();
  }
}

ScoreOptimizer::ScoreOptimizer(const TrainConfig& cfg, NetworkState& net) : cfg_(cfg) {
  cfg_.validate();
  auto add = [&](Tensor& p, bool decay) {
    Slot s{&p, decay, std::vector<float>(static_cast<std::size_t>(p.size()), 0.0f), {}};
    if (cfg_.optimizer == OptimizerKind::Adam) s.v.assign(static_cast<std::size_t>(p.size()), 0.0f);
    slots_.push_back(std::move(s));
  };
  for (auto& b : net.blocks) {
    add(b.layer.scores, true);
    if (b.bn && b.bn->trainable) {
      add(b.bn->gamma, false);
      add(b.bn->beta, false);
    }
  }
}

double ScoreOptimizer::step(double lr) {
  double sq = 0.0;
  for (auto& s : slots_) {
    if (!s.param->has_grad()) continue;
    for (float g : std::as_const(*s.param).grad()) sq += static_cast<double>(g) * g;
  }
  ++t_;
  const double wd = cfg_.weight_decay;
  const bool adam = cfg_.optimizer == OptimizerKind::Adam;
  const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& s : slots_) {
    auto p = s.param->data();
    const bool has = s.param->has_grad();
    const auto* grad = has ? std::as_const(*s.param).grad().data() : nullptr;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double g = grad ? grad[i] : 0.0;
      if (s.decay) g += wd * p[i];
      if (adam) {
        const double m = b1 * s.m[i] + (1.0 - b1) * g;
        const double v = b2 * s.v[i] + (1.0 - b2) * g * g;
        s.m[i] = static_cast<float>(m);
        s.v[i] = static_cast<float>(v);
        p[i] = static_cast<float>(p[i] - lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.adam_eps));
      } else {
        double buf = g;
        if (cfg_.momentum > 0.0) {
          buf = t_ == 1 ? g : cfg_.momentum * s.m[i] + g;
          s.m[i] = static_cast<float>(buf);
        }
        const double d = cfg_.nesterov ? g + cfg_.momentum * buf : buf;
        p[i] = static_cast<float>(p[i] - lr * d);
      }
    }
  }
  return std::sqrt(sq);
}

StepResult score_step(NetworkState& net, ScoreOptimizer& opt, const Tensor& x, std::span<const int> y, double lr,
                      double grad_norm_warn, std::vector<int>* predictions) {
  zero_param_grads(net);
  Tape tape;
  const auto in = tape.input(x);
  const auto logits = forward_search(net, tape, in);
  const auto loss = tape_ops::softmax_cross_entropy(tape, logits, y);
  StepResult r;
  r.loss = tape.value(loss)[0];
  if (!std::isfinite(r.loss)) throw NumericError("non-finite training loss", -1);
  if (predictions) *predictions = argmax_rows(tape.value(logits));
  tape.backward(loss);
  r.grad_norm = opt.step(lr);
  if (!std::isfinite(r.grad_norm)) throw NumericError("non-finite score gradient", -1);
  r.grad_warning = r.grad_norm > grad_norm_warn;
  return r;
}

double top1(const NetworkState& net, const data::Dataset& d, std::size_t limit, std::size_t batch) {
  const std::size_t n = limit ? std::min(limit, d.size()) : d.size();
  if (n == 0) return 0.0;
  data::Dataset view;
  const data::Dataset* src = &d;
  if (d.augment) {
    view = d;
    view.augment = false;
    src = &view;
  }
  std::vector<std::int64_t> idx;
  Tensor x;
  std::vector<int> y;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), static_cast<std::int64_t>(start));
    src->gather(idx, x, y);
    const auto pred = argmax_rows(forward_eval(net, x));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

std::vector<EpochReport> run_biprop(NetworkState& net, const data::Dataset& train, const data::Dataset* test,
                                    const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.size() == 0 && cfg.epochs > 0) throw PreconditionError("training set is empty");
  ScoreOptimizer opt(cfg, net);
  std::vector<EpochReport> reports;
  Tensor x;
  std::vector<int> y;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochReport rep;
    rep.epoch = epoch + 1;
    rep.lr = cosine_lr(cfg.lr, epoch, cfg.epochs, cfg.warmup_epochs);
    const auto order = data::batch_order(train.size(), cfg.seed, epoch);
    const auto aug = data::augmentation_seed(cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::size_t end = std::min(order.size(), start + bs);
        train.gather(std::span<const std::int64_t>(order).subspan(start, end - start), x, y, aug);
        std::vector<int> pred;
        const auto st = score_step(net, opt, x, y, rep.lr, cfg.grad_norm_warn, &pred);
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
        if (st.grad_warning) {
          if (rep.grad_warnings == 0) {
            std::cerr << "warning: epoch " << rep.epoch << ": score gradient norm " << st.grad_norm << " exceeds "
                      << cfg.grad_norm_warn << "\n";
          }
          ++rep.grad_warnings;
        }
        const double lv = st.loss;
        loss_sum += lv * static_cast<double>(end - start);
        seen += end - start;
        if (cfg.cadence == MaskCadence::Batch) update_masks_and_gains(net, cfg.prune_percent);
      }
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(rep.epoch) + ": " + e.what(), e.layer());
    }
    update_masks_and_gains(net, cfg.prune_percent);
    rep.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rep.train_top1 = seen ? 100.0 * static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    for (const auto& b : net.blocks) {
      const auto& L = b.layer;
      const auto zeros = L.count() - L.nonzero();
      rep.alpha.push_back(L.alpha);
      rep.zeros.push_back(zeros);
      rep.sparsity.push_back(static_cast<double>(zeros) / static_cast<double>(L.count()));
      rep.binarization_error.push_back(binarization_error(L));
    }
    if (cfg.evaluate && test) rep.test_top1 = top1(net, *test, cfg.eval_limit);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    reports.push_back(rep);
    if (on_epoch) on_epoch(net, reports.back());
  }
  return reports;
}

BipropResult run_biprop(const NetworkSpec& spec, const data::Dataset& train, const data::Dataset* test,
                        const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  NetworkSpec s = spec;
  s.bn_policy = cfg.bn_policy;
  BipropResult r{build_network(s, cfg.seed), {}};
  r.reports = run_biprop(r.net, train, test, cfg, on_epoch);
  return r;
}

}  // namespace mpt
