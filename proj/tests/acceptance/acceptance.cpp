// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if every
// criterion that ran passed.
//
//   acceptance                 criteria 1-6 and 8; 7 is reported as not run
//   acceptance --criteria 1,4  a subset
//   acceptance --criteria 7 --long
//
// MNIST and CIFAR-10 are read from $MPT_DATA_DIR.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "mpt/binpack.hpp"
#include "mpt/biprop.hpp"
#include "mpt/checkpoint.hpp"
#include "mpt/commands.hpp"
#include "mpt/config.hpp"
#include "mpt/errors.hpp"
#include "mpt/estimators.hpp"
#include "mpt/theory.hpp"
#include "support.hpp"

using namespace mpt;
using mpt::testing::Gen;

namespace {

struct Outcome {
  enum class Status { Pass, Fail, NotRun } status = Status::Fail;
  std::string detail;
};

Outcome pass(std::string d) { return {Outcome::Status::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::Status::Fail, std::move(d)}; }
Outcome verdict(bool ok, std::string d) { return ok ? pass(std::move(d)) : fail(std::move(d)); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

RunConfig preset_config(const std::string& preset, const std::vector<std::string>& overrides = {}) {
  ConfigSources src;
  src.preset = preset;
  src.overrides = overrides;
  src.out_dir = mpt::testing::scratch_dir("accept-" + preset).string();
  return resolve_config(src);
}

// ---------------------------------------------------------------- criterion 1

Outcome closed_form_optimality() {
  Gen g(1001);
  std::int64_t cases = 0, violations = 0, max_n = 0;
  double worst_gap = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = g.integer(1, 12);
    max_n = std::max(max_n, n);
    std::vector<float> w(static_cast<std::size_t>(n)), m(w.size()), b(w.size());
    double wmax = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = static_cast<float>(g.normal() * g.uniform(0.1, 3.0));
      m[i] = g.coin(0.6) ? 1.0f : 0.0f;
      b[i] = w[i] >= 0 ? 1.0f : -1.0f;
      wmax = std::max(wmax, std::abs(static_cast<double>(w[i])));
    }
    const float a_star = recompute_gain(m, w);
    auto sq_err = [&](double alpha, std::uint32_t pattern) {
      double acc = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double bi = (pattern >> i) & 1u ? 1.0 : -1.0;
        const double d = m[i] * (w[i] - alpha * bi);
        acc += d * d;
      }
      return acc;
    };
    const double e_star = binarization_error(m, w, a_star, b);
    const double best = e_star * e_star;
    double found = best;
    for (std::uint32_t pattern = 0; pattern < (1u << n); ++pattern) {
      for (int k = 0; k < 200; ++k) {
        const double alpha = 2.0 * wmax * k / 199.0;
        found = std::min(found, sq_err(alpha, pattern));
      }
    }
    ++cases;
    const double gap = best - found;
    worst_gap = std::max(worst_gap, gap);
    if (gap > 1e-9 * std::max(1.0, best)) ++violations;
  }
  return verdict(violations == 0, fmt("%lld cases, n <= %lld, 2^n signs x 200 alphas, %lld beaten (max gap %.3g)",
                                      static_cast<long long>(cases), static_cast<long long>(max_n),
                                      static_cast<long long>(violations), worst_gap));
}

// ---------------------------------------------------------------- criterion 2

// Reference gradients of a one-hidden-layer relu net (no BN) built from ste_mask_grad:
// dL/dS_pq = sum_b ste_mask_grad(dL/dz_bp, alpha, B_pq, a_bq, S_pq).
std::vector<std::vector<double>> ste_reference(const NetworkState& net, const Tensor& x, const std::vector<int>& y) {
  const auto& l1 = net.blocks[0].layer;
  const auto& l2 = net.blocks[1].layer;
  const auto n = x.dim(0), d = l1.cols, h = l1.rows, c = l2.rows;
  std::vector<double> z1(static_cast<std::size_t>(n * h)), a1(z1.size()), z2(static_cast<std::size_t>(n * c));
  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t p = 0; p < h; ++p) {
      double acc = 0.0;
      for (std::int64_t q = 0; q < d; ++q) acc += static_cast<double>(x[s * d + q]) * l1.alpha * l1.mask[p * d + q] * l1.sign[p * d + q];
      z1[s * h + p] = acc;
      a1[s * h + p] = std::max(acc, 0.0);
    }
    for (std::int64_t p = 0; p < c; ++p) {
      double acc = 0.0;
      for (std::int64_t q = 0; q < h; ++q) acc += a1[s * h + q] * l2.alpha * l2.mask[p * h + q] * l2.sign[p * h + q];
      z2[s * c + p] = acc;
    }
  }
  std::vector<double> g2(z2.size()), g1(z1.size(), 0.0);
  for (std::int64_t s = 0; s < n; ++s) {
    double mx = z2[s * c];
    for (std::int64_t p = 1; p < c; ++p) mx = std::max(mx, z2[s * c + p]);
    double se = 0.0;
    for (std::int64_t p = 0; p < c; ++p) se += std::exp(z2[s * c + p] - mx);
    for (std::int64_t p = 0; p < c; ++p)
      g2[s * c + p] = (std::exp(z2[s * c + p] - mx) / se - (p == y[static_cast<std::size_t>(s)] ? 1.0 : 0.0)) / n;
    for (std::int64_t q = 0; q < h; ++q) {
      if (z1[s * h + q] <= 0.0) continue;
      double acc = 0.0;
      for (std::int64_t p = 0; p < c; ++p) acc += g2[s * c + p] * l2.alpha * l2.mask[p * h + q] * l2.sign[p * h + q];
      g1[s * h + q] = acc;
    }
  }
  std::vector<std::vector<double>> out(2);
  out[0].assign(static_cast<std::size_t>(h * d), 0.0);
  out[1].assign(static_cast<std::size_t>(c * h), 0.0);
  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t p = 0; p < h; ++p)
      for (std::int64_t q = 0; q < d; ++q)
        out[0][p * d + q] += ste_mask_grad<double>(g1[s * h + p], l1.alpha, static_cast<int>(l1.sign[p * d + q]),
                                                   x[s * d + q], l1.scores[p * d + q]);
    for (std::int64_t p = 0; p < c; ++p)
      for (std::int64_t q = 0; q < h; ++q)
        out[1][p * h + q] += ste_mask_grad<double>(g2[s * c + p], l2.alpha, static_cast<int>(l2.sign[p * h + q]),
                                                   a1[s * h + q], l2.scores[p * h + q]);
  }
  return out;
}

// Smallest |input to the hidden relu| over the batch, batch-normalized when BN is present.
double min_abs_hidden(const NetworkState& net, const Tensor& x) {
  EvalTrace et;
  forward_eval(net, x, WeightSource::Binary, &et);
  const Tensor& z = et.raw[0];
  const auto n = z.dim(0), h = z.dim(1);
  double lo = std::numeric_limits<double>::infinity();
  for (std::int64_t p = 0; p < h; ++p) {
    double mean = 0.0, var = 0.0;
    for (std::int64_t s = 0; s < n; ++s) mean += z[s * h + p];
    mean /= static_cast<double>(n);
    for (std::int64_t s = 0; s < n; ++s) var += (z[s * h + p] - mean) * (z[s * h + p] - mean);
    var /= static_cast<double>(n);
    for (std::int64_t s = 0; s < n; ++s) {
      double v = z[s * h + p];
      if (const auto& bn = net.blocks[0].bn)
        v = (v - mean) / std::sqrt(var + bn->eps) * bn->gamma[p] + bn->beta[p];
      lo = std::min(lo, std::abs(v));
    }
  }
  return lo;
}

Outcome gradient_estimators() {
  // Spline: central differences away from the knots {-t, 0, t}.
  Gen g(2002);
  int spline_points = 0;
  double spline_worst = 0.0;
  while (spline_points < 1000) {
    const double t = g.uniform(0.05, 3.0);
    const double x = g.uniform(-1.5 * t, 1.5 * t);
    const double h = 1e-6 * t;
    if (std::min({std::abs(x + t), std::abs(x), std::abs(x - t)}) < 10 * h) continue;
    const double fd = (spline_value(x + h, t) - spline_value(x - h, t)) / (2 * h);
    spline_worst = std::max(spline_worst, std::abs(fd - spline_grad(x, t)));
    ++spline_points;
  }

  // Score gradients against finite differences of the relaxed-mask forward.
  // Relative error uses max(|fd|, 1e-4) as the denominator.
  // Nets with a hidden pre-activation within 1e-3 of the relu kink are redrawn:
  // a fully pruned row sits exactly on it and the central difference is meaningless there.
  int nets = 0, redrawn = 0;
  std::int64_t entries = 0;
  double tape_worst = 0.0, ste_worst = 0.0;
  for (int trial = 0; nets < 40; ++trial) {
    const bool bn = trial % 4 == 3;
    auto spec = NetworkSpec::mlp({g.integer(2, 8)}, {g.integer(2, 12)}, g.integer(2, 5));
    spec.batchnorm = bn;
    auto net = build_network(spec, static_cast<std::uint64_t>(trial));
    update_masks_and_gains(net, g.uniform(0.0, 80.0));
    const auto batch = g.integer(2, 10);
    const Tensor x = g.tensor({batch, spec.input_shape[0]});
    std::vector<int> y(static_cast<std::size_t>(batch));
    for (auto& v : y) v = static_cast<int>(g.integer(0, spec.num_classes - 1));

    zero_param_grads(net);
    Tape tape;
    const auto in = tape.input(x);
    tape.backward(tape_ops::softmax_cross_entropy(tape, forward_search(net, tape, in), y));
    if (min_abs_hidden(net, x) < 1e-3) {
      ++redrawn;
      continue;
    }
    std::vector<std::vector<double>> ref;
    if (!bn) ref = ste_reference(net, x, y);

    const mpt::testing::RelaxedMlp base(net);
    for (std::size_t li = 0; li < net.blocks.size(); ++li) {
      const auto& l = net.blocks[li].layer;
      for (std::int64_t k = 0; k < l.count(); ++k) {
        const double h = 1e-5;
        const double sg = l.scores[k] >= 0 ? 1.0 : -1.0;
        auto plus = base, minus = base;
        plus.layers[li].m[static_cast<std::size_t>(k)] += h;
        minus.layers[li].m[static_cast<std::size_t>(k)] -= h;
        const double fd = sg * (plus.loss(x, y) - minus.loss(x, y)) / (2 * h);
        const double denom = std::max(std::abs(fd), 1e-4);
        const double got = std::as_const(l.scores).grad()[static_cast<std::size_t>(k)];
        tape_worst = std::max(tape_worst, std::abs(got - fd) / denom);
        if (!bn) ste_worst = std::max(ste_worst, std::abs(ref[li][static_cast<std::size_t>(k)] - fd) / denom);
        ++entries;
      }
    }
    ++nets;
  }
  const bool ok = spline_worst <= 1e-4 && tape_worst <= 1e-3 && ste_worst <= 1e-3;
  return verdict(ok, fmt("spline: 1000 points, max |err| %.2e (tol 1e-4); scores: %d nets, %lld entries, max rel err "
                         "%.2e tape / %.2e ste_mask_grad (tol 1e-3, floor 1e-4), %d nets on a relu kink redrawn",
                         spline_worst, nets, static_cast<long long>(entries), tape_worst, ste_worst, redrawn));
}

// ---------------------------------------------------------------- criterion 3

std::optional<data::DatasetPair> mnist_cache;

const data::DatasetPair& mnist() {
  if (!mnist_cache) mnist_cache = load_data(preset_config("mnist-mlp-mpt132").data, 0);
  return *mnist_cache;
}

Outcome search_invariants() {
  const auto cfg = preset_config("mnist-mlp-mpt132", {"train.epochs=5", "train.evaluate=false"});
  const auto& d = mnist();
  auto spec = cfg.network;
  spec.bn_policy = cfg.train.bn_policy;
  auto net = build_network(spec, cfg.train.seed);
  const auto w0 = weights_hash(net);
  int epochs = 0, bad = 0;
  double alpha_worst = 0.0;
  std::ostringstream why;
  run_biprop(net, d.train, nullptr, cfg.train, [&](const NetworkState& n, const EpochReport& rep) {
    ++epochs;
    if (weights_hash(n) != w0) {
      ++bad;
      why << " epoch " << rep.epoch << ": W hash changed;";
    }
    for (std::size_t i = 0; i < n.blocks.size(); ++i) {
      const auto& l = n.blocks[i].layer;
      const auto zeros = l.count() - l.nonzero();
      const auto expect = static_cast<std::int64_t>(std::ceil(static_cast<double>(l.count()) * cfg.train.prune_percent / 100.0));
      if (zeros != expect) {
        ++bad;
        why << " epoch " << rep.epoch << " layer " << i << ": " << zeros << " zeros, expected " << expect << ";";
      }
      double l1 = 0.0, m1 = 0.0;
      for (std::int64_t k = 0; k < l.count(); ++k) {
        l1 += std::abs(static_cast<double>(l.mask[k]) * l.weights[k]);
        m1 += l.mask[k];
      }
      const double err = std::abs(l.alpha - l1 / m1);
      alpha_worst = std::max(alpha_worst, err);
      if (err > 1e-6) {
        ++bad;
        why << " epoch " << rep.epoch << " layer " << i << ": alpha off by " << err << ";";
      }
      for (std::int64_t k = 0; k < l.count(); ++k) {
        if (l.sign[k] != (l.weights[k] >= 0 ? 1.0f : -1.0f)) {
          ++bad;
          why << " epoch " << rep.epoch << " layer " << i << ": B != sgn W;";
          break;
        }
      }
    }
  });
  return verdict(bad == 0 && epochs == 5,
                 fmt("MNIST 2x256 P=%g, %d epochs: exact zero counts, max |alpha - closed form| %.2e, W hash fixed",
                     cfg.train.prune_percent, epochs, alpha_worst) +
                     why.str());
}

// ---------------------------------------------------------------- criterion 6

struct Ticket {
  RunConfig cfg;
  NetworkState net;
  double top1 = 0.0;
  bool weights_fixed = false;
};
std::map<std::string, Ticket> tickets;

const Ticket& mnist_ticket(const std::string& preset) {
  auto it = tickets.find(preset);
  if (it != tickets.end()) return it->second;
  Ticket t;
  t.cfg = preset_config(preset, {"train.evaluate=false"});
  const auto& d = mnist();
  auto spec = t.cfg.network;
  spec.bn_policy = t.cfg.train.bn_policy;
  const auto w0 = weights_hash(build_network(spec, t.cfg.train.seed));
  auto r = run_biprop(spec, d.train, nullptr, t.cfg.train, [&](const NetworkState&, const EpochReport& rep) {
    std::cerr << "  [" << preset << "] epoch " << rep.epoch << " loss " << rep.train_loss << " train top1 "
              << rep.train_top1 << "\n";
  });
  t.net = std::move(r.net);
  t.weights_fixed = weights_hash(t.net) == w0;
  t.top1 = top1(t.net, d.test);
  return tickets.emplace(preset, std::move(t)).first->second;
}

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// The same MLP with its weights trained by plain SGD (momentum 0.9, cosine schedule),
// started from the search network's W.
double dense_twin_top1(const RunConfig& cfg, int epochs) {
  const auto& d = mnist();
  const auto init = build_network(cfg.network, cfg.train.seed);
  std::vector<RowMatrix> w, v;
  for (const auto& b : init.blocks) {
    w.emplace_back(Eigen::Map<const RowMatrix>(b.layer.weights.ptr(), b.layer.rows, b.layer.cols));
    v.emplace_back(RowMatrix::Zero(b.layer.rows, b.layer.cols));
  }
  const std::size_t layers = w.size();
  const int bs = 128;
  const double base_lr = 0.05;
  Tensor x;
  std::vector<int> y;
  for (int e = 0; e < epochs; ++e) {
    const double lr = cosine_lr(base_lr, e, epochs, 0);
    const auto order = data::batch_order(d.train.size(), cfg.train.seed + 77, e);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const auto end = std::min(order.size(), start + bs);
      d.train.gather(std::span<const std::int64_t>(order).subspan(start, end - start), x, y);
      const auto n = static_cast<Eigen::Index>(end - start);
      std::vector<RowMatrix> acts{Eigen::Map<const RowMatrix>(x.ptr(), n, x.size() / n)};
      for (std::size_t l = 0; l < layers; ++l) {
        RowMatrix z = acts.back() * w[l].transpose();
        if (l + 1 < layers) z = z.cwiseMax(0.0f);
        acts.push_back(std::move(z));
      }
      RowMatrix g = acts.back();
      for (Eigen::Index i = 0; i < n; ++i) {
        const float mx = g.row(i).maxCoeff();
        g.row(i) = (g.row(i).array() - mx).exp();
        g.row(i) /= g.row(i).sum();
        g(i, y[static_cast<std::size_t>(i)]) -= 1.0f;
      }
      g /= static_cast<float>(n);
      for (std::size_t l = layers; l-- > 0;) {
        const RowMatrix dw = g.transpose() * acts[l];
        if (l > 0) {
          g = (g * w[l]).cwiseProduct((acts[l].array() > 0.0f).cast<float>().matrix());
        }
        v[l] = 0.9f * v[l] + dw;
        w[l] -= static_cast<float>(lr) * v[l];
      }
    }
  }
  const Tensor tx = d.test.all_inputs();
  const auto ty = d.test.all_labels();
  const auto n = static_cast<Eigen::Index>(ty.size());
  RowMatrix h = Eigen::Map<const RowMatrix>(tx.ptr(), n, tx.size() / n);
  for (std::size_t l = 0; l < layers; ++l) {
    RowMatrix z = h * w[l].transpose();
    h = l + 1 < layers ? RowMatrix(z.cwiseMax(0.0f)) : z;
  }
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index arg = 0;
    h.row(i).maxCoeff(&arg);
    correct += arg == ty[static_cast<std::size_t>(i)];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

Outcome learning_signal() {
  const auto& real = mnist_ticket("mnist-mlp-mpt132");
  const auto& bin = mnist_ticket("mnist-mlp-mpt11");
  const double twin = dense_twin_top1(real.cfg, real.cfg.train.epochs);
  const bool ok = real.top1 >= 95.0 && bin.top1 >= 90.0 && real.weights_fixed && bin.weights_fixed &&
                  twin > real.top1 && twin > bin.top1;
  return verdict(ok, fmt("MNIST 2x256 P=50 %d epochs: MPT-1/32 %.2f%% (>= 95), MPT-1/1 %.2f%% (>= 90), W unchanged: %s; "
                         "dense weight-trained twin %.2f%% (must exceed both)",
                         real.cfg.train.epochs, real.top1, bin.top1,
                         real.weights_fixed && bin.weights_fixed ? "yes" : "NO", twin));
}

// ---------------------------------------------------------------- criterion 4

struct PackedCheck {
  std::int64_t inputs = 0;
  std::int64_t acc_mismatch = 0;
  std::int64_t acc_entries = 0;
  double logit_worst = 0.0;
  std::int64_t argmax_mismatch = 0;
};

PackedCheck compare_packed(const NetworkState& net, const Tensor& x, const std::filesystem::path& file,
                           const RunConfig& cfg) {
  save_packed_checkpoint(file, net, checkpoint_meta(cfg, net, 0, Json::object()));
  const auto loaded = load_checkpoint(file);
  if (!loaded.packed) throw FormatError("packed checkpoint did not load as packed", 0);
  PackedCheck c;
  c.inputs = x.dim(0);
  EvalTrace et;
  const auto ref = forward_eval(net, x, WeightSource::Binary, &et);
  binpack::PackedTrace pt;
  const auto got = binpack::packed_forward(*loaded.packed, x, &pt);
  for (std::size_t b = 0; b < pt.accumulators.size(); ++b) {
    const auto& acc = pt.accumulators[b];
    if (acc.empty()) continue;
    for (std::size_t i = 0; i < acc.size(); ++i) {
      ++c.acc_entries;
      if (static_cast<float>(acc[i]) != et.raw[b][static_cast<std::int64_t>(i)]) ++c.acc_mismatch;
    }
  }
  for (std::int64_t i = 0; i < ref.size(); ++i) c.logit_worst = std::max(c.logit_worst, static_cast<double>(std::abs(got[i] - ref[i])));
  const auto a = argmax_rows(got), b = argmax_rows(ref);
  for (std::size_t i = 0; i < a.size(); ++i) c.argmax_mismatch += a[i] != b[i];
  return c;
}

Outcome packed_equivalence() {
  const auto dir = mpt::testing::scratch_dir("accept-packed");
  const auto& d = mnist();
  const Tensor x = d.test.all_inputs(1000);
  const auto& real = mnist_ticket("mnist-mlp-mpt132");
  const auto& bin = mnist_ticket("mnist-mlp-mpt11");
  const auto r = compare_packed(real.net, x, dir / "real.mptk", real.cfg);
  const auto b = compare_packed(bin.net, x, dir / "bin.mptk", bin.cfg);

  // Conv tickets exercise padding and pooling: random masks, BN stats from a few search batches.
  Gen g(4004);
  std::optional<data::DatasetPair> cifar;
  try {
    cifar = load_data(preset_config("cifar-mpt132-table5").data, 0);
  } catch (const Error&) {
  }
  const Tensor cx = cifar ? cifar->test.all_inputs(1000) : g.tensor({1000, 3, 32, 32});
  PackedCheck conv[2];
  for (int mode = 0; mode < 2; ++mode) {
    auto cfg = preset_config("cifar-conv-sweep-60ep");
    cfg.network.activation = mode ? ActivationMode::Binary : ActivationMode::Real;
    cfg.doc["network"]["activation"] = mode ? "mpt-1/1" : "mpt-1/32";
    cfg.network.batchnorm = true;
    cfg.doc["network"]["batchnorm"] = true;
    auto net = build_network(cfg.network, 5);
    for (auto& blk : net.blocks)
      for (auto& s : blk.layer.scores.data()) s = static_cast<float>(g.uniform(-1.0, 1.0));
    update_masks_and_gains(net, 50.0);
    for (int i = 0; i < 4; ++i) {
      Tensor xb;
      std::vector<int> yb;
      if (cifar) {
        std::vector<std::int64_t> idx(64);
        for (auto& v : idx) v = g.integer(0, static_cast<std::int64_t>(cifar->train.size()) - 1);
        cifar->train.gather(idx, xb, yb);
      } else {
        xb = g.tensor({64, 3, 32, 32});
      }
      forward(net, xb, Mode::Search);
    }
    conv[mode] = compare_packed(net, cx, dir / (mode ? "conv-bin.mptk" : "conv-real.mptk"), cfg);
  }
  const bool ok = b.acc_mismatch == 0 && b.acc_entries > 0 && r.logit_worst <= 1e-4 && r.argmax_mismatch == 0 &&
                  b.argmax_mismatch == 0 && conv[1].acc_mismatch == 0 && conv[1].acc_entries > 0 &&
                  conv[0].logit_worst <= 1e-4 && conv[0].argmax_mismatch == 0 && conv[1].argmax_mismatch == 0;
  return verdict(ok, fmt("1000 MNIST inputs via packed checkpoints: 1/1 accumulators %lld/%lld equal, 1/32 max |dlogit| "
                         "%.2e (tol 1e-4), argmax mismatches %lld + %lld; Conv-2 on 1000 %s inputs: 1/1 accumulators "
                         "%lld/%lld equal, 1/32 max |dlogit| %.2e, argmax mismatches %lld + %lld",
                         static_cast<long long>(b.acc_entries - b.acc_mismatch), static_cast<long long>(b.acc_entries),
                         r.logit_worst, static_cast<long long>(r.argmax_mismatch),
                         static_cast<long long>(b.argmax_mismatch), cifar ? "CIFAR-10" : "synthetic",
                         static_cast<long long>(conv[1].acc_entries - conv[1].acc_mismatch),
                         static_cast<long long>(conv[1].acc_entries), conv[0].logit_worst,
                         static_cast<long long>(conv[0].argmax_mismatch),
                         static_cast<long long>(conv[1].argmax_mismatch)));
}

// ---------------------------------------------------------------- criterion 5

Outcome existence_theory() {
  using namespace theory;
  Gen g(5005);
  // Lemma 1: deltas from a small set so each group gets its own binomial interval.
  const double deltas[] = {0.05, 0.1, 0.2, 0.3};
  std::map<double, std::pair<std::int64_t, std::int64_t>> groups;  // delta -> (failures, trials)
  std::int64_t bad_error = 0, bad_sparsity = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Lemma1Instance in;
    in.p.eps = g.uniform(0.05, 0.95);
    in.p.delta = deltas[trial % 4];
    in.p.s = g.integer(1, 4);
    in.p.seed = static_cast<std::uint64_t>(trial);
    const double lim = 1.0 / std::sqrt(static_cast<double>(in.p.s));
    in.alpha = g.uniform(-lim, lim);
    in.d = g.integer(1, 6);
    in.i = g.integer(0, in.d - 1);
    const auto c = lemma1_construct(in);
    auto& grp = groups[in.p.delta];
    ++grp.second;
    if (!c.success) {
      ++grp.first;
      continue;
    }
    const double exact = std::abs(static_cast<double>(c.c_values[0]) * in.p.eps - std::abs(in.alpha));
    if (exact > in.p.eps || std::abs(c.measured_error - exact) > 1e-12) ++bad_error;
    if (static_cast<double>(c.sparsity) > 2.0 / (in.p.eps * std::sqrt(static_cast<double>(in.p.s)))) ++bad_sparsity;
  }
  bool lemma_ok = bad_error == 0 && bad_sparsity == 0;
  std::ostringstream lemma;
  lemma << "lemma 1 at k = bound, 1000 trials:";
  for (const auto& [delta, fc] : groups) {
    double lo = 0, hi = 0;
    wilson_interval(fc.first, fc.second, lo, hi);
    lemma_ok = lemma_ok && lo <= delta;
    lemma << " delta " << delta << ": " << fc.first << "/" << fc.second << " failed (CI low " << lo << ");";
  }
  lemma << " error/sparsity violations " << bad_error << "/" << bad_sparsity;

  // Theorem: l = 2, n = 2, s = 1, eps = 0.5, delta = 0.3.
  int successes = 0, bad_theorem = 0;
  double worst = 0.0;
  for (int seed = 0; seed < 200; ++seed) {
    TheoremInstance in;
    in.p.eps = 0.5;
    in.p.delta = 0.3;
    in.p.s = 1;
    in.p.seed = static_cast<std::uint64_t>(seed);
    in.samples = 500;
    const std::int64_t d = 4;
    Matrix a(2, d), b(1, 2);
    for (std::int64_t r = 0; r < 2; ++r) a(r, g.integer(0, d - 1)) = g.uniform(-1.0, 1.0);
    const double na = spectral_norm(a);
    if (na > 1.0)
      for (auto& v : a.v) v /= na;
    b(0, g.integer(0, 1)) = g.uniform(-1.0, 1.0) / std::sqrt(2.0);
    in.W = {a, b};
    const auto c = theorem_construct(in);
    if (!c.success) continue;
    ++successes;
    worst = std::max(worst, c.measured_error);
    if (c.measured_error > in.p.eps) ++bad_theorem;
  }
  const double rate = successes / 200.0;
  const bool ok = lemma_ok && rate >= 0.7 && bad_theorem == 0;
  return verdict(ok, lemma.str() + fmt("; theorem (l=2, n=2, s=1, eps=0.5, delta=0.3, k=%lld), 200 seeds: success "
                                       "%.3f (>= 0.7), max sampled error %.3f (<= 0.5)",
                                       static_cast<long long>(theorem_width_bound(0.5, 0.3, 1, 2, 2)), rate, worst));
}

// ---------------------------------------------------------------- criterion 7

Outcome sweep_shape() {
  auto base = preset_config("cifar-conv-sweep-60ep");
  const auto data = load_data(base.data, 0);
  std::vector<SweepPoint> points;
  for (const auto& [depth, p] : std::vector<std::pair<int, double>>{{2, 50.0}, {4, 50.0}, {2, 95.0}}) {
    for (std::uint64_t seed : base.sweep.seeds) {
      SweepPoint sp;
      sp.depth = depth;
      sp.prune_percent = p;
      sp.width_multiplier = base.network.width_multiplier;
      sp.seed = seed;
      const auto cfg = sweep_point_config(base, sp);
      std::cerr << "  [sweep] depth " << depth << " P " << p << " seed " << seed << "\n";
      const auto r = cmd_find(cfg, std::cerr, &data);
      sp.top1 = r.reports.empty() ? 0.0 : r.reports.back().test_top1;
      points.push_back(sp);
    }
  }
  const auto rows = aggregate_sweep(points);
  auto mean = [&](int depth, double p) {
    for (const auto& r : rows)
      if (r.depth == depth && r.prune_percent == p) return r.mean;
    return -1.0;
  };
  const double c2 = mean(2, 50.0), c4 = mean(4, 50.0), c2h = mean(2, 95.0);
  return verdict(c4 - c2 >= 2.0 && c2h < c2,
                 fmt("CIFAR-10 60 epochs, 3 seeds: Conv-4 P50 %.2f vs Conv-2 P50 %.2f (need +2), Conv-2 P95 %.2f < P50",
                     c4, c2, c2h));
}

// ---------------------------------------------------------------- criterion 8

Outcome stretch_targets() {
  struct Row {
    const char* preset;
    double target;
  };
  const Row rows[] = {{"cifar-mpt132bn-resnet18-table6", 94.8}, {"imagenet-mpt132bn-wrn50-table7", 74.03}};
  std::ostringstream os;
  bool ok = true;
  for (const auto& r : rows) {
    const auto cfg = preset_config(r.preset);
    const bool recorded = std::abs(cfg.stretch_target_top1 - r.target) < 1e-9;
    bool refused = false;
    try {
      std::ostringstream log;
      cmd_find(cfg, log);
    } catch (const ConfigError&) {
      refused = true;
    }
    ok = ok && recorded && !cfg.buildable() && refused;
    os << r.preset << " records " << cfg.stretch_target_top1 << " as a stretch target (" << cfg.arch
       << ", not run at desk scale); ";
  }
  return verdict(ok, os.str() + "acceptance rests on criteria 1-7");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected;
  bool long_run = false;
  app.add_option("--criteria", selected, "Criteria to run (default: all)")->delimiter(',');
  app.add_flag("--long", long_run, "Also run the multi-hour CIFAR sweep (criterion 7)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"closed-form gain and sign are optimal", closed_form_optimality},
      {"gradient estimators match finite differences", gradient_estimators},
      {"per-epoch search invariants", search_invariants},
      {"packed forward equals the reference", packed_equivalence},
      {"existence constructions", existence_theory},
      {"desk-scale learning signal", learning_signal},
      {"sweep shape on CIFAR-10", sweep_shape},
      {"headline numbers recorded as stretch targets", stretch_targets},
  };
  std::set<int> want(selected.begin(), selected.end());
  if (want.empty())
    for (int i = 1; i <= 8; ++i) want.insert(i);

  int passed = 0, failed = 0;
  for (int i = 1; i <= 8; ++i) {
    if (!want.count(i)) continue;
    const auto& [name, fn] = criteria[static_cast<std::size_t>(i - 1)];
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    if (i == 7 && !long_run) {
      o = {Outcome::Status::NotRun,
           "needs --long (nine 60-epoch CIFAR-10 searches, about 65 h on one core); ctest target acceptance_c7"};
    } else {
      try {
        o = fn();
      } catch (const std::exception& e) {
        o = fail(std::string("error: ") + e.what());
      }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Outcome::Status::Pass ? "PASS" : o.status == Outcome::Status::Fail ? "FAIL" : "NOT RUN";
    std::cout << "criterion " << i << " [" << tag << "] " << name << ": " << o.detail << " (" << fmt("%.1f", secs)
              << " s)" << std::endl;
    passed += o.status == Outcome::Status::Pass;
    failed += o.status == Outcome::Status::Fail;
  }
  std::cout << "acceptance: " << passed << " passed, " << failed << " failed" << std::endl;
  return failed == 0 ? 0 : 1;
}
