#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mpt/biprop.hpp"
#include "mpt/data.hpp"
#include "mpt/errors.hpp"
#include "support.hpp"

using namespace mpt;
using mpt::testing::Gen;

namespace {

// Brute force: the k smallest |s| by a stable sort on (|s|, index).
std::vector<float> oracle_mask(const std::vector<float>& s, double p) {
  const auto k = pruned_count(static_cast<std::int64_t>(s.size()), p);
  std::vector<std::size_t> idx(s.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return std::abs(s[a]) < std::abs(s[b]); });
  std::vector<float> m(s.size(), 1.0f);
  for (std::int64_t i = 0; i < k; ++i) m[idx[static_cast<std::size_t>(i)]] = 0.0f;
  return m;
}

}  // namespace

TEST_SUITE("biprop") {
  TEST_CASE("mask: worked example and P = 0") {
    const std::vector<float> s{0.1f, -0.5f, 0.3f, -0.2f};
    CHECK(recompute_mask(s, 50.0) == std::vector<float>{0, 1, 1, 0});
    CHECK(recompute_mask(s, 0.0) == std::vector<float>{1, 1, 1, 1});
    CHECK(recompute_mask(s, 75.0) == std::vector<float>{0, 1, 0, 0});
    CHECK_THROWS_AS(recompute_mask(s, 100.0), ParameterError);
    CHECK_THROWS_AS(recompute_mask(s, -1.0), ParameterError);
  }

  TEST_CASE("mask: ties resolve to the lower index") {
    const std::vector<float> s{0.5f, -0.5f, 0.5f, 0.5f};
    CHECK(recompute_mask(s, 50.0) == std::vector<float>{0, 0, 1, 1});
  }

  TEST_CASE("pruned count is ceil(count P / 100)") {
    CHECK(pruned_count(10, 25.0) == 3);
    CHECK(pruned_count(100, 50.0) == 50);
    CHECK(pruned_count(7, 0.0) == 0);
    CHECK(pruned_count(1000, 0.1) == 1);
    CHECK(pruned_count(3, 99.0) == 3);
  }

  TEST_CASE("mask matches the sort oracle on tie-heavy scores") {
    Gen g(21);
    for (int trial = 0; trial < 300; ++trial) {
      const auto n = static_cast<std::size_t>(g.integer(1, 60));
      const auto s = g.tie_heavy(n, static_cast<int>(g.integer(1, 4)));
      const double p = g.uniform(0.0, 99.9);
      const auto m = recompute_mask(s, p);
      CHECK(m == oracle_mask(s, p));
      const auto zeros = std::count(m.begin(), m.end(), 0.0f);
      CHECK(zeros == pruned_count(static_cast<std::int64_t>(n), p));
    }
  }

  TEST_CASE("mask depends only on |S|") {
    Gen g(3);
    for (int trial = 0; trial < 50; ++trial) {
      auto s = g.tie_heavy(40, 3);
      const auto m = recompute_mask(s, 40.0);
      for (auto& v : s)
        if (g.coin()) v = -v;
      CHECK(recompute_mask(s, 40.0) == m);
    }
  }

  TEST_CASE("gain: examples and empty mask") {
    const std::vector<float> w{0.5f, -1.5f, 2.0f, -0.25f};
    CHECK(recompute_gain(std::vector<float>{1, 1, 1, 1}, w) == doctest::Approx(4.25 / 4));
    CHECK(recompute_gain(std::vector<float>{0, 1, 1, 0}, w) == doctest::Approx(1.75));
    CHECK(recompute_gain(std::vector<float>{0, 0, 0, 0}, w) == 0.0f);
    CHECK_THROWS_AS(recompute_gain(std::vector<float>{1, 1}, w), DimensionError);
  }

  TEST_CASE("gain minimizes the binarization error over alpha") {
    Gen g(5);
    for (int trial = 0; trial < 100; ++trial) {
      const auto n = static_cast<std::size_t>(g.integer(1, 30));
      std::vector<float> w(n), m(n), b(n);
      for (std::size_t i = 0; i < n; ++i) {
        w[i] = static_cast<float>(g.normal());
        m[i] = g.coin(0.7) ? 1.0f : 0.0f;
        b[i] = w[i] >= 0 ? 1.0f : -1.0f;
      }
      const float a = recompute_gain(m, w);
      const double best = binarization_error(m, w, a, b);
      for (int j = 0; j <= 200; ++j) {
        const float other = static_cast<float>(j) * 0.02f;
        CHECK(binarization_error(m, w, other, b) >= best - 1e-6);
      }
    }
  }

  TEST_CASE("binarization error: zero for sign-constant weights, hand value otherwise") {
    const std::vector<float> m{1, 1, 0}, b{1, -1, 1};
    CHECK(binarization_error(m, std::vector<float>{0.5f, -0.5f, 9.0f}, 0.5f, b) == doctest::Approx(0.0));
    // (1 - 0.5)^2 + (-0.25 + 0.5)^2
    CHECK(binarization_error(m, std::vector<float>{1.0f, -0.25f, 0.0f}, 0.5f, b) ==
          doctest::Approx(std::sqrt(0.25 + 0.0625)));
  }

  TEST_CASE("sgd step: momentum buffer, weight decay on scores only") {
    auto net = build_network(NetworkSpec::mlp({2}, {}, 1), 1);
    auto& s = net.blocks[0].layer.scores;
    s.storage() = {0.5f, -0.25f};
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.01;
    ScoreOptimizer opt(cfg, net);
    auto g = s.grad();
    g[0] = 1.0f;
    g[1] = -2.0f;
    opt.step(0.1);
    // buf = g + wd s; s -= lr buf
    const double b0 = 1.0 + 0.01 * 0.5, b1 = -2.0 + 0.01 * -0.25;
    CHECK(s[0] == doctest::Approx(0.5 - 0.1 * b0));
    CHECK(s[1] == doctest::Approx(-0.25 - 0.1 * b1));
    const double s0 = s[0], s1 = s[1];
    opt.step(0.1);
    const double c0 = 0.9 * b0 + 1.0 + 0.01 * s0, c1 = 0.9 * b1 - 2.0 + 0.01 * s1;
    CHECK(s[0] == doctest::Approx(s0 - 0.1 * c0));
    CHECK(s[1] == doctest::Approx(s1 - 0.1 * c1));
  }

  TEST_CASE("adam step matches a scalar reference") {
    auto net = build_network(NetworkSpec::mlp({1}, {}, 1), 1);
    auto& s = net.blocks[0].layer.scores;
    s.storage() = {0.3f};
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::Adam;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.1;
    ScoreOptimizer opt(cfg, net);
    double p = 0.3, m = 0.0, v = 0.0;
    const double grads[] = {0.5, -1.0, 0.25, 2.0};
    for (int t = 1; t <= 4; ++t) {
      s.grad()[0] = static_cast<float>(grads[t - 1]);
      opt.step(0.01);
      const double g = grads[t - 1] + 0.1 * p;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      p -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      CHECK(s[0] == doctest::Approx(p).epsilon(1e-5));
    }
  }

  TEST_CASE("zero gradient: a step is pure decay and W never moves") {
    auto net = build_network(NetworkSpec::mlp({3}, {4}, 2), 2);
    const auto w0 = weights_hash(net);
    const auto s0 = net.blocks[0].layer.scores.storage();
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.5;
    ScoreOptimizer opt(cfg, net);
    zero_param_grads(net);
    opt.step(0.1);
    const auto& s1 = net.blocks[0].layer.scores;
    for (std::size_t i = 0; i < s0.size(); ++i) CHECK(s1.storage()[i] == doctest::Approx(s0[i] * 0.95));
    CHECK(weights_hash(net) == w0);
  }

  TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(0.1, 0, 10, 0) == doctest::Approx(0.1));
    CHECK(cosine_lr(0.1, 5, 10, 0) == doctest::Approx(0.05));
    CHECK(cosine_lr(0.1, 0, 10, 2) == doctest::Approx(0.05));
    CHECK(cosine_lr(0.1, 1, 10, 2) == doctest::Approx(0.1));
    CHECK(cosine_lr(0.1, 2, 10, 2) == doctest::Approx(0.1));
    double prev = 1.0;
    for (int e = 0; e < 20; ++e) {
      const double lr = cosine_lr(1.0, e, 20, 0);
      CHECK(lr <= prev);
      CHECK(lr >= 0.0);
      prev = lr;
    }
  }

  TEST_CASE("invalid train settings are parameter errors") {
    TrainConfig cfg;
    cfg.prune_percent = 100.0;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
    cfg = {};
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
    cfg = {};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
  }

  TEST_CASE("zero epochs leave the network as built") {
    const auto train = data::toy_two_moons(64, 0.1, 1);
    TrainConfig cfg;
    cfg.epochs = 0;
    const auto spec = NetworkSpec::mlp({2}, {16}, 2);
    const auto r = run_biprop(spec, train, nullptr, cfg);
    const auto ref = build_network(spec, cfg.seed);
    CHECK(r.reports.empty());
    for (std::size_t i = 0; i < ref.blocks.size(); ++i) {
      CHECK(r.net.blocks[i].layer.scores.storage() == ref.blocks[i].layer.scores.storage());
      CHECK(r.net.blocks[i].layer.mask.storage() == ref.blocks[i].layer.mask.storage());
    }
  }

  TEST_CASE("linearly separable 2-D set: one hidden layer reaches 95% train accuracy at P = 50") {
    // Label is the side of the line x + 2y = 0.1; points inside a 0.05 margin are dropped.
    data::Dataset train;
    train.name = "separable";
    train.num_classes = 2;
    train.sample_shape = {2};
    Gen g(17);
    while (train.size() < 400) {
      const double x = g.uniform(-1.0, 1.0), y = g.uniform(-1.0, 1.0);
      const double side = x + 2.0 * y - 0.1;
      if (std::abs(side) < 0.05) continue;
      train.features.push_back(static_cast<float>(x));
      train.features.push_back(static_cast<float>(y));
      train.labels.push_back(side > 0 ? 1 : 0);
    }
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 32;
    cfg.prune_percent = 50.0;
    cfg.seed = 3;
    const auto spec = NetworkSpec::mlp({2}, {64}, 2);
    const auto w0 = weights_hash(build_network(spec, cfg.seed));
    const auto r = run_biprop(spec, train, nullptr, cfg);
    CHECK(weights_hash(r.net) == w0);
    CHECK(top1(r.net, train) >= 95.0);
    for (const auto& b : r.net.blocks) {
      CHECK(b.layer.count() - b.layer.nonzero() == pruned_count(b.layer.count(), 50.0));
      CHECK(b.layer.alpha == doctest::Approx(recompute_gain(b.layer.mask.data(), b.layer.weights.data())));
      for (std::int64_t i = 0; i < b.layer.count(); ++i)
        CHECK(b.layer.sign[i] == (b.layer.weights[i] >= 0 ? 1.0f : -1.0f));
    }
  }

  TEST_CASE("two moons with batch cadence reaches 85% train accuracy") {
    const auto train = data::toy_two_moons(400, 0.1, 7);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 32;
    cfg.cadence = MaskCadence::Batch;
    cfg.seed = 3;
    const auto r = run_biprop(NetworkSpec::mlp({2}, {128, 128}, 2), train, nullptr, cfg);
    CHECK(top1(r.net, train) >= 85.0);
  }

  TEST_CASE("search is deterministic for a fixed seed") {
    const auto train = data::toy_two_moons(128, 0.1, 2);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.seed = 11;
    const auto spec = NetworkSpec::mlp({2}, {32}, 2);
    const auto a = run_biprop(spec, train, nullptr, cfg);
    const auto b = run_biprop(spec, train, nullptr, cfg);
    for (std::size_t i = 0; i < a.net.blocks.size(); ++i) {
      CHECK(a.net.blocks[i].layer.scores.storage() == b.net.blocks[i].layer.scores.storage());
      CHECK(a.net.blocks[i].layer.mask.storage() == b.net.blocks[i].layer.mask.storage());
    }
    REQUIRE(a.reports.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) CHECK(a.reports[e].train_loss == b.reports[e].train_loss);
  }

  TEST_CASE("empty training set with epochs > 0 is a precondition error") {
    data::Dataset empty = data::toy_two_moons(0, 0.1, 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(run_biprop(NetworkSpec::mlp({2}, {4}, 2), empty, nullptr, cfg), PreconditionError);
  }
}
