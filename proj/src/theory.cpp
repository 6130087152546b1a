#include "mpt/theory.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mpt/errors.hpp"

namespace mpt::theory {

namespace {

constexpr double kBoundSlack = 1e-12;

std::mt19937_64 make_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return std::mt19937_64(seq);
}

void check_eps_delta(double eps, double delta) {
  if (!(eps > 0.0 && eps < 1.0)) throw PreconditionError("eps must be in (0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) throw PreconditionError("delta must be in (0, 1)");
}

std::int64_t resolve_width(const CommonParams& p, std::int64_t bound) {
  const std::int64_t k = p.k > 0 ? p.k : bound;
  if (p.enforce_width && k < bound) {
    throw PreconditionError("width k = " + std::to_string(k) + " is below the required " + std::to_string(bound));
  }
  return k;
}

// Samples B [k, d] and U [k, n] uniformly from {-1, +1}.
BinaryBlock sample_block(std::int64_t k, std::int64_t d, std::int64_t n, std::mt19937_64& rng) {
  BinaryBlock b;
  b.k = k;
  b.d = d;
  b.n = n;
  b.B.resize(static_cast<std::size_t>(k * d));
  b.U.resize(static_cast<std::size_t>(k * n));
  b.M.assign(b.B.size(), 0);
  b.Mt.assign(b.U.size(), 0);
  std::uint64_t word = 0;
  int left = 0;
  auto coin = [&]() -> std::int8_t {
    if (left == 0) {
      word = rng();
      left = 64;
    }
    const bool bit = word & 1u;
    word >>= 1;
    --left;
    return bit ? 1 : -1;
  };
  for (auto& v : b.B) v = coin();
  for (auto& v : b.U) v = coin();
  return b;
}

struct BlockResult {
  bool success = true;
  double error = 0.0;
  std::int64_t c = 0;
  bool odd = false;
};

// Lemma-1 selection inside rows [r0, r0 + kb): approximates a * x_i on output column col
// with hidden gain e. The first floor(kb/2) rows supply S+, the rest S-.
BlockResult lemma1_block(BinaryBlock& b, std::int64_t r0, std::int64_t kb, std::int64_t i, std::int64_t col, double a,
                         double e) {
  BlockResult r;
  r.odd = kb % 2 != 0;
  if (std::abs(a) <= e) {
    r.error = std::abs(a);
    return r;
  }
  r.c = static_cast<std::int64_t>(std::floor(std::abs(a) / e));
  r.error = std::abs(static_cast<double>(r.c) * e - std::abs(a));
  const std::int8_t sa = a > 0.0 ? 1 : -1;
  const std::int64_t half = kb / 2;
  std::vector<std::int64_t> plus, minus;
  for (std::int64_t j = r0; j < r0 + half && static_cast<std::int64_t>(plus.size()) < r.c; ++j) {
    if (b.U[static_cast<std::size_t>(j * b.n + col)] == 1 && b.B[static_cast<std::size_t>(j * b.d + i)] == sa) plus.push_back(j);
  }
  for (std::int64_t j = r0 + half; j < r0 + kb && static_cast<std::int64_t>(minus.size()) < r.c; ++j) {
    if (b.U[static_cast<std::size_t>(j * b.n + col)] == -1 && b.B[static_cast<std::size_t>(j * b.d + i)] == -sa) {
      minus.push_back(j);
    }
  }
  if (static_cast<std::int64_t>(plus.size()) < r.c || static_cast<std::int64_t>(minus.size()) < r.c) {
    r.success = false;
    return r;
  }
  for (auto j : plus) {
    b.M[static_cast<std::size_t>(j * b.d + i)] = 1;
    b.Mt[static_cast<std::size_t>(j * b.n + col)] = 1;
  }
  for (auto j : minus) {
    b.M[static_cast<std::size_t>(j * b.d + i)] = 1;
    b.Mt[static_cast<std::size_t>(j * b.n + col)] = 1;
  }
  return r;
}

// Lemma-2 decomposition of rows [r0, r0 + kb) into s equal sub-blocks, one per nonzero of w.
BlockResult lemma2_block(BinaryBlock& b, std::int64_t r0, std::int64_t kb, const std::vector<double>& w,
                         std::int64_t s, std::int64_t col, double e1, std::vector<std::int64_t>& c_values,
                         std::vector<double>* coord_errors) {
  BlockResult r;
  const std::int64_t sub = kb / s;
  std::int64_t slot = 0;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(w.size()); ++i) {
    const double wi = w[static_cast<std::size_t>(i)];
    if (wi == 0.0) continue;
    const auto part = lemma1_block(b, r0 + slot * sub, sub, i, col, wi, e1);
    ++slot;
    r.success = r.success && part.success;
    r.odd = r.odd || part.odd;
    r.error += part.error;
    c_values.push_back(part.c);
    if (coord_errors) coord_errors->push_back(part.error);
  }
  return r;
}

void check_row_target(const std::vector<double>& w, std::int64_t s) {
  const double lim = 1.0 / std::sqrt(static_cast<double>(s)) + kBoundSlack;
  std::int64_t nz = 0;
  for (double v : w) {
    if (!std::isfinite(v) || std::abs(v) > lim) throw PreconditionError("target entry outside [-1/sqrt(s), 1/sqrt(s)]");
    nz += v != 0.0;
  }
  if (nz > s) throw PreconditionError("target has " + std::to_string(nz) + " nonzeros, more than s = " + std::to_string(s));
}

std::vector<double> row_of(const Matrix& m, std::int64_t r) {
  return std::vector<double>(m.v.begin() + r * m.cols, m.v.begin() + (r + 1) * m.cols);
}

// Lemma-3 layer: per output row a lemma-2 block of height k / n. Returns success; fills per-row errors.
bool build_layer(BinaryBlock& b, const Matrix& W, std::int64_t s, double e3, ExistenceCert& cert,
                 std::vector<double>* row_errors) {
  const std::int64_t n = W.rows;
  const std::int64_t kb = b.k / n;
  const double e2 = e3 / std::sqrt(static_cast<double>(n));
  const double e1 = e2 / static_cast<double>(s);
  b.gain = e1;
  cert.coordinate_gain = e1;
  bool ok = true;
  for (std::int64_t r = 0; r < n; ++r) {
    const auto part = lemma2_block(b, r * kb, kb, row_of(W, r), s, r, e1, cert.c_values, nullptr);
    ok = ok && part.success;
    cert.odd_half_floored = cert.odd_half_floored || part.odd;
    if (row_errors) row_errors->push_back(part.error);
  }
  return ok;
}

void finalize_sparsity(ExistenceCert& cert) {
  cert.sparsity = cert.sparsity_tilde = 0;
  for (const auto& l : cert.layers) {
    cert.sparsity += l.mask_nonzero();
    cert.sparsity_tilde += l.mask_tilde_nonzero();
  }
  if (cert.sparsity != cert.sparsity_tilde) throw ContractError("construction produced ||M~||_0 != ||M||_0");
  cert.sparsity_ok = static_cast<double>(cert.sparsity) <= cert.sparsity_bound + kBoundSlack;
}

std::vector<double> matvec(const Matrix& W, const std::vector<double>& x, bool relu) {
  std::vector<double> y(static_cast<std::size_t>(W.rows), 0.0);
  for (std::int64_t r = 0; r < W.rows; ++r) {
    double acc = 0.0;
    for (std::int64_t c = 0; c < W.cols; ++c) acc += W(r, c) * x[static_cast<std::size_t>(c)];
    y[static_cast<std::size_t>(r)] = relu ? std::max(acc, 0.0) : acc;
  }
  return y;
}

double l2_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

// Uniform in the unit l2 ball of R^d.
std::vector<double> sample_ball(std::int64_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(static_cast<std::size_t>(d));
  double norm = 0.0;
  for (auto& v : x) {
    v = g(rng);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  const double radius = std::pow(u(rng), 1.0 / static_cast<double>(d));
  for (auto& v : x) v = norm > 0.0 ? v / norm * radius : 0.0;
  return x;
}

}  // namespace

std::vector<double> BinaryBlock::eval(const std::vector<double>& x) const {
  if (static_cast<std::int64_t>(x.size()) != d) throw DimensionError("block input has wrong dimension");
  std::vector<double> y(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t j = 0; j < k; ++j) {
    double pre = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      const auto idx = static_cast<std::size_t>(j * d + i);
      if (M[idx]) pre += B[idx] * x[static_cast<std::size_t>(i)];
    }
    const double h = std::max(gain * pre, 0.0);
    if (h == 0.0) continue;
    for (std::int64_t o = 0; o < n; ++o) {
      const auto idx = static_cast<std::size_t>(j * n + o);
      if (Mt[idx]) y[static_cast<std::size_t>(o)] += U[idx] * h;
    }
  }
  if (outer_relu) {
    for (auto& v : y) v = std::max(v, 0.0);
  }
  return y;
}

std::int64_t BinaryBlock::mask_nonzero() const { return std::count(M.begin(), M.end(), std::uint8_t{1}); }
std::int64_t BinaryBlock::mask_tilde_nonzero() const { return std::count(Mt.begin(), Mt.end(), std::uint8_t{1}); }

std::int64_t BinaryBlock::max_row_support() const {
  std::int64_t best = 0;
  for (std::int64_t j = 0; j < k; ++j) {
    best = std::max<std::int64_t>(best, std::count(M.begin() + j * d, M.begin() + (j + 1) * d, std::uint8_t{1}));
  }
  return best;
}

std::int64_t lemma1_width_bound(double eps, double delta, std::int64_t s) {
  check_eps_delta(eps, delta);
  if (s < 1) throw PreconditionError("s must be >= 1");
  return static_cast<std::int64_t>(std::ceil(16.0 / (eps * std::sqrt(static_cast<double>(s))) + 16.0 * std::log(2.0 / delta)));
}

std::int64_t lemma2_width_bound(double eps, double delta, std::int64_t s) {
  check_eps_delta(eps, delta);
  if (s < 1) throw PreconditionError("s must be >= 1");
  const double sd = static_cast<double>(s);
  return s * static_cast<std::int64_t>(std::ceil(16.0 * std::sqrt(sd) / eps + 16.0 * std::log(2.0 * sd / delta)));
}

std::int64_t lemma3_width_bound(double eps, double delta, std::int64_t s, std::int64_t n) {
  check_eps_delta(eps, delta);
  if (s < 1 || n < 1) throw PreconditionError("s and n must be >= 1");
  const double ns = static_cast<double>(n * s);
  return n * s * static_cast<std::int64_t>(std::ceil(16.0 * std::sqrt(ns) / eps + 16.0 * std::log(2.0 * ns / delta)));
}

std::int64_t theorem_width_bound(double eps, double delta, std::int64_t s, std::int64_t n, std::int64_t ell) {
  check_eps_delta(eps, delta);
  if (s < 1 || n < 1 || ell < 1) throw PreconditionError("s, n and depth must be >= 1");
  const double ns = static_cast<double>(n * s), l = static_cast<double>(ell);
  return n * s *
         static_cast<std::int64_t>(std::ceil(32.0 * l * std::sqrt(ns) / eps + 16.0 * std::log(2.0 * ns * l / delta)));
}

double lemma1_sparsity_bound(double eps, std::int64_t s) { return 2.0 / (eps * std::sqrt(static_cast<double>(s))); }
double lemma2_sparsity_bound(double eps, std::int64_t s) {
  const double sd = static_cast<double>(s);
  return 2.0 * sd * std::sqrt(sd) / eps;
}
double lemma3_sparsity_bound(double eps, std::int64_t s, std::int64_t n) {
  const double ns = static_cast<double>(n * s);
  return 2.0 * ns * std::sqrt(ns) / eps;
}
double theorem_sparsity_bound(double eps, std::int64_t s, std::int64_t n, std::int64_t ell) {
  const double ns = static_cast<double>(n * s), l = static_cast<double>(ell);
  return 4.0 * ns * l * l * std::sqrt(ns) / eps;
}

ExistenceCert lemma1_construct(const Lemma1Instance& inst) {
  const auto& p = inst.p;
  const auto bound = lemma1_width_bound(p.eps, p.delta, p.s);
  if (inst.d < 1 || inst.i < 0 || inst.i >= inst.d) throw PreconditionError("coordinate i must lie in [0, d)");
  if (!std::isfinite(inst.alpha) || std::abs(inst.alpha) > 1.0 / std::sqrt(static_cast<double>(p.s)) + kBoundSlack) {
    throw PreconditionError("alpha outside [-1/sqrt(s), 1/sqrt(s)]");
  }
  ExistenceCert cert;
  cert.stage = "lemma1";
  cert.seed = p.seed;
  cert.width_bound_used = bound;
  cert.k = resolve_width(p, bound);
  cert.sparsity_bound = lemma1_sparsity_bound(p.eps, p.s);
  cert.coordinate_gain = p.eps;
  auto rng = make_rng(p.seed, 1);
  BinaryBlock b = sample_block(cert.k, inst.d, 1, rng);
  b.gain = p.eps;
  const auto r = lemma1_block(b, 0, cert.k, inst.i, 0, inst.alpha, p.eps);
  cert.success = r.success;
  cert.odd_half_floored = r.odd;
  cert.c_values.push_back(r.c);
  cert.component_errors.push_back(r.error);
  cert.measured_error = r.error;
  cert.error_method = "exact";
  cert.layers.push_back(std::move(b));
  finalize_sparsity(cert);
  if (cert.success) {
    // g(x) = c eps sgn(alpha) x_i for every x; spot-check the built network.
    auto xr = make_rng(p.seed, 2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double coef = static_cast<double>(r.c) * p.eps * (inst.alpha > 0.0 ? 1.0 : -1.0);
    for (int t = 0; t < 16; ++t) {
      std::vector<double> x(static_cast<std::size_t>(inst.d));
      for (auto& v : x) v = u(xr);
      const double g = cert.layers[0].eval(x)[0];
      const double want = r.c == 0 ? 0.0 : coef * x[static_cast<std::size_t>(inst.i)];
      if (std::abs(g - want) > 1e-12 * std::max<double>(1.0, static_cast<double>(r.c))) {
        throw ContractError("lemma-1 network does not reproduce c eps sgn(alpha) x_i");
      }
    }
    if (cert.layers[0].max_row_support() > 1) throw ContractError("lemma-1 mask row support exceeds 1");
  }
  return cert;
}

ExistenceCert lemma2_construct(const Lemma2Instance& inst) {
  const auto& p = inst.p;
  const auto bound = lemma2_width_bound(p.eps, p.delta, p.s);
  if (inst.w.empty()) throw PreconditionError("target vector is empty");
  check_row_target(inst.w, p.s);
  ExistenceCert cert;
  cert.stage = "lemma2";
  cert.seed = p.seed;
  cert.width_bound_used = bound;
  cert.k = resolve_width(p, bound);
  cert.sparsity_bound = lemma2_sparsity_bound(p.eps, p.s);
  const double e1 = p.eps / static_cast<double>(p.s);
  cert.coordinate_gain = e1;
  const auto d = static_cast<std::int64_t>(inst.w.size());
  auto rng = make_rng(p.seed, 1);
  BinaryBlock b = sample_block(cert.k, d, 1, rng);
  b.gain = e1;
  const auto r = lemma2_block(b, 0, cert.k, inst.w, p.s, 0, e1, cert.c_values, &cert.component_errors);
  cert.success = r.success;
  cert.odd_half_floored = r.odd;
  cert.measured_error = r.error;
  cert.error_method = "exact";
  cert.layers.push_back(std::move(b));
  finalize_sparsity(cert);
  if (cert.success && d <= inst.corner_limit_d) {
    double worst = 0.0;
    std::vector<double> x(static_cast<std::size_t>(d));
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << d); ++mask) {
      double target = 0.0;
      for (std::int64_t i = 0; i < d; ++i) {
        x[static_cast<std::size_t>(i)] = (mask >> i) & 1u ? 1.0 : -1.0;
        target += inst.w[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
      }
      worst = std::max(worst, std::abs(cert.layers[0].eval(x)[0] - target));
    }
    cert.corner_error = worst;
    cert.samples = std::int64_t{1} << d;
  }
  if (cert.success && cert.layers[0].max_row_support() > 1) throw ContractError("lemma-2 mask row support exceeds 1");
  return cert;
}

ExistenceCert lemma3_construct(const Lemma3Instance& inst) {
  const auto& p = inst.p;
  const auto& W = inst.W;
  if (W.rows < 1 || W.cols < 1 || static_cast<std::int64_t>(W.v.size()) != W.rows * W.cols) {
    throw PreconditionError("target matrix must be non-empty [n, d]");
  }
  const auto bound = lemma3_width_bound(p.eps, p.delta, p.s, W.rows);
  for (std::int64_t r = 0; r < W.rows; ++r) check_row_target(row_of(W, r), p.s);
  ExistenceCert cert;
  cert.stage = "lemma3";
  cert.seed = p.seed;
  cert.width_bound_used = bound;
  cert.k = resolve_width(p, bound);
  cert.sparsity_bound = lemma3_sparsity_bound(p.eps, p.s, W.rows);
  auto rng = make_rng(p.seed, 1);
  BinaryBlock b = sample_block(cert.k, W.cols, W.rows, rng);
  b.outer_relu = true;
  cert.success = build_layer(b, W, p.s, p.eps, cert, &cert.component_errors);
  cert.layers.push_back(std::move(b));
  finalize_sparsity(cert);
  cert.error_method = "monte-carlo";
  cert.samples = inst.samples;
  if (cert.success) {
    auto xr = make_rng(p.seed, 2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> x(static_cast<std::size_t>(W.cols));
    double worst = 0.0;
    for (std::int64_t t = 0; t < inst.samples; ++t) {
      for (auto& v : x) v = u(xr);
      worst = std::max(worst, l2_diff(cert.layers[0].eval(x), matvec(W, x, true)));
    }
    cert.measured_error = worst;
  }
  return cert;
}

ExistenceCert theorem_construct(const TheoremInstance& inst) {
  const auto& p = inst.p;
  const auto ell = static_cast<std::int64_t>(inst.W.size());
  if (ell < 1) throw PreconditionError("target network has no layers");
  const auto d = inst.W[0].cols;
  const auto n = inst.W[0].rows;
  for (std::int64_t i = 0; i < ell; ++i) {
    const auto& W = inst.W[static_cast<std::size_t>(i)];
    if (static_cast<std::int64_t>(W.v.size()) != W.rows * W.cols || W.rows < 1) {
      throw PreconditionError("target layer " + std::to_string(i) + " is malformed");
    }
    if (i > 0 && W.cols != inst.W[static_cast<std::size_t>(i - 1)].rows) {
      throw PreconditionError("target layer " + std::to_string(i) + " input width does not chain");
    }
    if (i == ell - 1 && W.rows != 1) throw PreconditionError("last target layer must have one output");
    if (i > 0 && i < ell - 1 && W.rows != n) throw PreconditionError("hidden target layers must have width n");
    const double lim = i == 0 ? 1.0 / std::sqrt(static_cast<double>(p.s)) : 1.0 / std::sqrt(static_cast<double>(n));
    for (double v : W.v) {
      if (!std::isfinite(v) || std::abs(v) > lim + kBoundSlack) {
        throw PreconditionError("target layer " + std::to_string(i) + " entry exceeds its bound");
      }
    }
    for (std::int64_t r = 0; r < W.rows; ++r) {
      const auto row = row_of(W, r);
      if (std::count_if(row.begin(), row.end(), [](double v) { return v != 0.0; }) > p.s) {
        throw PreconditionError("target layer " + std::to_string(i) + " has a row with more than s nonzeros");
      }
    }
    if (spectral_norm(W) > 1.0 + 1e-9) throw PreconditionError("target layer " + std::to_string(i) + " has ||W||_2 > 1");
  }
  const auto bound = theorem_width_bound(p.eps, p.delta, p.s, n, ell);
  ExistenceCert cert;
  cert.stage = "theorem";
  cert.seed = p.seed;
  cert.width_bound_used = bound;
  cert.k = resolve_width(p, bound);
  cert.sparsity_bound = theorem_sparsity_bound(p.eps, p.s, n, ell);
  const double e_layer = p.eps / (2.0 * static_cast<double>(ell));
  cert.success = true;
  for (std::int64_t i = 0; i < ell; ++i) {
    const auto& W = inst.W[static_cast<std::size_t>(i)];
    auto rng = make_rng(p.seed, static_cast<std::uint32_t>(1 + i));
    BinaryBlock b = sample_block(cert.k, W.cols, W.rows, rng);
    b.outer_relu = i < ell - 1;
    cert.success = build_layer(b, W, p.s, e_layer, cert, nullptr) && cert.success;
    cert.layers.push_back(std::move(b));
  }
  finalize_sparsity(cert);
  cert.error_method = "monte-carlo";
  cert.samples = inst.samples;
  if (cert.success) {
    auto xr = make_rng(p.seed, 1000);
    double worst = 0.0;
    for (std::int64_t t = 0; t < inst.samples; ++t) {
      const auto x = sample_ball(d, xr);
      auto g = x, f = x;
      for (std::int64_t i = 0; i < ell; ++i) {
        g = cert.layers[static_cast<std::size_t>(i)].eval(g);
        f = matvec(inst.W[static_cast<std::size_t>(i)], f, i < ell - 1);
      }
      worst = std::max(worst, std::abs(g[0] - f[0]));
    }
    cert.measured_error = worst;
  }
  return cert;
}

std::string to_string(TargetFamily f) {
  switch (f) {
    case TargetFamily::Lemma1: return "lemma1";
    case TargetFamily::Lemma2: return "lemma2";
    case TargetFamily::Lemma3: return "lemma3";
    case TargetFamily::Theorem: return "theorem";
  }
  return "?";
}

TargetFamily parse_target_family(const std::string& s) {
  if (s == "lemma1") return TargetFamily::Lemma1;
  if (s == "lemma2") return TargetFamily::Lemma2;
  if (s == "lemma3") return TargetFamily::Lemma3;
  if (s == "theorem") return TargetFamily::Theorem;
  throw ConfigError("unknown target family '" + s + "' (expected lemma1, lemma2, lemma3 or theorem)");
}

void wilson_interval(std::int64_t failures, std::int64_t trials, double& low, double& high) {
  if (trials <= 0) {
    low = 0.0;
    high = 1.0;
    return;
  }
  const double z = 1.959963984540054;
  const double nt = static_cast<double>(trials);
  const double ph = static_cast<double>(failures) / nt;
  const double denom = 1.0 + z * z / nt;
  const double centre = (ph + z * z / (2.0 * nt)) / denom;
  const double half = z * std::sqrt(ph * (1.0 - ph) / nt + z * z / (4.0 * nt * nt)) / denom;
  low = failures == 0 ? 0.0 : std::max(0.0, centre - half);
  high = failures == trials ? 1.0 : std::min(1.0, centre + half);
}

double spectral_norm(const Matrix& m) {
  if (m.rows == 0 || m.cols == 0) return 0.0;
  Eigen::MatrixXd e(m.rows, m.cols);
  for (std::int64_t r = 0; r < m.rows; ++r) {
    for (std::int64_t c = 0; c < m.cols; ++c) e(r, c) = m(r, c);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(e);
  return svd.singularValues()(0);
}

std::vector<StudyRow> failure_rate_study(const StudyParams& sp) {
  std::vector<StudyRow> rows;
  if (sp.trials <= 0) return rows;
  check_eps_delta(sp.eps, sp.delta);
  if (sp.s < 1 || sp.n < 1 || sp.d < sp.s || sp.ell < 1) throw PreconditionError("study requires 1 <= s <= d, n >= 1, depth >= 1");
  std::int64_t bound = 0;
  switch (sp.family) {
    case TargetFamily::Lemma1: bound = lemma1_width_bound(sp.eps, sp.delta, sp.s); break;
    case TargetFamily::Lemma2: bound = lemma2_width_bound(sp.eps, sp.delta, sp.s); break;
    case TargetFamily::Lemma3: bound = lemma3_width_bound(sp.eps, sp.delta, sp.s, sp.n); break;
    case TargetFamily::Theorem: bound = theorem_width_bound(sp.eps, sp.delta, sp.s, sp.n, sp.ell); break;
  }
  const double lim_s = 1.0 / std::sqrt(static_cast<double>(sp.s));
  for (std::size_t mi = 0; mi < sp.multipliers.size(); ++mi) {
    const double m = sp.multipliers[mi];
    if (!(m > 0.0)) throw PreconditionError("width multipliers must be > 0");
    StudyRow row;
    row.multiplier = m;
    row.k = std::max<std::int64_t>(2, static_cast<std::int64_t>(std::ceil(m * static_cast<double>(bound))));
    row.delta = sp.delta;
    row.trials = sp.trials;
    double sparsity_sum = 0.0;
    std::int64_t successes = 0;
    for (std::int64_t t = 0; t < sp.trials; ++t) {
      auto rng = make_rng(sp.seed ^ (0x9e3779b97f4a7c15ull * (mi + 1)), static_cast<std::uint32_t>(t));
      std::uniform_real_distribution<double> entry(-lim_s, lim_s);
      CommonParams cp{sp.eps, sp.delta, sp.s, row.k, rng(), m >= 1.0};
      // Random s-sparse row of length d.
      auto sparse_row = [&](std::int64_t len, double lim) {
        std::vector<double> w(static_cast<std::size_t>(len), 0.0);
        std::vector<std::int64_t> idx(static_cast<std::size_t>(len));
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        std::uniform_real_distribution<double> e(-lim, lim);
        for (std::int64_t j = 0; j < std::min(sp.s, len); ++j) w[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])] = e(rng);
        return w;
      };
      ExistenceCert cert;
      switch (sp.family) {
        case TargetFamily::Lemma1: cert = lemma1_construct({cp, entry(rng), 1, 0}); break;
        case TargetFamily::Lemma2: cert = lemma2_construct({cp, sparse_row(sp.d, lim_s), 10}); break;
        case TargetFamily::Lemma3: {
          Matrix W(sp.n, sp.d);
          for (std::int64_t r = 0; r < sp.n; ++r) {
            const auto w = sparse_row(sp.d, lim_s);
            std::copy(w.begin(), w.end(), W.v.begin() + r * sp.d);
          }
          cert = lemma3_construct({cp, W, 200});
          break;
        }
        case TargetFamily::Theorem: {
          std::vector<Matrix> Ws;
          for (std::int64_t i = 0; i < sp.ell; ++i) {
            const std::int64_t rows = i == sp.ell - 1 ? 1 : sp.n;
            const std::int64_t cols = i == 0 ? sp.d : sp.n;
            const double lim = i == 0 ? lim_s : 1.0 / std::sqrt(static_cast<double>(sp.n));
            Matrix W(rows, cols);
            for (std::int64_t r = 0; r < rows; ++r) {
              const auto w = sparse_row(cols, lim);
              std::copy(w.begin(), w.end(), W.v.begin() + r * cols);
            }
            const double norm = spectral_norm(W);
            if (norm > 1.0) {
              for (auto& v : W.v) v /= norm;
            }
            Ws.push_back(std::move(W));
          }
          cert = theorem_construct({cp, Ws, 200});
          break;
        }
      }
      if (cert.success) {
        ++successes;
        row.max_error = std::max(row.max_error, cert.measured_error);
        sparsity_sum += static_cast<double>(cert.sparsity);
      } else {
        ++row.failures;
      }
    }
    row.rate = static_cast<double>(row.failures) / static_cast<double>(row.trials);
    wilson_interval(row.failures, row.trials, row.ci_low, row.ci_high);
    row.within_delta = m < 1.0 || row.ci_low <= row.delta;
    row.mean_sparsity = successes ? sparsity_sum / static_cast<double>(successes) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace mpt::theory
