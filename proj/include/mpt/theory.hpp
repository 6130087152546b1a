#pragma once
// Constructive existence checks for binary-weight subnetworks of a random
// {-1,+1} two-layer block  g(x) = (M~ (.) U)^T relu(gain (M (.) B) x).
// Each builder samples B and U, selects masks the way the existence proofs
// do, and measures how well the masked network approximates the target.

#include <cstdint>
#include <string>
#include <vector>

namespace mpt::theory {

// Row-major dense matrix of doubles.
struct Matrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::int64_t r, std::int64_t c, double fill = 0.0)
      : rows(r), cols(c), v(static_cast<std::size_t>(r * c), fill) {}
  double& operator()(std::int64_t r, std::int64_t c) { return v[static_cast<std::size_t>(r * cols + c)]; }
  double operator()(std::int64_t r, std::int64_t c) const { return v[static_cast<std::size_t>(r * cols + c)]; }
};

// Masked random two-layer block: x in R^d -> R^n.
struct BinaryBlock {
  std::int64_t k = 0;  // hidden width
  std::int64_t d = 0;
  std::int64_t n = 0;
  double gain = 0.0;  // scalar in front of M (.) B
  std::vector<std::int8_t> B;   // [k, d]
  std::vector<std::int8_t> U;   // [k, n]
  std::vector<std::uint8_t> M;  // [k, d]
  std::vector<std::uint8_t> Mt; // [k, n]
  bool outer_relu = false;

  std::vector<double> eval(const std::vector<double>& x) const;
  std::int64_t mask_nonzero() const;
  std::int64_t mask_tilde_nonzero() const;
  // Largest number of kept inputs on any hidden unit.
  std::int64_t max_row_support() const;
};

struct ExistenceCert {
  std::string stage;  // lemma1 | lemma2 | lemma3 | theorem
  bool success = false;
  std::vector<BinaryBlock> layers;  // one block per target layer; depth = 2 * layers.size()
  std::vector<std::int64_t> c_values;  // per selected coordinate, in construction order
  double measured_error = 0.0;
  std::string error_method;  // exact | monte-carlo
  std::int64_t samples = 0;
  // Lemma 2: max over corners of {-1,+1}^d (-1 when d is too large to enumerate).
  double corner_error = -1.0;
  // Exact per-coordinate (lemma 1/2) or per-output-row (lemma 3) errors.
  std::vector<double> component_errors;
  std::int64_t sparsity = 0;        // ||M||_0 summed over layers
  std::int64_t sparsity_tilde = 0;  // ||M~||_0 summed over layers
  double sparsity_bound = 0.0;
  bool sparsity_ok = true;
  std::int64_t k = 0;
  std::int64_t width_bound_used = 0;
  bool odd_half_floored = false;  // some lemma-1 block had odd height
  double coordinate_gain = 0.0;   // per-coordinate epsilon used as the hidden gain
  std::uint64_t seed = 0;

  int depth() const { return 2 * static_cast<int>(layers.size()); }
};

// Minimal widths, natural logarithms.
std::int64_t lemma1_width_bound(double eps, double delta, std::int64_t s);
std::int64_t lemma2_width_bound(double eps, double delta, std::int64_t s);
std::int64_t lemma3_width_bound(double eps, double delta, std::int64_t s, std::int64_t n);
std::int64_t theorem_width_bound(double eps, double delta, std::int64_t s, std::int64_t n, std::int64_t ell);

double lemma1_sparsity_bound(double eps, std::int64_t s);
double lemma2_sparsity_bound(double eps, std::int64_t s);
double lemma3_sparsity_bound(double eps, std::int64_t s, std::int64_t n);
double theorem_sparsity_bound(double eps, std::int64_t s, std::int64_t n, std::int64_t ell);

struct CommonParams {
  double eps = 0.5;
  double delta = 0.3;
  std::int64_t s = 1;
  std::int64_t k = 0;  // 0 selects the width bound
  std::uint64_t seed = 0;
  // Reject k below the bound with PreconditionError. Off only for studies below the bound.
  bool enforce_width = true;
};

// Approximate x -> alpha x_i with x in R^d.
struct Lemma1Instance {
  CommonParams p;
  double alpha = 0.0;
  std::int64_t d = 1;
  std::int64_t i = 0;
};

// Approximate x -> <w, x>.
struct Lemma2Instance {
  CommonParams p;
  std::vector<double> w;
  std::int64_t corner_limit_d = 10;  // corners enumerated when d <= this
};

// Approximate x -> relu(W x), W is [n, d].
struct Lemma3Instance {
  CommonParams p;
  Matrix W;
  std::int64_t samples = 1000;
};

// Approximate F = W_l o relu o ... o relu(W_1 x) on the unit l2 ball.
struct TheoremInstance {
  CommonParams p;
  std::vector<Matrix> W;  // W[0] is [n, d], hidden [n, n], last [1, n]
  std::int64_t samples = 2000;
};

ExistenceCert lemma1_construct(const Lemma1Instance& inst);
ExistenceCert lemma2_construct(const Lemma2Instance& inst);
ExistenceCert lemma3_construct(const Lemma3Instance& inst);
ExistenceCert theorem_construct(const TheoremInstance& inst);

enum class TargetFamily { Lemma1, Lemma2, Lemma3, Theorem };
std::string to_string(TargetFamily f);
TargetFamily parse_target_family(const std::string& s);

struct StudyRow {
  double multiplier = 0.0;
  std::int64_t k = 0;
  std::int64_t trials = 0;
  std::int64_t failures = 0;
  double rate = 0.0;
  double ci_low = 0.0;   // Wilson 95%
  double ci_high = 0.0;
  double delta = 0.0;
  bool within_delta = true;  // ci_low <= delta, checked only for multiplier >= 1
  double max_error = 0.0;    // over successes
  double mean_sparsity = 0.0;
};

struct StudyParams {
  TargetFamily family = TargetFamily::Lemma1;
  double eps = 0.25;
  double delta = 0.1;
  std::int64_t s = 1;
  std::int64_t n = 2;    // lemma3 / theorem output width
  std::int64_t d = 4;    // input dimension for lemma2 / lemma3
  std::int64_t ell = 2;  // theorem depth
  std::vector<double> multipliers{1.0};
  std::int64_t trials = 100;
  std::uint64_t seed = 0;
};

// Random targets per trial (bounded as the constructions require), k = ceil(m * bound).
std::vector<StudyRow> failure_rate_study(const StudyParams& params);

// Wilson score interval for failures/trials at 95%.
void wilson_interval(std::int64_t failures, std::int64_t trials, double& low, double& high);

// Spectral norm via SVD.
double spectral_norm(const Matrix& m);

}  // namespace mpt::theory
