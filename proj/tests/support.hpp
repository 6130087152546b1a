#pragma once
// Shared generators and brute-force oracles for the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <vector>

#include "mpt/layers.hpp"
#include "mpt/ops.hpp"
#include "mpt/tensor.hpp"

namespace mpt::testing {

struct Gen {
  std::mt19937_64 rng;

  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng); }
  bool coin(double p = 0.5) { return uniform() < p; }

  Tensor tensor(const Shape& s, double lo = -1.0, double hi = 1.0) {
    Tensor t(s);
    for (auto& v : t.data()) v = static_cast<float>(uniform(lo, hi));
    return t;
  }
  Tensor signs(const Shape& s) {
    Tensor t(s);
    for (auto& v : t.data()) v = coin() ? 1.0f : -1.0f;
    return t;
  }
  Tensor mask(const Shape& s, double keep = 0.5) {
    Tensor t(s);
    for (auto& v : t.data()) v = coin(keep) ? 1.0f : 0.0f;
    return t;
  }
  // Values drawn from a small set so that |S| has many ties.
  std::vector<float> tie_heavy(std::size_t n, int levels) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(integer(-levels, levels)) * 0.25f;
    return v;
  }
};

// out[b, o] = sum_i x[b, i] * alpha * mask[o, i] * sign[o, i], double accumulation.
inline std::vector<double> oracle_matmul(const Tensor& x, float alpha, const Tensor& mask, const Tensor& sign) {
  const auto n = x.dim(0), in = x.dim(1), out = mask.dim(0);
  std::vector<double> r(static_cast<std::size_t>(n * out), 0.0);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < out; ++o)
      for (std::int64_t i = 0; i < in; ++i)
        r[b * out + o] += static_cast<double>(x[b * in + i]) * alpha * mask[o * in + i] * sign[o * in + i];
  return r;
}

// Direct convolution: w is [Cout, C*k*k] in (c, ky, kx) order, zero padding.
inline std::vector<double> oracle_conv(const Tensor& x, const Tensor& w, const ConvGeometry& g) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto co = w.dim(0), k = g.kernel;
  const auto oh = (h + 2 * g.padding - k) / g.stride + 1, ow = (wd + 2 * g.padding - k) / g.stride + 1;
  std::vector<double> r(static_cast<std::size_t>(n * co * oh * ow), 0.0);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const auto iy = y * g.stride - g.padding + ky, ix = xx * g.stride - g.padding + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += static_cast<double>(x[((b * c + ci) * h + iy) * wd + ix]) * w[o * c * k * k + (ci * k + ky) * k + kx];
              }
          r[((b * co + o) * oh + y) * ow + xx] = acc;
        }
  return r;
}

inline std::filesystem::path data_root() {
  if (const char* env = std::getenv("MPT_DATA_DIR"); env && *env) return env;
  return "data";
}

inline bool have_mnist() { return std::filesystem::exists(data_root() / "mnist" / "train-images-idx3-ubyte"); }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mpt-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace mpt::testing

namespace mpt::testing {

// Double-precision forward of a dense relu network with the mask relaxed to a
// real value, used for finite-difference oracles. BN (if present) uses batch
// statistics with the biased variance, as in search mode.
struct RelaxedMlp {
  struct Layer {
    std::int64_t rows = 0, cols = 0;
    double alpha = 0.0;
    std::vector<double> m, b;  // relaxed mask, signs
    bool bn = false;
    std::vector<double> gamma, beta;
    double eps = 1e-5;
    bool relu = false;
  };
  std::vector<Layer> layers;

  explicit RelaxedMlp(const NetworkState& net) {
    for (const auto& blk : net.blocks) {
      Layer l;
      l.rows = blk.layer.rows;
      l.cols = blk.layer.cols;
      l.alpha = blk.layer.alpha;
      l.m.assign(blk.layer.mask.data().begin(), blk.layer.mask.data().end());
      l.b.assign(blk.layer.sign.data().begin(), blk.layer.sign.data().end());
      l.relu = blk.act == Activation::Relu;
      if (blk.bn) {
        l.bn = true;
        l.gamma.assign(blk.bn->gamma.data().begin(), blk.bn->gamma.data().end());
        l.beta.assign(blk.bn->beta.data().begin(), blk.bn->beta.data().end());
        l.eps = blk.bn->eps;
      }
      layers.push_back(std::move(l));
    }
  }

  double loss(const Tensor& x, const std::vector<int>& y) const {
    const auto n = x.dim(0);
    std::vector<double> h(x.data().begin(), x.data().end());
    std::int64_t width = x.size() / n;
    for (const auto& l : layers) {
      std::vector<double> z(static_cast<std::size_t>(n * l.rows), 0.0);
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t o = 0; o < l.rows; ++o) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < width; ++i) acc += h[s * width + i] * l.alpha * l.m[o * l.cols + i] * l.b[o * l.cols + i];
          z[s * l.rows + o] = acc;
        }
      if (l.bn) {
        for (std::int64_t o = 0; o < l.rows; ++o) {
          double mean = 0.0, var = 0.0;
          for (std::int64_t s = 0; s < n; ++s) mean += z[s * l.rows + o];
          mean /= static_cast<double>(n);
          for (std::int64_t s = 0; s < n; ++s) var += (z[s * l.rows + o] - mean) * (z[s * l.rows + o] - mean);
          var /= static_cast<double>(n);
          for (std::int64_t s = 0; s < n; ++s) {
            auto& v = z[s * l.rows + o];
            v = l.gamma[o] * (v - mean) / std::sqrt(var + l.eps) + l.beta[o];
          }
        }
      }
      if (l.relu)
        for (auto& v : z) v = v > 0.0 ? v : 0.0;
      h = std::move(z);
      width = l.rows;
    }
    double total = 0.0;
    for (std::int64_t s = 0; s < n; ++s) {
      const double* zi = h.data() + s * width;
      double mx = zi[0];
      for (std::int64_t j = 1; j < width; ++j) mx = std::max(mx, zi[j]);
      double se = 0.0;
      for (std::int64_t j = 0; j < width; ++j) se += std::exp(zi[j] - mx);
      total += std::log(se) + mx - zi[y[static_cast<std::size_t>(s)]];
    }
    return total / static_cast<double>(n);
  }
};

}  // namespace mpt::testing
