#include "mpt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "mpt/errors.hpp"
#include "mpt/estimators.hpp"

namespace mpt {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

struct ImageDims {
  std::int64_t n, c, h, w;
};

ImageDims image_dims(const Tensor& x) {
  require(x.rank() == 4, "conv2d expects [N, C, H, W] input, got " + shape_str(x.shape()));
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

std::int64_t channel_inner(const Tensor& x) {
  require(x.rank() == 2 || x.rank() == 4, "channel op expects [N, C] or [N, C, H, W], got " + shape_str(x.shape()));
  return x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
}

Tensor ternary_from(const Tensor& mask, const Tensor& sign) {
  require(mask.shape() == sign.shape(), "mask shape " + shape_str(mask.shape()) + " != sign shape " +
                                            shape_str(sign.shape()));
  Tensor t(mask.shape());
  for (std::int64_t i = 0; i < mask.size(); ++i) {
    const float m = mask[i], b = sign[i];
    if ((m != 0.0f && m != 1.0f) || (b != 1.0f && b != -1.0f)) {
      throw ParameterError("mask entries must be in {0,1} and sign entries in {-1,+1}");
    }
    t[i] = m * b;
  }
  return t;
}

void accumulate_score_grad(const MaskedBinaryOperand& w, const RowMat& g) {
  if (w.scores == nullptr) return;
  auto sg = w.scores->grad();
  const float* b = w.sign->ptr();
  const float* gp = g.data();
  const float* sp = w.scores->ptr();
  const auto n = static_cast<std::int64_t>(sg.size());
  for (std::int64_t i = 0; i < n; ++i) sg[i] += w.alpha * b[i] * gp[i] * (sp[i] >= 0.0f ? 1.0f : -1.0f);
}

void check_operand(const MaskedBinaryOperand& w) {
  require(w.ternary != nullptr && w.ternary->rank() == 2, "masked binary operand needs a [rows, cols] matrix");
  if (w.scores != nullptr) {
    require(w.sign != nullptr && w.sign->shape() == w.ternary->shape() && w.scores->shape() == w.ternary->shape(),
            "score/sign shapes must match the weight matrix");
  }
}

}  // namespace

void ConvGeometry::validate() const {
  if (kernel < 1) throw ParameterError("conv kernel must be >= 1");
  if (stride < 1) throw ParameterError("conv stride must be >= 1");
  if (padding < 0 || padding >= kernel) throw ParameterError("conv padding must be in [0, kernel)");
}

std::int64_t ConvGeometry::out_size(std::int64_t in) const {
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0) throw DimensionError("conv input smaller than kernel");
  return span / stride + 1;
}

void im2col(const float* in, std::int64_t channels, std::int64_t height, std::int64_t width, const ConvGeometry& g,
            float* cols) {
  const std::int64_t oh = g.out_size(height), ow = g.out_size(width);
  const std::int64_t k = g.kernel;
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t kh = 0; kh < k; ++kh) {
      for (std::int64_t kw = 0; kw < k; ++kw) {
        float* row = cols + ((c * k + kh) * k + kw) * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y) {
          const std::int64_t iy = y * g.stride - g.padding + kh;
          float* dst = row + y * ow;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + ow, 0.0f);
            continue;
          }
          const float* src = in + (c * height + iy) * width;
          for (std::int64_t x = 0; x < ow; ++x) {
            const std::int64_t ix = x * g.stride - g.padding + kw;
            dst[x] = (ix >= 0 && ix < width) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* cols, std::int64_t channels, std::int64_t height, std::int64_t width, const ConvGeometry& g,
            float* out) {
  const std::int64_t oh = g.out_size(height), ow = g.out_size(width);
  const std::int64_t k = g.kernel;
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t kh = 0; kh < k; ++kh) {
      for (std::int64_t kw = 0; kw < k; ++kw) {
        const float* row = cols + ((c * k + kh) * k + kw) * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y) {
          const std::int64_t iy = y * g.stride - g.padding + kh;
          if (iy < 0 || iy >= height) continue;
          float* dst = out + (c * height + iy) * width;
          const float* src = row + y * ow;
          for (std::int64_t x = 0; x < ow; ++x) {
            const std::int64_t ix = x * g.stride - g.padding + kw;
            if (ix >= 0 && ix < width) dst[ix] += src[x];
          }
        }
      }
    }
  }
}

Tensor linear_scaled(const Tensor& x, const Tensor& weight, float scale, Tensor* raw) {
  require(x.rank() == 2 && weight.rank() == 2, "linear expects [N, in] input and [out, in] weights");
  require(x.dim(1) == weight.dim(1), "linear input width " + std::to_string(x.dim(1)) + " != weight cols " +
                                         std::to_string(weight.dim(1)));
  const auto n = x.dim(0), in = x.dim(1), out = weight.dim(0);
  Tensor y({n, out});
  CMapMat xm(x.ptr(), n, in);
  CMapMat wm(weight.ptr(), out, in);
  MapMat ym(y.ptr(), n, out);
  ym.noalias() = xm * wm.transpose();
  if (raw != nullptr) *raw = y;
  if (scale != 1.0f) ym *= scale;
  return y;
}

Tensor conv2d_scaled(const Tensor& x, const Tensor& weight, float scale, ConvGeometry geom, Tensor* raw) {
  geom.validate();
  const auto d = image_dims(x);
  require(weight.rank() == 2 && weight.dim(1) == d.c * geom.kernel * geom.kernel,
          "conv weight " + shape_str(weight.shape()) + " does not match input channels " + std::to_string(d.c));
  const auto oh = geom.out_size(d.h), ow = geom.out_size(d.w);
  const auto cout = weight.dim(0), kdim = weight.dim(1), ohw = oh * ow;
  Tensor y({d.n, cout, oh, ow});
  std::vector<float> cols(static_cast<std::size_t>(kdim * ohw));
  CMapMat wm(weight.ptr(), cout, kdim);
  for (std::int64_t i = 0; i < d.n; ++i) {
    im2col(x.ptr() + i * d.c * d.h * d.w, d.c, d.h, d.w, geom, cols.data());
    MapMat ym(y.ptr() + i * cout * ohw, cout, ohw);
    ym.noalias() = wm * CMapMat(cols.data(), kdim, ohw);
  }
  if (raw != nullptr) *raw = y;
  if (scale != 1.0f) {
    for (auto& v : y.data()) v *= scale;
  }
  return y;
}

Tensor matmul_masked_binary(const Tensor& x, float alpha, const Tensor& mask, const Tensor& sign) {
  const Tensor t = ternary_from(mask, sign);
  return linear_scaled(x, t, alpha);
}

Tensor conv2d_masked_binary(const Tensor& x, float alpha, const Tensor& mask, const Tensor& sign, ConvGeometry geom) {
  const Tensor t = ternary_from(mask, sign);
  return conv2d_scaled(x, t, alpha, geom);
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  y.drop_grad();
  for (auto& v : y.data()) v = v > 0.0f ? v : 0.0f;
  return y;
}

Tensor sign_act(const Tensor& x) {
  Tensor y = x;
  y.drop_grad();
  for (auto& v : y.data()) v = v >= 0.0f ? 1.0f : -1.0f;
  return y;
}

Tensor maxpool2d(const Tensor& x, std::int64_t window) {
  const auto d = image_dims(x);
  if (window < 1) throw ParameterError("pool window must be >= 1");
  const auto oh = d.h / window, ow = d.w / window;
  require(oh > 0 && ow > 0, "pool window larger than input");
  Tensor y({d.n, d.c, oh, ow});
  for (std::int64_t p = 0; p < d.n * d.c; ++p) {
    const float* src = x.ptr() + p * d.h * d.w;
    float* dst = y.ptr() + p * oh * ow;
    for (std::int64_t r = 0; r < oh; ++r) {
      for (std::int64_t c = 0; c < ow; ++c) {
        float best = -std::numeric_limits<float>::infinity();
        for (std::int64_t a = 0; a < window; ++a)
          for (std::int64_t b = 0; b < window; ++b) best = std::max(best, src[(r * window + a) * d.w + c * window + b]);
        dst[r * ow + c] = best;
      }
    }
  }
  return y;
}

BnFold fold_batchnorm(std::span<const float> gamma, std::span<const float> beta, std::span<const float> mean,
                      std::span<const float> var, float eps) {
  const auto c = gamma.size();
  require(beta.size() == c && mean.size() == c && var.size() == c, "batchnorm parameter lengths differ");
  BnFold f;
  f.scale.resize(c);
  f.shift.resize(c);
  for (std::size_t i = 0; i < c; ++i) {
    f.scale[i] = gamma[i] / std::sqrt(var[i] + eps);
    f.shift[i] = beta[i] - mean[i] * f.scale[i];
  }
  return f;
}

Tensor apply_channel_affine(const Tensor& x, const BnFold& fold) {
  const auto inner = channel_inner(x);
  const auto n = x.dim(0), c = x.dim(1);
  require(static_cast<std::int64_t>(fold.scale.size()) == c, "affine channel count mismatch");
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float s = fold.scale[static_cast<std::size_t>(ch)], b = fold.shift[static_cast<std::size_t>(ch)];
      const float* src = x.ptr() + (i * c + ch) * inner;
      float* dst = y.ptr() + (i * c + ch) * inner;
      for (std::int64_t k = 0; k < inner; ++k) dst[k] = src[k] * s + b;
    }
  }
  return y;
}

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require(logits.rank() == 2 && static_cast<std::size_t>(logits.dim(0)) == labels.size(),
          "logits/labels batch mismatch");
  const auto n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const float* z = logits.ptr() + i * k;
    const float mx = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::int64_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(z[j] - mx));
    total += std::log(s) + mx - z[labels[static_cast<std::size_t>(i)]];
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, "argmax expects [N, K] logits");
  const auto n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const float* z = logits.ptr() + i * k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(z, z + k) - z);
  }
  return out;
}

namespace tape_ops {

VarId linear(Tape& tape, VarId xid, const MaskedBinaryOperand& w) {
  check_operand(w);
  const Tensor& x = tape.value(xid);
  Tensor y = linear_scaled(x, *w.ternary, w.alpha);
  if (w.scores != nullptr) w.scores->grad();
  return tape.record(
      std::move(y), {xid},
      [w, xid](BackwardContext& ctx) {
        const Tensor& x = ctx.value(xid);
        const auto n = x.dim(0), in = x.dim(1), out = w.ternary->dim(0);
        CMapMat dy(ctx.out_grad().data(), n, out);
        if (ctx.needs_grad(xid)) {
          MapMat dx(ctx.grad(xid).data(), n, in);
          dx.noalias() += w.alpha * (dy * CMapMat(w.ternary->ptr(), out, in));
        }
        if (w.scores != nullptr) {
          RowMat g = dy.transpose() * CMapMat(x.ptr(), n, in);
          accumulate_score_grad(w, g);
        }
      },
      w.scores != nullptr);
}

VarId conv2d(Tape& tape, VarId xid, const MaskedBinaryOperand& w, ConvGeometry geom) {
  check_operand(w);
  Tensor y = conv2d_scaled(tape.value(xid), *w.ternary, w.alpha, geom);
  if (w.scores != nullptr) w.scores->grad();
  return tape.record(
      std::move(y), {xid},
      [w, xid, geom](BackwardContext& ctx) {
        const Tensor& x = ctx.value(xid);
        const auto d = image_dims(x);
        const auto oh = geom.out_size(d.h), ow = geom.out_size(d.w), ohw = oh * ow;
        const auto cout = w.ternary->dim(0), kdim = w.ternary->dim(1);
        const bool need_dx = ctx.needs_grad(xid);
        std::vector<float> cols(static_cast<std::size_t>(kdim * ohw));
        std::vector<float> dcols(need_dx ? cols.size() : 0);
        RowMat g = RowMat::Zero(cout, kdim);
        CMapMat wm(w.ternary->ptr(), cout, kdim);
        float* dx = need_dx ? ctx.grad(xid).data() : nullptr;
        const float* dy = ctx.out_grad().data();
        for (std::int64_t i = 0; i < d.n; ++i) {
          CMapMat dyi(dy + i * cout * ohw, cout, ohw);
          if (w.scores != nullptr) {
            im2col(x.ptr() + i * d.c * d.h * d.w, d.c, d.h, d.w, geom, cols.data());
            g.noalias() += dyi * CMapMat(cols.data(), kdim, ohw).transpose();
          }
          if (need_dx) {
            MapMat dc(dcols.data(), kdim, ohw);
            dc.noalias() = w.alpha * (wm.transpose() * dyi);
            col2im(dcols.data(), d.c, d.h, d.w, geom, dx + i * d.c * d.h * d.w);
          }
        }
        accumulate_score_grad(w, g);
      },
      w.scores != nullptr);
}

VarId relu(Tape& tape, VarId xid) {
  return tape.record(mpt::relu(tape.value(xid)), {xid}, [xid](BackwardContext& ctx) {
    const auto& x = ctx.value(xid).data();
    auto dx = ctx.grad(xid);
    auto dy = ctx.out_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += x[i] > 0.0f ? dy[i] : 0.0f;
  }, false);
}

VarId sign(Tape& tape, VarId xid, float spline_t) {
  SplineParam checked(spline_t);
  const float inv_t = 1.0f / static_cast<float>(checked.t);
  return tape.record(sign_act(tape.value(xid)), {xid}, [xid, inv_t](BackwardContext& ctx) {
    const auto& x = ctx.value(xid).data();
    auto dx = ctx.grad(xid);
    auto dy = ctx.out_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * spline_grad_unchecked(x[i], inv_t);
  }, false);
}

VarId maxpool2d(Tape& tape, VarId xid, std::int64_t window) {
  const Tensor& x = tape.value(xid);
  Tensor y = mpt::maxpool2d(x, window);
  const auto d = image_dims(x);
  const auto oh = d.h / window, ow = d.w / window;
  // Flat input index of each selected maximum.
  std::vector<std::int64_t> arg(static_cast<std::size_t>(y.size()));
  for (std::int64_t p = 0; p < d.n * d.c; ++p) {
    const float* src = x.ptr() + p * d.h * d.w;
    for (std::int64_t r = 0; r < oh; ++r) {
      for (std::int64_t c = 0; c < ow; ++c) {
        std::int64_t best = (r * window) * d.w + c * window;
        for (std::int64_t a = 0; a < window; ++a)
          for (std::int64_t b = 0; b < window; ++b) {
            const auto idx = (r * window + a) * d.w + c * window + b;
            if (src[idx] > src[best]) best = idx;
          }
        arg[static_cast<std::size_t>(p * oh * ow + r * ow + c)] = p * d.h * d.w + best;
      }
    }
  }
  return tape.record(std::move(y), {xid}, [xid, arg = std::move(arg)](BackwardContext& ctx) {
    auto dx = ctx.grad(xid);
    auto dy = ctx.out_grad();
    for (std::size_t i = 0; i < arg.size(); ++i) dx[static_cast<std::size_t>(arg[i])] += dy[i];
  }, false);
}

VarId add(Tape& tape, VarId a, VarId b) {
  const Tensor& x = tape.value(a);
  const Tensor& z = tape.value(b);
  require(x.shape() == z.shape(), "add shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(z.shape()));
  Tensor y = x;
  y.drop_grad();
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] += z[i];
  return tape.record(std::move(y), {a, b}, [a, b](BackwardContext& ctx) {
    auto dy = ctx.out_grad();
    for (auto id : {a, b}) {
      if (!ctx.needs_grad(id)) continue;
      auto dx = ctx.grad(id);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
  }, false);
}

VarId flatten(Tape& tape, VarId xid) {
  const Tensor& x = tape.value(xid);
  const auto n = x.rank() ? x.dim(0) : 1;
  Tensor y = x.reshaped({n, n ? x.size() / n : 0});
  y.drop_grad();
  return tape.record(std::move(y), {xid}, [xid](BackwardContext& ctx) {
    auto dx = ctx.grad(xid);
    auto dy = ctx.out_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  }, false);
}

VarId batchnorm(Tape& tape, VarId xid, const BatchNormParams& bn) {
  const Tensor& x = tape.value(xid);
  const auto inner = channel_inner(x);
  const auto n = x.dim(0), c = x.dim(1);
  const auto count = n * inner;
  require(bn.gamma && bn.beta && bn.running_mean && bn.running_var && bn.gamma->size() == c,
          "batchnorm parameters do not match channel count " + std::to_string(c));
  if (count < 2) throw DimensionError("batchnorm in search mode needs more than one value per channel");
  std::vector<float> xhat(static_cast<std::size_t>(x.size()));
  std::vector<float> inv_std(static_cast<std::size_t>(c));
  Tensor y(x.shape());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const float* src = x.ptr() + (i * c + ch) * inner;
      for (std::int64_t k = 0; k < inner; ++k) sum += src[k];
    }
    const double mean = sum / static_cast<double>(count);
    for (std::int64_t i = 0; i < n; ++i) {
      const float* src = x.ptr() + (i * c + ch) * inner;
      for (std::int64_t k = 0; k < inner; ++k) {
        const double d = src[k] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(count);
    const float istd = static_cast<float>(1.0 / std::sqrt(var + bn.eps));
    inv_std[static_cast<std::size_t>(ch)] = istd;
    const float g = (*bn.gamma)[ch], b = (*bn.beta)[ch];
    for (std::int64_t i = 0; i < n; ++i) {
      const auto off = (i * c + ch) * inner;
      for (std::int64_t k = 0; k < inner; ++k) {
        const float h = static_cast<float>((x[off + k] - mean)) * istd;
        xhat[static_cast<std::size_t>(off + k)] = h;
        y[off + k] = g * h + b;
      }
    }
    auto& rm = (*bn.running_mean)[ch];
    auto& rv = (*bn.running_var)[ch];
    rm = (1.0f - bn.momentum) * rm + bn.momentum * static_cast<float>(mean);
    rv = (1.0f - bn.momentum) * rv +
         bn.momentum * static_cast<float>(var * static_cast<double>(count) / static_cast<double>(count - 1));
  }
  if (bn.learn_affine) {
    bn.gamma->grad();
    bn.beta->grad();
  }
  return tape.record(
      std::move(y), {xid},
      [xid, bn, inner, n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](BackwardContext& ctx) {
        auto dy = ctx.out_grad();
        const bool need_dx = ctx.needs_grad(xid);
        std::span<float> dx = need_dx ? ctx.grad(xid) : std::span<float>{};
        const double m = static_cast<double>(n * inner);
        for (std::int64_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::int64_t i = 0; i < n; ++i) {
            const auto off = static_cast<std::size_t>((i * c + ch) * inner);
            for (std::int64_t k = 0; k < inner; ++k) {
              sum_dy += dy[off + k];
              sum_dy_xhat += dy[off + k] * xhat[off + k];
            }
          }
          if (bn.learn_affine) {
            bn.gamma->grad()[static_cast<std::size_t>(ch)] += static_cast<float>(sum_dy_xhat);
            bn.beta->grad()[static_cast<std::size_t>(ch)] += static_cast<float>(sum_dy);
          }
          if (!need_dx) continue;
          const double g = (*bn.gamma)[ch];
          const double istd = inv_std[static_cast<std::size_t>(ch)];
          for (std::int64_t i = 0; i < n; ++i) {
            const auto off = static_cast<std::size_t>((i * c + ch) * inner);
            for (std::int64_t k = 0; k < inner; ++k) {
              const double v = (m * dy[off + k] - sum_dy - xhat[off + k] * sum_dy_xhat) * g * istd / m;
              dx[off + k] += static_cast<float>(v);
            }
          }
        }
      },
      bn.learn_affine);
}

VarId softmax_cross_entropy(Tape& tape, VarId lid, std::span<const int> labels) {
  const Tensor& z = tape.value(lid);
  require(z.rank() == 2 && static_cast<std::size_t>(z.dim(0)) == labels.size(), "logits/labels batch mismatch");
  const auto n = z.dim(0), k = z.dim(1);
  std::vector<float> probs(static_cast<std::size_t>(z.size()));
  double total = 0.0;
  std::vector<int> lab(labels.begin(), labels.end());
  for (std::int64_t i = 0; i < n; ++i) {
    const float* zi = z.ptr() + i * k;
    const int y = lab[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw ParameterError("label out of range: " + std::to_string(y));
    const float mx = *std::max_element(zi, zi + k);
    double s = 0.0;
    for (std::int64_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(zi[j] - mx));
    for (std::int64_t j = 0; j < k; ++j)
      probs[static_cast<std::size_t>(i * k + j)] = static_cast<float>(std::exp(static_cast<double>(zi[j] - mx)) / s);
    total += std::log(s) + mx - zi[y];
  }
  Tensor loss({1}, static_cast<float>(n ? total / static_cast<double>(n) : 0.0));
  return tape.record(std::move(loss), {lid}, [lid, n, k, probs = std::move(probs), lab](BackwardContext& ctx) {
    const float g = ctx.out_grad()[0] / static_cast<float>(n);
    auto dz = ctx.grad(lid);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < k; ++j) {
        const auto idx = static_cast<std::size_t>(i * k + j);
        dz[idx] += g * (probs[idx] - (j == lab[static_cast<std::size_t>(i)] ? 1.0f : 0.0f));
      }
    }
  }, false);
}

}  // namespace tape_ops

}  // namespace mpt
