#pragma once

// Gradient surrogates for the two non-differentiable maps in a ticket search:
// the score -> mask threshold (straight-through) and the sign activation
// (quadratic spline s_t, which tends to sgn as t -> 0).

#include <cmath>
#include <concepts>

#include "mpt/errors.hpp"

namespace mpt {

struct SplineParam {
  double t = 1.0;

  explicit SplineParam(double t_ = 1.0) : t(t_) {
    if (!(t > 0.0)) throw ParameterError("spline parameter t must be > 0");
  }
};

namespace detail {
template <std::floating_point T>
inline void check_t(T t) {
  if (!(t > T(0))) throw ParameterError("spline parameter t must be > 0");
}
}  // namespace detail

// s_t(x): -1 below -t, (x/t)^2 + 2x/t on [-t,0), -(x/t)^2 + 2x/t on [0,t), +1 from t.
template <std::floating_point T>
T spline_value(T x, T t) {
  detail::check_t(t);
  if (x < -t) return T(-1);
  if (x >= t) return T(1);
  const T r = x / t;
  return x < T(0) ? r * r + T(2) * r : -r * r + T(2) * r;
}

// s_t'(x) = (2/t)(1 - |x|/t) on [-t,t], zero elsewhere.
template <std::floating_point T>
T spline_grad(T x, T t) {
  detail::check_t(t);
  const T g = (T(2) / t) * (T(1) - std::abs(x) / t);
  return g > T(0) ? g : T(0);
}

// Unchecked kernel form for inner loops; caller guarantees t > 0.
inline float spline_grad_unchecked(float x, float inv_t) {
  const float g = 2.0f * inv_t * (1.0f - std::abs(x) * inv_t);
  return g > 0.0f ? g : 0.0f;
}

// dL/dS_pq. The mask is a threshold on |S|; the straight-through estimator sets dM/d|S| := 1,
// so dL/dS = upstream * alpha * B_pq * act_p * sgn(S_pq), with sgn(0) := +1.
template <std::floating_point T>
T ste_mask_grad(T upstream, T alpha, int sign, T input_act, T score = T(1)) {
  return upstream * alpha * static_cast<T>(sign) * input_act * (score >= T(0) ? T(1) : T(-1));
}

}  // namespace mpt
