#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

#include "nst/expr.hpp"
#include "nst/model.hpp"

namespace nst {

/// Forward-mode dual number carrying the partial derivatives with respect to
/// up to kMaxParams model parameters.
struct Dual {
  double v = 0.0;
  std::array<double, kMaxParams> d{};

  constexpr Dual() = default;
  constexpr Dual(double value) : v(value) {}  // NOLINT: implicit lift of constants

  static Dual variable(double value, std::size_t index) {
    Dual x(value);
    x.d[index] = 1.0;
    return x;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (std::size_t i = 0; i < kMaxParams; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (std::size_t i = 0; i < kMaxParams; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (std::size_t i = 0; i < kMaxParams; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    v /= o.v;
    for (std::size_t i = 0; i < kMaxParams; ++i) d[i] = (d[i] - v * o.d[i]) / o.v;
    return *this;
  }
};

// Applies the chain rule for a unary function with value fx and slope dfx.
inline Dual chain(const Dual& x, double fx, double dfx) {
  Dual r(fx);
  for (std::size_t i = 0; i < kMaxParams; ++i) r.d[i] = dfx * x.d[i];
  return r;
}

inline Dual operator-(const Dual& a) { return chain(a, -a.v, -1.0); }
inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator/(Dual a, const Dual& b) { return a /= b; }

inline bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

// Clamped primitives. The same clamp rules apply to double and Dual so that
// both evaluators agree on values; in the clamped region the slope is zero.

inline double clamped_sqrt(double x) { return std::sqrt(std::max(x, 0.0)); }
inline Dual clamped_sqrt(const Dual& x) {
  if (x.v <= 0.0) return Dual(0.0);
  const double s = std::sqrt(x.v);
  return chain(x, s, 0.5 / s);
}

inline double clamped_log(double x) { return std::log(std::max(x, kLogFloor)); }
inline Dual clamped_log(const Dual& x) {
  if (x.v <= kLogFloor) return Dual(std::log(kLogFloor));
  return chain(x, std::log(x.v), 1.0 / x.v);
}

inline Dual exp(const Dual& x) {
  const double e = std::exp(x.v);
  return chain(x, e, e);
}
inline Dual sin(const Dual& x) { return chain(x, std::sin(x.v), std::cos(x.v)); }
inline Dual cos(const Dual& x) { return chain(x, std::cos(x.v), -std::sin(x.v)); }
inline Dual tanh(const Dual& x) {
  const double t = std::tanh(x.v);
  return chain(x, t, 1.0 - t * t);
}
inline Dual abs(const Dual& x) { return x.v < 0.0 ? -x : x; }
inline Dual sqrt(const Dual& x) { return clamped_sqrt(x); }

inline Dual pow(const Dual& a, const Dual& b) {
  const double p = std::pow(a.v, b.v);
  Dual r(p);
  bool b_const = true;
  for (double g : b.d) b_const = b_const && g == 0.0;
  const double da = (b.v == 0.0) ? 0.0 : b.v * std::pow(a.v, b.v - 1.0);
  const double db = (b_const || a.v <= 0.0) ? 0.0 : p * std::log(a.v);
  for (std::size_t i = 0; i < kMaxParams; ++i) r.d[i] = da * a.d[i] + db * b.d[i];
  return r;
}

inline bool isfinite(const Dual& x) { return std::isfinite(x.v); }

}  // namespace nst
