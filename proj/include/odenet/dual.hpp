#pragma once

// Nested forward-mode dual numbers.
//
// Dual<T> carries a primal value and a single tangent of the same type T, so
// Dual<Dual<double>> propagates two independent infinitesimals and the
// coefficient of e1*e2 is the mixed second derivative. Nesting depth k gives
// exact k-th order directional derivative contractions.

#include <cmath>
#include <cstddef>
#include <type_traits>

namespace odenet {

template <class T>
struct Dual {
  T v{};
  T d{};

  constexpr Dual() = default;
  constexpr Dual(double c) : v(c), d(0.0) {}  // NOLINT: implicit constant lift
  constexpr Dual(T value, T tangent) : v(value), d(tangent) {}

  Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    d -= o.d;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    d = d * o.v + v * o.d;
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) { return *this = *this / o; }
  Dual& operator*=(double c) {
    v *= c;
    d *= c;
    return *this;
  }
  Dual& operator+=(double c) {
    v += c;
    return *this;
  }
  Dual& operator-=(double c) {
    v -= c;
    return *this;
  }

  friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
  friend Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, a.d + b.d}; }
  friend Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
  friend Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
  friend Dual operator/(const Dual& a, const Dual& b) {
    const T inv = 1.0 / b.v;
    const T q = a.v * inv;
    return {q, (a.d - q * b.d) * inv};
  }
  friend Dual operator+(const Dual& a, double c) { return {a.v + c, a.d}; }
  friend Dual operator+(double c, const Dual& a) { return {c + a.v, a.d}; }
  friend Dual operator-(const Dual& a, double c) { return {a.v - c, a.d}; }
  friend Dual operator-(double c, const Dual& a) { return {c - a.v, -a.d}; }
  friend Dual operator*(const Dual& a, double c) { return {a.v * c, a.d * c}; }
  friend Dual operator*(double c, const Dual& a) { return {c * a.v, c * a.d}; }
  friend Dual operator/(const Dual& a, double c) { return {a.v / c, a.d / c}; }
  friend Dual operator/(double c, const Dual& a) { return Dual(c) / a; }

  friend bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
  friend bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
};

using D1 = Dual<double>;
using D2 = Dual<D1>;
using D3 = Dual<D2>;
using D4 = Dual<D3>;
using D5 = Dual<D4>;

/// Deepest nesting a VectorField can be evaluated at.
inline constexpr int kMaxDualDepth = 5;

template <class T>
struct dual_depth : std::integral_constant<int, 0> {};
template <class T>
struct dual_depth<Dual<T>> : std::integral_constant<int, 1 + dual_depth<T>::value> {};
template <class T>
inline constexpr int dual_depth_v = dual_depth<T>::value;

inline double primal(double x) { return x; }
template <class T>
double primal(const Dual<T>& x) {
  return primal(x.v);
}

/// Largest magnitude over every nested component (primal and all tangents).
inline double max_abs_component(double x) { return std::abs(x); }
template <class T>
double max_abs_component(const Dual<T>& x) {
  const double a = max_abs_component(x.v);
  const double b = max_abs_component(x.d);
  return a > b ? a : b;
}

inline bool all_finite(double x) { return std::isfinite(x); }
template <class T>
bool all_finite(const Dual<T>& x) {
  return all_finite(x.v) && all_finite(x.d);
}

// Elementary functions. Each applies the chain rule one level and recurses
// through T, so arbitrary nesting works.
using std::cos;
using std::exp;
using std::log;
using std::pow;
using std::sin;
using std::sqrt;
using std::tanh;

template <class T>
Dual<T> sin(const Dual<T>& x) {
  return {sin(x.v), x.d * cos(x.v)};
}
template <class T>
Dual<T> cos(const Dual<T>& x) {
  return {cos(x.v), -(x.d * sin(x.v))};
}
template <class T>
Dual<T> exp(const Dual<T>& x) {
  const T e = exp(x.v);
  return {e, x.d * e};
}
template <class T>
Dual<T> log(const Dual<T>& x) {
  return {log(x.v), x.d / x.v};
}
template <class T>
Dual<T> sqrt(const Dual<T>& x) {
  const T s = sqrt(x.v);
  return {s, x.d / (2.0 * s)};
}
template <class T>
Dual<T> tanh(const Dual<T>& x) {
  const T t = tanh(x.v);
  return {t, x.d * (1.0 - t * t)};
}
template <class T>
Dual<T> pow(const Dual<T>& x, double p) {
  return {pow(x.v, p), x.d * (p * pow(x.v, p - 1.0))};
}

/// Seeds a nested dual from a primal value and one tangent per nesting level
/// (outermost level last). Missing tangents are zero.
template <class T>
T seed(double value, const double* tangents) {
  if constexpr (std::is_same_v<T, double>) {
    return value;
  } else {
    using Inner = decltype(T{}.v);
    constexpr int depth = dual_depth_v<T>;
    return T(seed<Inner>(value, tangents), Inner(tangents[depth - 1]));
  }
}

/// Coefficient of e1*e2*...*ek for the full nesting of T.
inline double top_coefficient(double x) { return x; }
template <class T>
double top_coefficient(const Dual<T>& x) {
  return top_coefficient(x.d);
}

}  // namespace odenet
