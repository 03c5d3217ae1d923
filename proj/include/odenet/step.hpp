#pragma once

// Runge–Kutta step operators on a VectorField, generic over the scalar type so
// the same code runs on doubles and on nested duals (IMDE oracles differentiate
// through whole steps).
//
// Stage values are stored flat: V[i*D + d] is component d of stage i.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "odenet/dual.hpp"
#include "odenet/errors.hpp"
#include "odenet/field.hpp"
#include "odenet/linalg.hpp"
#include "odenet/tableau.hpp"

namespace odenet {

enum class IterationKind { exact, fixed_point, newton };

struct StepMode {
  IterationKind kind = IterationKind::exact;
  /// L for the unrolled modes; ignored by exact.
  int iterations = 0;
  double tol = 1e-12;
  int max_iters = 100;

  static StepMode exact(double tol = 1e-12, int max_iters = 100) {
    return {IterationKind::exact, 0, tol, max_iters};
  }
  static StepMode fixed_point(int L) { return {IterationKind::fixed_point, L, 1e-12, 100}; }
  static StepMode newton(int L) { return {IterationKind::newton, L, 1e-12, 100}; }

  StepMode with_iterations(int L) const {
    StepMode m = *this;
    m.iterations = L;
    return m;
  }
  std::string describe() const;
};

std::string to_string(IterationKind kind);
/// "exact", "fixed_point" or "newton"; ConfigError otherwise.
IterationKind parse_iteration_kind(const std::string& name);

namespace detail {

template <class T>
bool finite(std::span<const T> v) {
  for (const T& e : v)
    if (!all_finite(e)) return false;
  return true;
}

inline void count(std::size_t* evals, std::size_t n) {
  if (evals) *evals += n;
}

/// k_i = f(v_i) for every stage; stages with a zero row of a reuse f(x).
template <class T>
std::vector<T> stage_slopes(const VectorField& f, std::span<const T> x, const std::vector<T>& v,
                            const ButcherTableau& tab, const std::vector<T>* fx, std::size_t* evals) {
  const std::size_t n = x.size();
  const std::size_t stages = tab.stages();
  std::vector<T> k(stages * n);
  for (std::size_t i = 0; i < stages; ++i) {
    std::span<T> ki(k.data() + i * n, n);
    if (fx && tab.stage_is_trivial(i)) {
      std::copy(fx->begin(), fx->end(), ki.begin());
      continue;
    }
    f.eval(std::span<const T>(v.data() + i * n, n), ki);
    count(evals, 1);
  }
  return k;
}

template <class T>
std::vector<T> combine_output(std::span<const T> x, const std::vector<T>& k, double h, const ButcherTableau& tab) {
  const std::size_t n = x.size();
  std::vector<T> out(x.begin(), x.end());
  for (std::size_t i = 0; i < tab.stages(); ++i) {
    const double w = h * tab.b[i];
    if (w == 0.0) continue;
    for (std::size_t d = 0; d < n; ++d) out[d] += w * k[i * n + d];
  }
  if (!finite<T>(out)) throw DivergenceError("non-finite step output");
  return out;
}

/// F_i = v_i − x − h Σ_j a_ij k_j.
template <class T>
std::vector<T> stage_equations(std::span<const T> x, const std::vector<T>& v, const std::vector<T>& k, double h,
                               const ButcherTableau& tab) {
  const std::size_t n = x.size();
  const std::size_t stages = tab.stages();
  std::vector<T> r(stages * n);
  for (std::size_t i = 0; i < stages; ++i) {
    for (std::size_t d = 0; d < n; ++d) {
      T s = v[i * n + d] - x[d];
      for (std::size_t j = 0; j < stages; ++j) {
        const double c = h * tab.a(i, j);
        if (c != 0.0) s -= c * k[j * n + d];
      }
      r[i * n + d] = s;
    }
  }
  return r;
}

/// One Newton update V ← V − F′(V)⁻¹F(V). The Jacobian pass also yields the
/// slopes, so `k` is refreshed at the old V.
template <class T>
void newton_update(const VectorField& f, std::span<const T> x, std::vector<T>& v, double h, const ButcherTableau& tab,
                   bool stages_equal, int iterate, std::size_t* evals) {
  const std::size_t n = x.size();
  const std::size_t stages = tab.stages();
  const std::size_t dim = stages * n;
  std::vector<T> k(dim);
  std::vector<std::vector<T>> jac(stages);
  for (std::size_t j = 0; j < stages; ++j) {
    if (stages_equal && j > 0) {
      jac[j] = jac[0];
      std::copy(k.begin(), k.begin() + n, k.begin() + j * n);
      continue;
    }
    std::vector<T> value;
    jac[j] = jacobian<T>(f, std::span<const T>(v.data() + j * n, n), &value);
    count(evals, n);
    std::copy(value.begin(), value.end(), k.begin() + j * n);
  }
  std::vector<T> big(dim * dim, T(0.0));
  for (std::size_t i = 0; i < stages; ++i) {
    for (std::size_t j = 0; j < stages; ++j) {
      const double c = -h * tab.a(i, j);
      for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = 0; q < n; ++q) {
          T e = c * jac[j][p * n + q];
          if (i == j && p == q) e += 1.0;
          big[(i * n + p) * dim + (j * n + q)] = e;
        }
      }
    }
  }
  const std::vector<T> r = stage_equations<T>(x, v, k, h, tab);
  std::vector<T> delta;
  try {
    delta = LuFactorization<T>(big, dim).solve(r);
  } catch (const SingularMatrixError& e) {
    throw SingularMatrixError(e.pivot(), "Newton iterate " + std::to_string(iterate));
  }
  for (std::size_t i = 0; i < dim; ++i) v[i] -= delta[i];
  if (!finite<T>(v)) throw DivergenceError("non-finite stage value at Newton iterate " + std::to_string(iterate));
}

}  // namespace detail

/// L rounds of successive substitution from v_i⁰ = x, then x + h Σ b_i f(v_i^L).
template <class T>
std::vector<T> step_fixed_point(const VectorField& f, std::span<const T> x, double h, const ButcherTableau& tab, int L,
                                std::size_t* evals = nullptr) {
  if (L < 0) throw ContractError("step_fixed_point: negative iteration count");
  if (x.size() != f.dim()) throw ContractError("step_fixed_point: state has wrong dimension");
  const std::size_t n = x.size();
  const std::size_t stages = tab.stages();
  std::vector<T> fx(n);
  f.eval(x, std::span<T>(fx));
  detail::count(evals, 1);
  std::vector<T> k(stages * n);
  for (std::size_t i = 0; i < stages; ++i) std::copy(fx.begin(), fx.end(), k.begin() + i * n);
  std::vector<T> v(stages * n);
  for (int l = 1; l <= L; ++l) {
    for (std::size_t i = 0; i < stages; ++i) {
      for (std::size_t d = 0; d < n; ++d) {
        T s = x[d];
        for (std::size_t j = 0; j < stages; ++j) {
          const double c = h * tab.a(i, j);
          if (c != 0.0) s += c * k[j * n + d];
        }
        if (!all_finite(s)) {
          throw DivergenceError("non-finite stage value at iteration " + std::to_string(l) + ", stage " +
                                std::to_string(i));
        }
        v[i * n + d] = s;
      }
    }
    k = detail::stage_slopes<T>(f, x, v, tab, &fx, evals);
  }
  return detail::combine_output<T>(x, k, h, tab);
}

/// L Newton–Raphson updates on the I·D stage system from V⁰ = (x, …, x).
template <class T>
std::vector<T> step_newton(const VectorField& f, std::span<const T> x, double h, const ButcherTableau& tab, int L,
                           std::size_t* evals = nullptr) {
  if (L < 0) throw ContractError("step_newton: negative iteration count");
  if (x.size() != f.dim()) throw ContractError("step_newton: state has wrong dimension");
  if (L == 0) return step_fixed_point<T>(f, x, h, tab, 0, evals);
  const std::size_t n = x.size();
  const std::size_t stages = tab.stages();
  std::vector<T> v(stages * n);
  for (std::size_t i = 0; i < stages; ++i) std::copy(x.begin(), x.end(), v.begin() + i * n);
  for (int l = 1; l <= L; ++l) detail::newton_update<T>(f, x, v, h, tab, l == 1, l, evals);
  const auto k = detail::stage_slopes<T>(f, x, v, tab, nullptr, evals);
  return detail::combine_output<T>(x, k, h, tab);
}

/// Stage residual F(V) as a flat I·D vector.
template <class T>
std::vector<T> stage_residual(const VectorField& f, std::span<const T> x, const std::vector<T>& v, double h,
                              const ButcherTableau& tab) {
  const auto k = detail::stage_slopes<T>(f, x, v, tab, nullptr, nullptr);
  return detail::stage_equations<T>(x, v, k, h, tab);
}

/// Root of the stage equations by full Newton from V = (x, …, x); the residual
/// test covers every dual component so tangents converge along with values.
/// Returns the converged stage vector.
template <class T>
std::vector<T> solve_stages(const VectorField& f, std::span<const T> x, double h, const ButcherTableau& tab,
                            double tol = 1e-12, int max_iters = 100, std::size_t* evals = nullptr) {
  if (!(tol > 0.0)) throw ContractError("step_exact: tolerance must be positive");
  if (x.size() != f.dim()) throw ContractError("step_exact: state has wrong dimension");
  const std::size_t n = x.size();
  const std::size_t stages = tab.stages();
  std::vector<T> v(stages * n);
  for (std::size_t i = 0; i < stages; ++i) std::copy(x.begin(), x.end(), v.begin() + i * n);
  double resid = 0.0;
  for (int it = 0; it <= max_iters; ++it) {
    const auto k = detail::stage_slopes<T>(f, x, v, tab, nullptr, evals);
    const auto r = detail::stage_equations<T>(x, v, k, h, tab);
    resid = 0.0;
    for (const T& e : r) resid = std::max(resid, max_abs_component(e));
    if (resid <= tol) return v;
    if (it == max_iters) break;
    detail::newton_update<T>(f, x, v, h, tab, it == 0, it + 1, evals);
  }
  throw ConvergenceError("exact stage solve did not converge in " + std::to_string(max_iters) + " iterations", resid);
}

template <class T>
std::vector<T> step_exact(const VectorField& f, std::span<const T> x, double h, const ButcherTableau& tab,
                          double tol = 1e-12, int max_iters = 100, std::size_t* evals = nullptr) {
  const auto v = solve_stages<T>(f, x, h, tab, tol, max_iters, evals);
  const auto k = detail::stage_slopes<T>(f, x, v, tab, nullptr, evals);
  return detail::combine_output<T>(x, k, h, tab);
}

/// A configured one-step map Φ_h (tableau, iteration mode, step size).
class StepOperator {
 public:
  StepOperator(ButcherTableau tableau, StepMode mode, double h) : tab_(std::move(tableau)), mode_(mode), h_(h) {
    if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("step size must be positive and finite");
    if (mode.kind != IterationKind::exact && mode.iterations < 0) throw ConfigError("iteration count must be >= 0");
  }

  const ButcherTableau& tableau() const noexcept { return tab_; }
  const StepMode& mode() const noexcept { return mode_; }
  double h() const noexcept { return h_; }

  template <class T>
  std::vector<T> apply(const VectorField& f, std::span<const T> x, std::size_t* evals = nullptr) const {
    switch (mode_.kind) {
      case IterationKind::fixed_point:
        return step_fixed_point<T>(f, x, h_, tab_, mode_.iterations, evals);
      case IterationKind::newton:
        return step_newton<T>(f, x, h_, tab_, mode_.iterations, evals);
      case IterationKind::exact:
        break;
    }
    return step_exact<T>(f, x, h_, tab_, mode_.tol, mode_.max_iters, evals);
  }

  std::vector<double> operator()(const VectorField& f, const std::vector<double>& x,
                                 std::size_t* evals = nullptr) const {
    return apply<double>(f, std::span<const double>(x), evals);
  }

 private:
  ButcherTableau tab_;
  StepMode mode_;
  double h_;
};

/// s applications of the step.
template <class T>
std::vector<T> compose(const StepOperator& step, const VectorField& f, std::span<const T> x, int s,
                       std::size_t* evals = nullptr) {
  if (s < 1) throw ContractError("compose: composition count must be >= 1");
  std::vector<T> y(x.begin(), x.end());
  for (int i = 0; i < s; ++i) y = step.apply<T>(f, std::span<const T>(y), evals);
  return y;
}

inline std::vector<double> compose(const StepOperator& step, const VectorField& f, const std::vector<double>& x, int s,
                                   std::size_t* evals = nullptr) {
  return compose<double>(step, f, std::span<const double>(x), s, evals);
}

/// (Φ_h)^{m·s}(x) with h = Δt/s.
std::vector<double> odesolve(std::span<const double> x, const VectorField& f, int m, double dt,
                             const ButcherTableau& tab, const StepMode& mode, int s, std::size_t* evals = nullptr);

/// Classical RK4 with `substeps` equal sub-steps over time t (t may be negative).
template <class T>
std::vector<T> rk4_flow(const VectorField& f, std::span<const T> x, double t, int substeps) {
  if (substeps < 1) throw ContractError("rk4_flow: substeps must be >= 1");
  const std::size_t n = x.size();
  const double dt = t / substeps;
  std::vector<T> y(x.begin(), x.end()), k1(n), k2(n), k3(n), k4(n), tmp(n);
  for (int s = 0; s < substeps; ++s) {
    f.eval(std::span<const T>(y), std::span<T>(k1));
    for (std::size_t d = 0; d < n; ++d) tmp[d] = y[d] + (0.5 * dt) * k1[d];
    f.eval(std::span<const T>(tmp), std::span<T>(k2));
    for (std::size_t d = 0; d < n; ++d) tmp[d] = y[d] + (0.5 * dt) * k2[d];
    f.eval(std::span<const T>(tmp), std::span<T>(k3));
    for (std::size_t d = 0; d < n; ++d) tmp[d] = y[d] + dt * k3[d];
    f.eval(std::span<const T>(tmp), std::span<T>(k4));
    for (std::size_t d = 0; d < n; ++d) y[d] += (dt / 6.0) * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
  }
  return y;
}

inline constexpr int kReferenceSubsteps = 100;

/// Reference exact flow φ_t: RK4 with 100 sub-steps of size t/100.
template <class T>
std::vector<T> reference_flow(const VectorField& f, std::span<const T> x, double t) {
  return rk4_flow<T>(f, x, t, kReferenceSubsteps);
}

inline std::vector<double> reference_flow(const VectorField& f, const std::vector<double>& x, double t) {
  return reference_flow<double>(f, std::span<const double>(x), t);
}

}  // namespace odenet
