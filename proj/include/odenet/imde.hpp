#pragma once

// Inverse modified equations f_h: the field whose numerical step reproduces the
// exact flow of f. Closed forms for linear fields and for implicit Euler under
// two unrolled solvers, plus numerical oracles for everything else.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "odenet/field.hpp"
#include "odenet/linalg.hpp"
#include "odenet/matrix.hpp"
#include "odenet/step.hpp"
#include "odenet/tableau.hpp"

namespace odenet {

/// f_h(x) = A_h x + c_h.
struct LinearImde {
  Matrix a_h;
  std::vector<double> c_h;
};

/// A_h = Σ_{k=0}^{K} (−1)^k h^k A^{k+1}/(k+1)!, c_h = A_h A⁻¹ b.
/// Throws SingularMatrixError when b ≠ 0 and A is singular.
LinearImde linear_imde_implicit_euler(const Matrix& a, std::span<const double> b, double h, int k);

/// The step applied to y ↦ M y as a matrix: R_h(M) with Φ_h(x) = R_h(M) x.
Matrix step_matrix(const Matrix& m, double h, const ButcherTableau& tab, const StepMode& mode);

/// Solves R_h(A_h) = e^{Ah} by Newton on the D² entries of A_h from A_h = A,
/// with a central-difference Jacobian. Throws ConvergenceError after 50
/// iterations without reaching a residual of 1e-11.
LinearImde linear_imde_solve(const Matrix& a, std::span<const double> b, double h, const ButcherTableau& tab,
                             const StepMode& mode);

/// Coefficients w₁ … w_{K+1} with A_h^K = Σ_j w_j h^{j−1} A^j for any scheme
/// and mode: the step on y ↦ λy multiplies by r(hλ), and w(τ) = r⁻¹(e^τ) is
/// the reversed power series.
std::vector<double> linear_imde_coefficients(const ButcherTableau& tab, const StepMode& mode, int k);

/// Truncated IMDE f_h^K of y ↦ Ay + b: A_h = Σ_{j=1}^{K+1} w_j h^{j−1} A^j and
/// c_h = Σ_j w_j h^{j−1} A^{j−1} b (equal to A_h A⁻¹ b, without the inverse).
LinearImde linear_imde_series(const Matrix& a, std::span<const double> b, double h, const ButcherTableau& tab,
                              const StepMode& mode, int k);

/// Truncated series f_h^K(x) = Σ_{k=0}^{K} h^k f_k(x).
class ImdeSeries : public FieldAdapter<ImdeSeries> {
 public:
  ImdeSeries(std::vector<FieldPtr> terms, double h);

  std::size_t dim() const override { return terms_.front()->dim(); }
  int order() const { return static_cast<int>(terms_.size()) - 1; }
  double h() const { return h_; }
  const VectorField& term(std::size_t k) const { return *terms_.at(k); }
  const std::vector<FieldPtr>& terms() const { return terms_; }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    const std::size_t n = x.size();
    std::vector<T> fk(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = T(0.0);
    double w = 1.0;
    for (const auto& t : terms_) {
      t->eval(x, std::span<T>(fk));
      for (std::size_t i = 0; i < n; ++i) out[i] += w * fk[i];
      w *= h_;
    }
  }

 private:
  std::vector<FieldPtr> terms_;
  double h_;
};

enum class ImdeVariant { implicit_euler_newton_l1, implicit_euler_fixed_point_l2 };

std::string to_string(ImdeVariant v);
ImdeVariant parse_imde_variant(const std::string& name);

/// f₀ … f₃ of implicit Euler under Newton L=1 or fixed-point L=2, each term
/// evaluated pointwise through derivative contractions of f.
ImdeSeries nonlinear_imde_terms(FieldPtr f, ImdeVariant variant, double h);

/// Defect correction g_{k+1} = g_k + [φ_h − Φ_{h,g_k}]/h from g₀ = f, with φ_h
/// the reference RK4 flow. depth ≤ 4. A negative h runs the scheme and the
/// flow backward in time; the truncated series Σ h^k f_k is the same analytic
/// function of h, so ±h pairs separate even and odd orders.
FieldPtr numeric_imde(FieldPtr f, const ButcherTableau& tab, const StepMode& mode, double h, int depth);

/// IMDE of a converged one-stage scheme (a = [θ], b = [1], e.g. implicit Euler
/// or midpoint) from the reference flow: with v = (1−θ)x + θ φ_h(x),
/// f_h(v) = (φ_h(x) − x)/h. θ = 1 uses the backward flow directly; otherwise
/// x is recovered from v by Newton.
class OneStageImde : public FieldAdapter<OneStageImde> {
 public:
  OneStageImde(FieldPtr f, double theta, double h);
  /// Throws ContractError unless `tab` is one-stage with b = [1] and a > 0.
  OneStageImde(FieldPtr f, const ButcherTableau& tab, double h);

  std::size_t dim() const override { return f_->dim(); }

  template <class T>
  void apply(std::span<const T> v, std::span<T> out) const;

 private:
  FieldPtr f_;
  double theta_;
  double h_;
};

namespace detail {

/// x ↦ (1−θ)x + θ φ_h(x).
class StageMap : public FieldAdapter<StageMap> {
 public:
  StageMap(const VectorField& f, double theta, double h) : f_(f), theta_(theta), h_(h) {}
  std::size_t dim() const override { return f_.dim(); }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    const auto y = reference_flow<T>(f_, x, h_);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (1.0 - theta_) * x[i] + theta_ * y[i];
  }

 private:
  const VectorField& f_;
  double theta_;
  double h_;
};

}  // namespace detail

template <class T>
void OneStageImde::apply(std::span<const T> v, std::span<T> out) const {
  const std::size_t n = v.size();
  if (theta_ == 1.0) {
    const auto back = reference_flow<T>(*f_, v, -h_);
    for (std::size_t i = 0; i < n; ++i) out[i] = (v[i] - back[i]) / h_;
    return;
  }
  const detail::StageMap map(*f_, theta_, h_);
  std::vector<T> fv(n);
  f_->eval(v, std::span<T>(fv));
  std::vector<T> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = v[i] - (theta_ * h_) * fv[i];
  double scale = 1.0;
  for (const T& e : v) scale = std::max(scale, std::abs(primal(e)));
  constexpr int kMaxIters = 50;
  double resid = 0.0;
  bool polish = false;
  for (int it = 0; it <= kMaxIters; ++it) {
    std::vector<T> mx;
    const auto jac = jacobian<T>(map, std::span<const T>(x), &mx);
    std::vector<T> r(n);
    resid = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = mx[i] - v[i];
      resid = std::max(resid, max_abs_component(r[i]));
    }
    if (polish) break;
    if (it == kMaxIters) throw ConvergenceError("one-stage IMDE: stage inversion did not converge", resid);
    polish = resid <= 1e-12 * scale;
    const auto delta = LuFactorization<T>(jac, n).solve(r);
    for (std::size_t i = 0; i < n; ++i) x[i] -= delta[i];
  }
  const auto y = reference_flow<T>(*f_, std::span<const T>(x), h_);
  for (std::size_t i = 0; i < n; ++i) out[i] = (y[i] - x[i]) / h_;
}

}  // namespace odenet
