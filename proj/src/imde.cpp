#include "odenet/imde.hpp"

#include <cmath>

#include "odenet/errors.hpp"

namespace odenet {

namespace {

bool all_zero(std::span<const double> b) {
  for (double v : b)
    if (v != 0.0) return false;
  return true;
}

std::vector<double> offset_for(const Matrix& a_h, const Matrix& a, std::span<const double> b) {
  if (b.size() != a.rows()) throw ContractError("linear IMDE: offset length differs from A");
  if (all_zero(b)) return std::vector<double>(b.size(), 0.0);
  return matvec(a_h, solve(a, b));
}

void check_square(const Matrix& a) {
  if (a.rows() != a.cols() || a.empty()) throw ContractError("linear IMDE: A must be square and non-empty");
}

template <class T>
std::vector<T> f_of(const VectorField& f, std::span<const T> x) {
  std::vector<T> out(x.size());
  f.eval(x, std::span<T>(out));
  return out;
}

template <class T>
std::span<const T> cs(const std::vector<T>& v) {
  return std::span<const T>(v);
}

class Term1 : public FieldAdapter<Term1> {
 public:
  explicit Term1(FieldPtr f) : f_(std::move(f)) {}
  std::size_t dim() const override { return f_->dim(); }

  // −½ f′f
  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    const auto fx = f_of<T>(*f_, x);
    const auto jf = directional<T>(*f_, x, cs(fx));
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = -0.5 * jf[i];
  }

 private:
  FieldPtr f_;
};

class Term2 : public FieldAdapter<Term2> {
 public:
  explicit Term2(FieldPtr f) : f_(std::move(f)) {}
  std::size_t dim() const override { return f_->dim(); }

  // ⅙ f″(f,f) + ⅙ f′f′f
  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    const auto fx = f_of<T>(*f_, x);
    const auto jf = directional<T>(*f_, x, cs(fx));
    const auto jjf = directional<T>(*f_, x, cs(jf));
    const auto hff = second_directional<T>(*f_, x, cs(fx), cs(fx));
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (hff[i] + jjf[i]) / 6.0;
  }

 private:
  FieldPtr f_;
};

class Term3 : public FieldAdapter<Term3> {
 public:
  Term3(FieldPtr f, ImdeVariant variant) : f_(std::move(f)), variant_(variant) {}
  std::size_t dim() const override { return f_->dim(); }

  // −1/24 f‴(f,f,f) − 1/8 f″(f′f,f) + c₁ f′f″(f,f) + c₂ f′f′f′f
  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    const bool newton = variant_ == ImdeVariant::implicit_euler_newton_l1;
    const double c1 = newton ? 11.0 / 24.0 : -1.0 / 24.0;
    const double c2 = newton ? -1.0 / 24.0 : 23.0 / 24.0;
    const auto fx = f_of<T>(*f_, x);
    const auto jf = directional<T>(*f_, x, cs(fx));
    const auto jjf = directional<T>(*f_, x, cs(jf));
    const auto jjjf = directional<T>(*f_, x, cs(jjf));
    const auto hff = second_directional<T>(*f_, x, cs(fx), cs(fx));
    const auto jhff = directional<T>(*f_, x, cs(hff));
    const auto hjff = second_directional<T>(*f_, x, cs(jf), cs(fx));
    const auto tfff = third_directional<T>(*f_, x, cs(fx), cs(fx), cs(fx));
    for (std::size_t i = 0; i < x.size(); ++i)
      out[i] = -tfff[i] / 24.0 - hjff[i] / 8.0 + c1 * jhff[i] + c2 * jjjf[i];
  }

 private:
  FieldPtr f_;
  ImdeVariant variant_;
};

template <class T>
std::vector<T> signed_step(const VectorField& g, std::span<const T> x, double h, const ButcherTableau& tab,
                           const StepMode& mode) {
  switch (mode.kind) {
    case IterationKind::fixed_point:
      return step_fixed_point<T>(g, x, h, tab, mode.iterations);
    case IterationKind::newton:
      return step_newton<T>(g, x, h, tab, mode.iterations);
    case IterationKind::exact:
      break;
  }
  return step_exact<T>(g, x, h, tab, mode.tol, mode.max_iters);
}

class DefectCorrection : public FieldAdapter<DefectCorrection> {
 public:
  DefectCorrection(FieldPtr f, FieldPtr g, ButcherTableau tab, StepMode mode, double h)
      : f_(std::move(f)), g_(std::move(g)), tab_(std::move(tab)), mode_(mode), h_(h) {}
  std::size_t dim() const override { return f_->dim(); }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    const auto exact = reference_flow<T>(*f_, x, h_);
    const auto numeric = signed_step<T>(*g_, x, h_, tab_, mode_);
    g_->eval(x, out);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += (exact[i] - numeric[i]) / h_;
  }

 private:
  FieldPtr f_;
  FieldPtr g_;
  ButcherTableau tab_;
  StepMode mode_;
  double h_;
};

}  // namespace

LinearImde linear_imde_implicit_euler(const Matrix& a, std::span<const double> b, double h, int k) {
  check_square(a);
  if (k < 0) throw ContractError("linear IMDE: truncation order must be >= 0");
  const std::size_t n = a.rows();
  Matrix a_h(n, n);
  Matrix power = a;
  double coeff = 1.0;
  for (int j = 0; j <= k; ++j) {
    if (j > 0) {
      power = matmul(power, a);
      coeff *= -h / static_cast<double>(j + 1);
    }
    a_h += coeff * power;
  }
  return {a_h, offset_for(a_h, a, b)};
}

Matrix step_matrix(const Matrix& m, double h, const ButcherTableau& tab, const StepMode& mode) {
  check_square(m);
  const std::size_t n = m.rows();
  const AffineField field(m);
  const StepOperator step(tab, mode, h);
  Matrix r(n, n);
  std::vector<double> e(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    e[c] = 1.0;
    const auto col = step(field, e);
    e[c] = 0.0;
    for (std::size_t i = 0; i < n; ++i) r(i, c) = col[i];
  }
  return r;
}

LinearImde linear_imde_solve(const Matrix& a, std::span<const double> b, double h, const ButcherTableau& tab,
                             const StepMode& mode) {
  check_square(a);
  constexpr double kTol = 1e-11;
  constexpr int kMaxIters = 50;
  const std::size_t n = a.rows();
  const std::size_t nn = n * n;
  const Matrix target = matrix_exp(a, h);
  auto residual = [&](const Matrix& x) {
    Matrix r = step_matrix(x, h, tab, mode);
    r -= target;
    return r;
  };

  Matrix x = a;
  double resid = 0.0;
  for (int it = 0; it <= kMaxIters; ++it) {
    const Matrix r = residual(x);
    resid = max_abs(r);
    if (resid <= kTol) return {x, offset_for(x, a, b)};
    if (it == kMaxIters) break;
    std::vector<double> jac(nn * nn);
    for (std::size_t c = 0; c < nn; ++c) {
      const double eps = 1e-6 * std::max(1.0, std::abs(x[c]));
      Matrix xp = x, xm = x;
      xp[c] += eps;
      xm[c] -= eps;
      const Matrix rp = residual(xp), rm = residual(xm);
      for (std::size_t i = 0; i < nn; ++i) jac[i * nn + c] = (rp[i] - rm[i]) / (2.0 * eps);
    }
    const auto delta = LuFactorization<double>(jac, nn).solve(r.values());
    for (std::size_t i = 0; i < nn; ++i) x[i] -= delta[i];
  }
  throw ConvergenceError("linear IMDE solve did not converge in " + std::to_string(kMaxIters) + " iterations", resid);
}

std::vector<double> linear_imde_coefficients(const ButcherTableau& tab, const StepMode& mode, int k) {
  if (k < 0) throw ContractError("linear IMDE: truncation order must be >= 0");
  // r(N) for the nilpotent shift N has r's Taylor coefficients along its first row.
  const std::size_t n = static_cast<std::size_t>(k) + 2;
  Matrix shift(n, n);
  for (std::size_t i = 0; i + 1 < n; ++i) shift(i, i + 1) = 1.0;
  const Matrix rn = step_matrix(shift, 1.0, tab, mode);
  std::vector<double> r(n);
  for (std::size_t j = 0; j < n; ++j) r[j] = rn(0, j);
  if (r[1] == 0.0) throw ContractError("linear IMDE: scheme is not consistent");

  auto mul = [n](const std::vector<double>& p, const std::vector<double>& q) {
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; i + j < n; ++j) out[i + j] += p[i] * q[j];
    return out;
  };
  auto compose_r = [&](const std::vector<double>& w) {
    std::vector<double> out(n, 0.0), power(n, 0.0);
    power[0] = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) out[i] += r[j] * power[i];
      power = mul(power, w);
    }
    return out;
  };
  std::vector<double> w(n, 0.0);
  double factorial = 1.0;
  for (std::size_t m = 1; m < n; ++m) {
    factorial *= static_cast<double>(m);
    w[m] = 0.0;
    w[m] = (1.0 / factorial - compose_r(w)[m]) / r[1];
  }
  return std::vector<double>(w.begin() + 1, w.end());
}

LinearImde linear_imde_series(const Matrix& a, std::span<const double> b, double h, const ButcherTableau& tab,
                              const StepMode& mode, int k) {
  check_square(a);
  if (b.size() != a.rows()) throw ContractError("linear IMDE: offset length differs from A");
  const auto w = linear_imde_coefficients(tab, mode, k);
  const std::size_t n = a.rows();
  Matrix a_h(n, n);
  std::vector<double> c_h(n, 0.0);
  Matrix power = Matrix::identity(n);
  double hp = 1.0;
  for (double wj : w) {
    const auto pb = matvec(power, b);
    for (std::size_t i = 0; i < n; ++i) c_h[i] += wj * hp * pb[i];
    power = matmul(power, a);
    a_h += (wj * hp) * power;
    hp *= h;
  }
  return {a_h, c_h};
}

ImdeSeries::ImdeSeries(std::vector<FieldPtr> terms, double h) : terms_(std::move(terms)), h_(h) {
  if (terms_.empty()) throw ContractError("ImdeSeries: at least f0 is required");
  for (const auto& t : terms_)
    if (!t || t->dim() != terms_.front()->dim()) throw ContractError("ImdeSeries: terms must share one dimension");
}

std::string to_string(ImdeVariant v) {
  return v == ImdeVariant::implicit_euler_newton_l1 ? "implicit_euler_newton_l1" : "implicit_euler_fixed_point_l2";
}

ImdeVariant parse_imde_variant(const std::string& name) {
  if (name == "implicit_euler_newton_l1") return ImdeVariant::implicit_euler_newton_l1;
  if (name == "implicit_euler_fixed_point_l2") return ImdeVariant::implicit_euler_fixed_point_l2;
  throw ConfigError("unknown IMDE variant '" + name +
                    "' (expected implicit_euler_newton_l1 or implicit_euler_fixed_point_l2)");
}

ImdeSeries nonlinear_imde_terms(FieldPtr f, ImdeVariant variant, double h) {
  if (!f) throw ContractError("nonlinear_imde_terms: null field");
  return ImdeSeries({f, std::make_shared<Term1>(f), std::make_shared<Term2>(f), std::make_shared<Term3>(f, variant)},
                    h);
}

FieldPtr numeric_imde(FieldPtr f, const ButcherTableau& tab, const StepMode& mode, double h, int depth) {
  if (!f) throw ContractError("numeric_imde: null field");
  if (depth < 0 || depth > 4) throw ContractError("numeric_imde: depth must be in [0, 4]");
  if (h == 0.0 || !std::isfinite(h)) throw ContractError("numeric_imde: step size must be non-zero and finite");
  if (mode.kind != IterationKind::exact && mode.iterations < 0) throw ContractError("numeric_imde: negative L");
  FieldPtr g = f;
  for (int k = 0; k < depth; ++k) g = std::make_shared<DefectCorrection>(f, g, tab, mode, h);
  return g;
}

OneStageImde::OneStageImde(FieldPtr f, double theta, double h) : f_(std::move(f)), theta_(theta), h_(h) {
  if (!f_) throw ContractError("OneStageImde: null field");
  if (!(theta > 0.0 && theta <= 1.0)) throw ContractError("OneStageImde: theta must be in (0, 1]");
  if (!(h > 0.0)) throw ContractError("OneStageImde: step size must be positive");
}

namespace {
double one_stage_theta(const ButcherTableau& tab) {
  if (tab.stages() != 1 || tab.b[0] != 1.0 || !(tab.a(0, 0) > 0.0))
    throw ContractError("OneStageImde: tableau '" + tab.name + "' is not a one-stage implicit scheme with b = 1");
  return tab.a(0, 0);
}
}  // namespace

OneStageImde::OneStageImde(FieldPtr f, const ButcherTableau& tab, double h)
    : OneStageImde(std::move(f), one_stage_theta(tab), h) {}

}  // namespace odenet
