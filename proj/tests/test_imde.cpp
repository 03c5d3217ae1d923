#include <cmath>
#include <vector>

#include "doctest.h"
#include "odenet/imde.hpp"
#include "odenet/stats.hpp"
#include "oracles.hpp"
#include "test_fields.hpp"

using namespace odenet;
using testing_fields::Pendulum;

namespace {

struct Row {
  const char* name;
  Matrix a;
  std::vector<double> b;
  double h;
  ButcherTableau tab;
  StepMode mode;
  // p-row (a11, a12, c1), q-row (a21, a22, c2)
  std::vector<double> imde_column;
  std::vector<double> learned_column;
};

std::vector<Row> table_rows() {
  return {
      {"saddle", {{1, 1}, {1, -1}}, {-2, 0}, 0.1, implicit_euler(), StepMode::fixed_point(0),
       {1.1035, 1.0033, -2.1068, 1.0033, -0.9032, -0.1002}, {1.1035, 1.0033, -2.1068, 1.0033, -0.9032, -0.1002}},
      {"center", {{1, 2}, {-5, -1}}, {0, 0}, 0.12, implicit_trapezoidal(), StepMode::fixed_point(1),
       {0.9609, 1.9568, 0, -4.8920, -0.9959, 0}, {0.9651, 1.9607, 0, -4.9017, -0.9956, 0}},
      {"improper node", {{1, -4}, {4, -7}}, {0, 0}, 0.12, implicit_midpoint(), StepMode::fixed_point(2),
       {0.8270, -3.7771, 0, 3.7771, -6.7272, 0}, {0.8222, -3.7709, 0, 3.7709, -6.7197, 0}},
      {"spiral", {{-1, -1}, {2, -1}}, {-1, 5}, 0.05, implicit_euler(), StepMode::fixed_point(3),
       {-0.9729, -1.0504, -0.8954, 2.1008, -0.9729, 5.1745}, {-0.9729, -1.0503, -0.8955, 2.1006, -0.9729, 5.1742}},
      {"nodal sink", {{-2, 1}, {1, -2}}, {-2, 1}, 0.12, implicit_euler(), StepMode::newton(1),
       {-2.3366, 1.2741, -2.3366, 1.2741, -2.3366, 1.2741}, {-2.3368, 1.2743, -2.3368, 1.2743, -2.3368, 1.2743}},
  };
}

std::vector<double> flatten(const LinearImde& m) {
  return {m.a_h(0, 0), m.a_h(0, 1), m.c_h[0], m.a_h(1, 0), m.a_h(1, 1), m.c_h[1]};
}

std::vector<double> xs(std::initializer_list<double> v) { return std::vector<double>(v); }

}  // namespace

TEST_CASE("implicit Euler linear series") {
  const Matrix zero(2, 2);
  CHECK(max_abs(linear_imde_implicit_euler(zero, xs({0, 0}), 0.1, 5).a_h) == 0.0);

  const Matrix a{{-1, -1}, {2, -1}};
  const auto k0 = linear_imde_implicit_euler(a, xs({-1, 5}), 0.05, 0);
  CHECK(k0.a_h == a);
  CHECK(max_abs_diff(k0.c_h, xs({-1, 5})) < 1e-14);

  const auto scalar = linear_imde_implicit_euler(Matrix{{1.0}}, xs({0}), 0.1, 40);
  CHECK(scalar.a_h(0, 0) == doctest::Approx((1.0 - std::exp(-0.1)) / 0.1).epsilon(1e-15));

  const double h = 0.12;
  Matrix closed = Matrix::identity(2) - matrix_exp(a, -h);
  closed *= 1.0 / h;
  CHECK(max_abs_diff(linear_imde_implicit_euler(a, xs({0, 0}), h, 40).a_h, closed) < 1e-14);

  CHECK_THROWS_AS(linear_imde_implicit_euler(Matrix{{1, 1}, {1, 1}}, xs({1, 0}), 0.1, 3), SingularMatrixError);
  CHECK_NOTHROW(linear_imde_implicit_euler(Matrix{{1, 1}, {1, 1}}, xs({0, 0}), 0.1, 3));
  CHECK_THROWS_AS(linear_imde_implicit_euler(a, xs({0, 0}), 0.1, -1), ContractError);
}

TEST_CASE("series coefficients of the step's stability function") {
  // forward Euler: r(w) = 1 + w, so w(τ) = e^τ − 1
  const auto fe = linear_imde_coefficients(implicit_euler(), StepMode::fixed_point(0), 4);
  const std::vector<double> fe_ref{1.0, 0.5, 1.0 / 6, 1.0 / 24, 1.0 / 120};
  for (std::size_t j = 0; j < fe_ref.size(); ++j) CHECK(fe[j] == doctest::Approx(fe_ref[j]).epsilon(1e-13));
  // implicit Euler, converged or Newton L=1: r(w) = 1/(1 − w), so w(τ) = 1 − e^{−τ}
  for (const auto& mode : {StepMode::exact(), StepMode::newton(1)}) {
    const auto ie = linear_imde_coefficients(implicit_euler(), mode, 4);
    double fact = 1.0;
    for (std::size_t j = 0; j < ie.size(); ++j) {
      fact *= static_cast<double>(j + 1);
      CHECK(ie[j] == doctest::Approx((j % 2 == 0 ? 1.0 : -1.0) / fact).epsilon(1e-13));
    }
  }
  // midpoint and trapezoidal converge to the Cayley map: odd w, w₃ = −1/12
  for (const auto& tab : {implicit_midpoint(), implicit_trapezoidal()}) {
    const auto w = linear_imde_coefficients(tab, StepMode::exact(), 4);
    CHECK(w[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-13));
    CHECK(w[2] == doctest::Approx(-1.0 / 12).epsilon(1e-13));
    CHECK(w[3] == doctest::Approx(0.0).scale(1.0).epsilon(1e-13));
    CHECK(w[4] == doctest::Approx(1.0 / 120).epsilon(1e-12));
  }
}

TEST_CASE("truncated linear IMDE matches the reference IMDE coefficients") {
  for (const auto& row : table_rows()) {
    INFO(row.name);
    const auto got = flatten(linear_imde_series(row.a, row.b, row.h, row.tab, row.mode, 3));
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - row.imde_column[i]) <= 5.1e-5);
  }
}

TEST_CASE("converged linear IMDE matches the reference learned coefficients and is scheme consistent") {
  for (const auto& row : table_rows()) {
    INFO(row.name);
    const auto sol = linear_imde_solve(row.a, row.b, row.h, row.tab, row.mode);
    const auto got = flatten(sol);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - row.learned_column[i]) <= 5.1e-5);
    Matrix r = step_matrix(sol.a_h, row.h, row.tab, row.mode);
    r -= matrix_exp(row.a, row.h);
    CHECK(max_abs(r) <= 1e-10);
    // the deep truncation converges to the same matrix
    CHECK(max_abs_diff(linear_imde_series(row.a, row.b, row.h, row.tab, row.mode, 30).a_h, sol.a_h) < 1e-9);
  }
}

TEST_CASE("Newton L=1 is exact on linear fields") {
  const Matrix a{{-2, 1}, {1, -2}};
  const auto newton = linear_imde_solve(a, xs({-2, 1}), 0.12, implicit_euler(), StepMode::newton(1));
  const auto series = linear_imde_implicit_euler(a, xs({-2, 1}), 0.12, 60);
  CHECK(max_abs_diff(newton.a_h, series.a_h) < 1e-9);
  CHECK(max_abs_diff(newton.c_h, series.c_h) < 1e-9);
}

TEST_CASE("leading IMDE perturbation has the order of the scheme") {
  const Matrix a{{-1, -1}, {2, -1}};
  for (const auto& tab : {implicit_euler(), implicit_midpoint(), implicit_trapezoidal()}) {
    std::vector<double> hs, gaps;
    for (double h : {0.08, 0.04, 0.02, 0.01}) {
      hs.push_back(h);
      gaps.push_back(max_abs_diff(linear_imde_solve(a, xs({0, 0}), h, tab, StepMode::exact()).a_h, a));
    }
    CHECK(loglog_slope(hs, gaps) == doctest::Approx(tab.order).epsilon(0.05));
  }
}

TEST_CASE("nonlinear terms reduce to matrix powers on linear fields") {
  const Matrix a{{0.3, -1.1}, {0.7, -0.4}};
  auto f = std::make_shared<AffineField>(a);
  const auto y = xs({0.8, -1.3});
  for (auto variant : {ImdeVariant::implicit_euler_newton_l1, ImdeVariant::implicit_euler_fixed_point_l2}) {
    const auto mode =
        variant == ImdeVariant::implicit_euler_newton_l1 ? StepMode::newton(1) : StepMode::fixed_point(2);
    const auto w = linear_imde_coefficients(implicit_euler(), mode, 3);
    const auto series = nonlinear_imde_terms(f, variant, 0.1);
    CHECK(series.order() == 3);
    CHECK(series.term(0)(y) == (*f)(y));
    for (int k = 1; k <= 3; ++k) {
      const auto ref = matvec(matrix_power(a, k + 1), y);
      const auto got = series.term(static_cast<std::size_t>(k))(y);
      for (std::size_t d = 0; d < 2; ++d) CHECK(got[d] == doctest::Approx(w[static_cast<std::size_t>(k)] * ref[d]).epsilon(1e-12));
    }
  }
  const auto newton = nonlinear_imde_terms(f, ImdeVariant::implicit_euler_newton_l1, 0.1);
  const auto a2y = matvec(matrix_power(a, 2), y), a3y = matvec(matrix_power(a, 3), y),
             a4y = matvec(matrix_power(a, 4), y);
  for (std::size_t d = 0; d < 2; ++d) {
    CHECK(newton.term(1)(y)[d] == doctest::Approx(-0.5 * a2y[d]));
    CHECK(newton.term(2)(y)[d] == doctest::Approx(a3y[d] / 6.0));
    CHECK(newton.term(3)(y)[d] == doctest::Approx(-a4y[d] / 24.0));
  }
}

TEST_CASE("constant fields have no IMDE correction") {
  auto f = std::make_shared<testing_fields::Constant>();
  const auto s = nonlinear_imde_terms(f, ImdeVariant::implicit_euler_fixed_point_l2, 0.3);
  for (std::size_t k = 1; k <= 3; ++k) CHECK(max_abs(s.term(k)(xs({0.4, 2.0}))) == 0.0);
  CHECK(s(xs({0.4, 2.0})) == xs({1.5, -0.25}));
  CHECK_THROWS_AS(parse_imde_variant("rk4"), ConfigError);
  CHECK(parse_imde_variant(to_string(ImdeVariant::implicit_euler_newton_l1)) == ImdeVariant::implicit_euler_newton_l1);
}

TEST_CASE("series evaluation sums h^k f_k") {
  auto f = std::make_shared<Pendulum>();
  const double h = 0.05;
  const auto s = nonlinear_imde_terms(f, ImdeVariant::implicit_euler_newton_l1, h);
  const auto x = xs({-0.7, -2.2});
  std::vector<double> ref(2, 0.0);
  double w = 1.0;
  for (std::size_t k = 0; k <= 3; ++k, w *= h) {
    const auto t = s.term(k)(x);
    for (std::size_t d = 0; d < 2; ++d) ref[d] += w * t[d];
  }
  CHECK(max_abs_diff(s(x), ref) < 1e-13);
}

TEST_CASE("defect correction oracle") {
  auto pend = std::make_shared<Pendulum>();
  CHECK(numeric_imde(pend, implicit_euler(), StepMode::exact(), 0.1, 0) == pend);
  CHECK_THROWS_AS(numeric_imde(pend, implicit_euler(), StepMode::exact(), 0.1, 5), ContractError);
  CHECK_THROWS_AS(numeric_imde(pend, implicit_euler(), StepMode::exact(), 0.0, 1), ContractError);

  SUBCASE("linear implicit Euler agrees with the K=3 series to fourth order") {
    const Matrix a{{-1, -1}, {2, -1}};
    auto f = std::make_shared<AffineField>(a, xs({-1, 5}));
    const auto x = xs({-1.5, 0.3});
    std::vector<double> hs, gaps;
    for (double h : {0.1, 0.05, 0.025}) {
      const auto g = numeric_imde(f, implicit_euler(), StepMode::exact(), h, 3);
      const auto lin = linear_imde_implicit_euler(a, xs({-1, 5}), h, 3);
      auto ref = matvec(lin.a_h, x);
      for (std::size_t d = 0; d < 2; ++d) ref[d] += lin.c_h[d];
      hs.push_back(h);
      gaps.push_back(max_abs_diff((*g)(x), ref));
    }
    CHECK(loglog_slope(hs, gaps) == doctest::Approx(4.0).epsilon(0.08));
  }

  SUBCASE("pendulum Newton L=1 agrees with the closed form to fourth order") {
    const auto x = xs({-1.0, 0.5});
    std::vector<double> hs, gaps;
    for (double h : {0.02, 0.01, 0.005}) {
      const auto g = numeric_imde(pend, implicit_euler(), StepMode::newton(1), h, 3);
      hs.push_back(h);
      gaps.push_back(max_abs_diff((*g)(x), nonlinear_imde_terms(pend, ImdeVariant::implicit_euler_newton_l1, h)(x)));
    }
    CHECK(loglog_slope(hs, gaps) == doctest::Approx(4.0).epsilon(0.1));
  }

  SUBCASE("defect shrinks by one order per correction level") {
    const auto x = xs({-0.5, -1.0});
    const StepOperator step(implicit_midpoint(), StepMode::fixed_point(3), 0.02);
    const auto exact = reference_flow(*pend, x, 0.02);
    double prev = 1.0;
    for (int depth = 0; depth <= 3; ++depth) {
      const auto g = numeric_imde(pend, implicit_midpoint(), StepMode::fixed_point(3), 0.02, depth);
      const double defect = max_abs_diff(step(*g, x), exact);
      if (depth > 0) CHECK(defect < 0.2 * prev);
      prev = defect;
    }
  }
}

TEST_CASE("closed-form terms match coefficients extracted from the numeric oracle") {
  auto pend = std::make_shared<Pendulum>();
  const auto x = xs({-1.0, 0.5});
  for (auto variant : {ImdeVariant::implicit_euler_newton_l1, ImdeVariant::implicit_euler_fixed_point_l2}) {
    const auto mode =
        variant == ImdeVariant::implicit_euler_newton_l1 ? StepMode::newton(1) : StepMode::fixed_point(2);
    const auto extracted = oracles::extract_terms(
        [&](double h) { return (*numeric_imde(pend, implicit_euler(), mode, h, 4))(x); }, (*pend)(x), 0.02, 5, 1.4);
    const auto closed = nonlinear_imde_terms(pend, variant, 0.0);
    for (std::size_t k = 1; k <= 3; ++k) {
      const auto ref = closed.term(k)(x);
      const double scale = max_abs(ref);
      INFO("variant " << to_string(variant) << " term " << k);
      CHECK(max_abs_diff(extracted[k - 1], ref) / scale < 1e-4);
    }
  }
}

TEST_CASE("one-stage exact IMDE reproduces the exact flow") {
  auto pend = std::make_shared<Pendulum>();
  const auto x = xs({-0.9, -2.0});
  for (const auto& tab : {implicit_euler(), implicit_midpoint()}) {
    INFO(tab.name);
    const double h = 0.04;
    const OneStageImde fh(pend, tab, h);
    const auto stepped = step_exact<double>(fh, x, h, tab, 1e-13);
    CHECK(max_abs_diff(stepped, reference_flow(*pend, x, h)) < 1e-12);
    const auto g = numeric_imde(pend, tab, StepMode::exact(), 0.01, 4);
    CHECK(max_abs_diff(OneStageImde(pend, tab, 0.01)(x), (*g)(x)) < 2e-6);
  }

  const Matrix a{{-2, 1}, {1, -2}};
  auto lin = std::make_shared<AffineField>(a, xs({-2, 1}));
  const auto sol = linear_imde_solve(a, xs({-2, 1}), 0.12, implicit_midpoint(), StepMode::exact());
  const auto p = xs({-1.0, 0.3});
  auto ref = matvec(sol.a_h, p);
  for (std::size_t d = 0; d < 2; ++d) ref[d] += sol.c_h[d];
  CHECK(max_abs_diff(OneStageImde(lin, implicit_midpoint(), 0.12)(p), ref) < 1e-9);

  CHECK_THROWS_AS(OneStageImde(pend, implicit_trapezoidal(), 0.1), ContractError);
  CHECK_THROWS_AS(OneStageImde(pend, forward_euler(), 0.1), ContractError);
}
