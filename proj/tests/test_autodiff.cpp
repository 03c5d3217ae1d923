#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "odenet/dual.hpp"
#include "odenet/field.hpp"
#include "odenet/linalg.hpp"
#include "odenet/tape.hpp"

using namespace odenet;

namespace {

struct Pendulum : FieldAdapter<Pendulum> {
  std::size_t dim() const override { return 2; }
  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    out[0] = -0.2 * x[0] - 8.91 * sin(x[1]);
    out[1] = x[0];
  }
};

struct Cubic : FieldAdapter<Cubic> {
  std::size_t dim() const override { return 2; }
  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    out[0] = x[0] * x[0] * x[1] + 3.0 * x[1];
    out[1] = x[0] * x[1] - x[1] * x[1] * x[1];
  }
};

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = u(rng);
  return m;
}

}  // namespace

TEST_CASE("backward of x*x at 3 is 6") {
  Tape t;
  Var x = t.leaf(Matrix(1, 1, 3.0));
  Var y = t.mul(x, x);
  auto g = backward(t, y);
  CHECK(g.wrt(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("backward of tanh at 0 is 1") {
  Tape t;
  Var x = t.leaf(Matrix(1, 1, 0.0));
  Var y = t.tanh(x);
  CHECK(backward(t, y).wrt(x)[0] == doctest::Approx(1.0));
}

TEST_CASE("unused nodes get zero gradient and seed shape is checked") {
  Tape t;
  Var x = t.leaf(Matrix(2, 2, 1.0));
  Var unused = t.leaf(Matrix(3, 1, 5.0));
  Var y = t.sum_squares(x);
  auto g = backward(t, y);
  CHECK(max_abs(g.wrt(unused)) == 0.0);
  CHECK(g.wrt(unused).rows() == 3);
  CHECK_THROWS_AS(backward(t, x, Matrix(1, 1, 1.0)), ContractError);
  CHECK_THROWS_AS(backward(t, Var{99}), ContractError);
}

TEST_CASE("composite tape gradient matches central differences") {
  std::mt19937_64 rng(7);
  const Matrix x0 = random_matrix(5, 3, rng);
  const Matrix w0 = random_matrix(4, 3, rng);
  const Matrix b0 = random_matrix(1, 4, rng);
  const Matrix v0 = random_matrix(2, 4, rng);

  auto loss = [&](const Matrix& x, const Matrix& w, const Matrix& b, const Matrix& v, Tape& t, Var* ids) {
    ids[0] = t.leaf(x);
    ids[1] = t.leaf(w);
    ids[2] = t.leaf(b);
    ids[3] = t.leaf(v);
    Var h = t.tanh(t.add_row(t.matmul_nt(ids[0], ids[1]), ids[2]));
    Var s = t.mul(h, t.one_minus_square(h));
    Var y = t.matmul_nt(s, ids[3]);
    Var cat = t.hcat({y, t.slice_cols(h, 1, 2)});
    Var lc = t.linear_combination({{0.5, cat}, {-1.5, t.scale(cat, 0.3)}});
    return t.sum_squares(t.sub(lc, t.constant(Matrix(5, 4, 0.1))));
  };

  Tape t;
  Var ids[4];
  Var out = loss(x0, w0, b0, v0, t, ids);
  auto g = backward(t, out);

  Matrix params[4] = {x0, w0, b0, v0};
  for (int p = 0; p < 4; ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double step = 1e-6;
      Matrix plus[4] = {x0, w0, b0, v0};
      Matrix minus[4] = {x0, w0, b0, v0};
      plus[p][i] += step;
      minus[p][i] -= step;
      Tape tp, tm;
      Var dummy[4];
      const double fp = tp.value(loss(plus[0], plus[1], plus[2], plus[3], tp, dummy))[0];
      const double fm = tm.value(loss(minus[0], minus[1], minus[2], minus[3], tm, dummy))[0];
      const double fd = (fp - fm) / (2 * step);
      CHECK(g.wrt(ids[p])[i] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("gradients are bitwise deterministic") {
  std::mt19937_64 rng(3);
  const Matrix x0 = random_matrix(6, 4, rng);
  const Matrix w0 = random_matrix(5, 4, rng);
  auto run = [&] {
    Tape t;
    Var w = t.leaf(w0);
    Var y = t.sum_squares(t.tanh(t.matmul_nt(t.constant(x0), w)));
    return backward(t, y).wrt(w);
  };
  CHECK(run() == run());
}

TEST_CASE("solve_linear examples") {
  SUBCASE("identity") {
    Tape t;
    Var a = t.constant(Matrix(1, 4, std::vector<double>{1, 0, 0, 1}));
    Var b = t.constant(Matrix(1, 2, std::vector<double>{3.5, -2}));
    Var x = t.solve_linear(a, b);
    CHECK(t.value(x) == t.value(b));
  }
  SUBCASE("diagonal") {
    Tape t;
    Var a = t.constant(Matrix(1, 4, std::vector<double>{2, 0, 0, 4}));
    Var b = t.constant(Matrix(1, 2, std::vector<double>{2, 8}));
    Var x = t.solve_linear(a, b);
    CHECK(t.value(x)(0, 0) == doctest::Approx(1.0));
    CHECK(t.value(x)(0, 1) == doctest::Approx(2.0));
  }
  SUBCASE("singular reports the pivot") {
    Tape t;
    Var a = t.constant(Matrix(1, 4, std::vector<double>{1, 2, 2, 4}));
    Var b = t.constant(Matrix(1, 2, 1.0));
    try {
      t.solve_linear(a, b);
      FAIL("expected singular matrix error");
    } catch (const SingularMatrixError& e) {
      CHECK(e.pivot() == 1);
    }
  }
}

TEST_CASE("solve_linear residual and adjoint gradient") {
  std::mt19937_64 rng(11);
  const std::size_t n = 4;
  Matrix a0 = random_matrix(1, n * n, rng);
  for (std::size_t i = 0; i < n; ++i) a0(0, i * n + i) += 4.0;
  const Matrix b0 = random_matrix(1, n, rng, 3.0);

  Tape t;
  Var a = t.leaf(a0);
  Var b = t.leaf(b0);
  Var x = t.solve_linear(a, b);
  const Matrix& xv = t.value(x);
  double resid = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = -b0[i];
    for (std::size_t j = 0; j < n; ++j) s += a0[i * n + j] * xv[j];
    resid = std::max(resid, std::abs(s));
  }
  CHECK(resid <= 1e-10 * (1 + max_abs(b0)));

  Var sum = t.matmul_nt(x, t.constant(Matrix(1, n, 1.0)));
  auto g = backward(t, sum);
  auto f = [&](const Matrix& am, const Matrix& bm) {
    auto sol = lu_solve<double>(am.values(), bm.values());
    double s = 0;
    for (double v : sol) s += v;
    return s;
  };
  for (std::size_t i = 0; i < n * n; ++i) {
    Matrix ap = a0, am = a0;
    ap[i] += 1e-6;
    am[i] -= 1e-6;
    const double fd = (f(ap, b0) - f(am, b0)) / 2e-6;
    CHECK(g.wrt(a)[i] == doctest::Approx(fd).epsilon(1e-6));
  }
  for (std::size_t i = 0; i < n; ++i) {
    Matrix bp = b0, bm = b0;
    bp[i] += 1e-6;
    bm[i] -= 1e-6;
    CHECK(g.wrt(b)[i] == doctest::Approx((f(a0, bp) - f(a0, bm)) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("LU transpose solve") {
  std::mt19937_64 rng(5);
  Matrix a = random_matrix(3, 3, rng);
  for (int i = 0; i < 3; ++i) a(i, i) += 3;
  std::vector<double> b{1, -2, 0.5};
  LuFactorization<double> lu(a.values(), 3);
  auto x = lu.solve_transpose(b);
  auto back = matvec(a.transposed(), x);
  CHECK(max_abs_diff(back, b) < 1e-12);
}

TEST_CASE("matrix_exp") {
  CHECK(matrix_exp(Matrix(3, 3)) == Matrix::identity(3));
  Matrix rot{{0, 1}, {-1, 0}};
  Matrix e = matrix_exp(rot, std::numbers::pi / 2);
  CHECK(max_abs_diff(e.values(), rot.values()) < 1e-14);

  std::mt19937_64 rng(2);
  Matrix a = random_matrix(3, 3, rng, 2.0);
  Matrix prod = matmul(matrix_exp(a), matrix_exp(a, -1.0));
  CHECK(max_abs_diff(prod.values(), Matrix::identity(3).values()) < 1e-10);

  // ‖At‖ = 10: compare against a diagonalizable case with known spectrum.
  Matrix diag{{-5, 0}, {0, 5}};
  Matrix ed = matrix_exp(diag, 2.0);
  CHECK(ed(0, 0) == doctest::Approx(std::exp(-10.0)).epsilon(1e-12));
  CHECK(ed(1, 1) == doctest::Approx(std::exp(10.0)).epsilon(1e-12));
  CHECK_THROWS_AS(matrix_exp(Matrix(17, 17)), ContractError);
}

TEST_CASE("jvp on linear and pendulum fields") {
  AffineField lin(Matrix{{1, 2}, {3, 4}});
  std::vector<double> x{0.3, -0.7}, u{1, -1};
  auto au = jvp(lin, x, {u});
  CHECK(au[0] == doctest::Approx(-1.0));
  CHECK(au[1] == doctest::Approx(-1.0));
  auto second = jvp(lin, x, {u, u});
  CHECK(second[0] == 0.0);
  CHECK(second[1] == 0.0);

  Pendulum p;
  auto d = jvp(p, std::vector<double>{0, 0}, {std::vector<double>{1, 0}});
  CHECK(d[0] == doctest::Approx(-0.2));
  CHECK(d[1] == doctest::Approx(1.0));

  CHECK_THROWS_AS(jvp(p, x, {u, u, u, u}), UnsupportedOrderError);
}

TEST_CASE("second and third contractions match finite differences") {
  Pendulum p;
  std::vector<double> x{-0.8, 0.6}, u{0.4, -1.1}, v{0.9, 0.3};
  auto exact = jvp(p, x, {u, v});
  const double eps = 1e-5;
  std::vector<double> xp = x, xm = x;
  for (int i = 0; i < 2; ++i) {
    xp[i] += eps * v[i];
    xm[i] -= eps * v[i];
  }
  auto dp = jvp(p, xp, {u});
  auto dm = jvp(p, xm, {u});
  for (int i = 0; i < 2; ++i) CHECK(std::abs(exact[i] - (dp[i] - dm[i]) / (2 * eps)) < 1e-6);

  // Polynomial of degree 3: fourth-order terms vanish, third order is constant.
  Cubic c;
  auto t1 = jvp(c, std::vector<double>{1, 2}, {u, v, u});
  auto t2 = jvp(c, std::vector<double>{-3, 0.5}, {u, v, u});
  CHECK(max_abs_diff(t1, t2) < 1e-12);
  // d³/dx0²dx1 of x0²x1 is 2.
  auto e = jvp(c, std::vector<double>{0.1, 0.2},
               {std::vector<double>{1, 0}, std::vector<double>{1, 0}, std::vector<double>{0, 1}});
  CHECK(e[0] == doctest::Approx(2.0));
  CHECK(e[1] == doctest::Approx(0.0));
}

TEST_CASE("dual arithmetic with zero tangents reproduces primal arithmetic") {
  D2 a(D1(1.3, 0.0), D1(0.0, 0.0));
  D2 b(D1(-0.4, 0.0), D1(0.0, 0.0));
  D2 r = tanh(a * b + sin(a) / (b - 2.0));
  const double ref = std::tanh(1.3 * -0.4 + std::sin(1.3) / (-0.4 - 2.0));
  CHECK(primal(r) == ref);
  CHECK(r.d.v == 0.0);
}

TEST_CASE("jacobian matches directional derivatives at nested types") {
  Pendulum p;
  std::vector<D1> x{D1(0.5, 1.0), D1(-0.2, 0.5)};
  std::vector<D1> value;
  auto jac = jacobian<D1>(p, x, &value);
  CHECK(jac[1].v == doctest::Approx(-8.91 * std::cos(-0.2)));
  CHECK(jac[1].d == doctest::Approx(8.91 * std::sin(-0.2) * 0.5));
  CHECK(value[1].v == doctest::Approx(0.5));
}
