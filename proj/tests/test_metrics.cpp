#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "odenet/errors.hpp"
#include "odenet/metrics.hpp"
#include "odenet/systems.hpp"
#include "test_fields.hpp"

using namespace odenet;
using testing_fields::Pendulum;

namespace {

struct Shifted : FieldAdapter<Shifted> {
  std::vector<double> shift;
  explicit Shifted(std::vector<double> c) : shift(std::move(c)) {}
  std::size_t dim() const override { return 2; }
  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    out[0] = -0.2 * x[0] - 8.91 * sin(x[1]) + shift[0];
    out[1] = x[0] + shift[1];
  }
};

Matrix sample_points() { return grid_points({-1.5, -4.0}, {0.0, 0.0}, 5); }

}  // namespace

TEST_CASE("field_error of a field against itself is zero") {
  const Pendulum f;
  CHECK(field_error(f, f, sample_points()) == 0.0);
}

TEST_CASE("field_error of a constant shift is the shift's ∞-norm") {
  const Pendulum f;
  CHECK(field_error(Shifted({0.3, 0.0}), f, sample_points()) == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(field_error(Shifted({0.1, -0.25}), f, sample_points()) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK_THROWS_AS(field_error(f, f, Matrix(0, 2)), ContractError);
}

TEST_CASE("field_error is symmetric and satisfies the triangle inequality") {
  const Pendulum f;
  const Shifted g({0.2, -0.1}), h({-0.05, 0.4});
  const auto pts = sample_points();
  CHECK(field_error(g, h, pts) == field_error(h, g, pts));
  CHECK(field_error(g, h, pts) <= field_error(g, f, pts) + field_error(f, h, pts) + 1e-15);
}

TEST_CASE("trajectory_error vanishes for identical flows and reduces to one term for T = Δt") {
  const Pendulum f;
  CHECK(trajectory_error(f, f, {-1.0, -2.0}, 1.0, 0.01) <= 1e-10);
  const Shifted g({0.0, 0.5});
  const double dt = 0.1;
  const double one = trajectory_error(g, f, {-1.0, -2.0}, dt, dt);
  const auto p = reference_flow(g, {-1.0, -2.0}, dt);
  const auto q = reference_flow(f, {-1.0, -2.0}, dt);
  CHECK(one == max_abs_diff(p, q));
}

TEST_CASE("trajectory_error reports the step where a flow diverges") {
  const AffineField blowup({{900, 0}, {0, 0}}, {0, 0});
  const AffineField calm({{0, 0}, {0, 0}}, {0, 0});
  try {
    trajectory_error(blowup, calm, {1.0, 1.0}, 10.0, 1.0);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("m = ") != std::string::npos);
  }
}

TEST_CASE("error reports emit one CSV row per point plus a summary") {
  const Pendulum f;
  const Shifted g({0.1, 0.0}), imde({0.05, 0.0});
  const auto pts = grid_points({0, 0}, {1, 1}, 2);
  const auto report = evaluate(g, f, &imde, pts, "grid");
  CHECK(report.error_vs_truth == doctest::Approx(0.1));
  REQUIRE(report.error_vs_imde.has_value());
  CHECK(*report.error_vs_imde == doctest::Approx(0.05));
  std::ostringstream out;
  write_csv(out, report);
  std::istringstream in(out.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0] == "point,x1,x2,err_truth,err_imde");
  CHECK(lines[5].rfind("mean,,", 0) == 0);
}

TEST_CASE("grid_points spans the box") {
  const auto g = grid_points({-1, 0}, {1, 2}, 3);
  REQUIRE(g.rows() == 9);
  CHECK(g(0, 0) == -1.0);
  CHECK(g(0, 1) == 0.0);
  CHECK(g(1, 1) == 1.0);
  CHECK(g(8, 0) == 1.0);
  CHECK(g(8, 1) == 2.0);
}
