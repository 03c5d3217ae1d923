#include "odenet/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "odenet/errors.hpp"
#include "odenet/step.hpp"

namespace odenet {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> pointwise_error(const VectorField& g, const VectorField& h, const Matrix& points) {
  if (g.dim() != h.dim() || points.cols() != g.dim()) throw ContractError("field_error: dimensions differ");
  std::vector<double> out(points.rows());
  std::vector<double> a(g.dim()), b(g.dim());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    g.eval(points.row_span(i), std::span<double>(a));
    h.eval(points.row_span(i), std::span<double>(b));
    out[i] = max_abs_diff(a, b);
  }
  return out;
}

double field_error(const VectorField& g, const VectorField& h, const Matrix& points) {
  if (points.rows() == 0) throw ContractError("field_error: no evaluation points");
  return mean(pointwise_error(g, h, points));
}

double trajectory_error(const VectorField& learned, const VectorField& truth, const std::vector<double>& x0,
                        double horizon, double dt) {
  if (!(dt > 0.0) || !(horizon >= dt)) throw ConfigError("trajectory_error: need 0 < Δt ≤ T");
  if (x0.size() != learned.dim() || x0.size() != truth.dim())
    throw ContractError("trajectory_error: x0 dimension differs from the fields");
  const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
  std::vector<double> p = x0, q = x0;
  double sum = 0.0;
  for (std::size_t m = 1; m <= steps; ++m) {
    p = reference_flow(learned, p, dt);
    q = reference_flow(truth, q, dt);
    for (std::size_t d = 0; d < p.size(); ++d)
      if (!std::isfinite(p[d]) || !std::isfinite(q[d]))
        throw DivergenceError("trajectory_error: flow became non-finite at m = " + std::to_string(m));
    sum += max_abs_diff(p, q);
  }
  return sum / static_cast<double>(steps);
}

ErrorReport evaluate(const VectorField& learned, const VectorField& truth, const VectorField* imde,
                     const Matrix& points, std::string test_set) {
  if (points.rows() == 0) throw ContractError("evaluate: no evaluation points");
  ErrorReport r;
  r.points = points;
  r.test_set = std::move(test_set);
  r.per_point_truth = pointwise_error(learned, truth, points);
  r.error_vs_truth = mean(r.per_point_truth);
  if (imde) {
    r.per_point_imde = pointwise_error(learned, *imde, points);
    r.error_vs_imde = mean(r.per_point_imde);
  }
  return r;
}

void write_csv(std::ostream& out, const ErrorReport& report) {
  const bool with_imde = report.error_vs_imde.has_value();
  out << "point";
  for (std::size_t d = 0; d < report.points.cols(); ++d) out << ",x" << (d + 1);
  out << ",err_truth";
  if (with_imde) out << ",err_imde";
  out << '\n';
  for (std::size_t i = 0; i < report.points.rows(); ++i) {
    out << i;
    for (double v : report.points.row_span(i)) out << ',' << fmt(v);
    out << ',' << fmt(report.per_point_truth[i]);
    if (with_imde) out << ',' << fmt(report.per_point_imde[i]);
    out << '\n';
  }
  out << "mean";
  for (std::size_t d = 0; d < report.points.cols(); ++d) out << ',';
  out << ',' << fmt(report.error_vs_truth);
  if (with_imde) out << ',' << fmt(*report.error_vs_imde);
  out << '\n';
}

Matrix grid_points(const std::vector<double>& lo, const std::vector<double>& hi, std::size_t per_axis) {
  if (lo.size() != hi.size() || lo.empty() || per_axis < 1) throw ContractError("grid_points: malformed box");
  const std::size_t dim = lo.size();
  std::size_t total = 1;
  for (std::size_t d = 0; d < dim; ++d) total *= per_axis;
  Matrix out(total, dim);
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t rest = i;
    for (std::size_t d = dim; d-- > 0;) {
      const std::size_t k = rest % per_axis;
      rest /= per_axis;
      const double t = per_axis == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(per_axis - 1);
      out(i, d) = lo[d] + t * (hi[d] - lo[d]);
    }
  }
  return out;
}

}  // namespace odenet
