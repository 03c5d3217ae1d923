#pragma once

// Evaluation quantities: mean ∞-norm field errors and trajectory error.

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "odenet/field.hpp"
#include "odenet/matrix.hpp"

namespace odenet {

/// ‖g(x) − h(x)‖∞ at every row of `points`.
std::vector<double> pointwise_error(const VectorField& g, const VectorField& h, const Matrix& points);

/// Mean over the rows of `points` of ‖g(x) − h(x)‖∞. ContractError if points is empty.
double field_error(const VectorField& g, const VectorField& h, const Matrix& points);

/// (Δt/T) Σ_{m=1}^{T/Δt} ‖φ_{mΔt,f_learned}(x₀) − φ_{mΔt,f_true}(x₀)‖∞, both flows
/// from the reference integrator. DivergenceError names the failing m.
double trajectory_error(const VectorField& learned, const VectorField& truth, const std::vector<double>& x0,
                        double horizon, double dt);

struct ErrorReport {
  double error_vs_truth = 0.0;
  /// Absent when no IMDE reference was supplied.
  std::optional<double> error_vs_imde;
  Matrix points;
  std::vector<double> per_point_truth;
  std::vector<double> per_point_imde;
  std::string test_set;
};

ErrorReport evaluate(const VectorField& learned, const VectorField& truth, const VectorField* imde,
                     const Matrix& points, std::string test_set);

/// One row per point (index, x1..xD, err_truth[, err_imde]) then a "mean" summary row.
void write_csv(std::ostream& out, const ErrorReport& report);

/// Row-major grid of n^D points spanning the box [lo, hi].
Matrix grid_points(const std::vector<double>& lo, const std::vector<double>& hi, std::size_t per_axis);

}  // namespace odenet
