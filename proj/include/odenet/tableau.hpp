#pragma once

#include <string>
#include <vector>

#include "odenet/matrix.hpp"

namespace odenet {

/// Runge–Kutta coefficients (a_ij, b_i) with their classical order.
struct ButcherTableau {
  std::string name;
  Matrix a;
  std::vector<double> b;
  int order = 0;

  std::size_t stages() const noexcept { return b.size(); }
  /// True when a_ij = 0 for every i ≤ j.
  bool is_explicit() const;
  /// Σ b_i = 1 within `tol`.
  bool is_consistent(double tol = 1e-14) const;
  /// max_i Σ_j |a_ij|, the contraction factor of fixed-point iteration per unit h·Lip(f).
  double kappa() const;
  /// Σ |b_i|.
  double mu() const;
  /// Rows of a that are entirely zero; such stages always sit at the step's input.
  bool stage_is_trivial(std::size_t i) const;
};

/// Validates shapes and builds a tableau; throws ConfigError on ragged input.
ButcherTableau make_tableau(std::string name, Matrix a, std::vector<double> b, int order);

ButcherTableau forward_euler();
ButcherTableau implicit_euler();
ButcherTableau implicit_midpoint();
ButcherTableau implicit_trapezoidal();
ButcherTableau rk4();

/// Built-in by name: forward_euler, implicit_euler, implicit_midpoint,
/// implicit_trapezoidal, rk4 (also the short forms midpoint, trapezoidal).
ButcherTableau tableau_by_name(const std::string& name);
std::vector<std::string> builtin_tableau_names();

}  // namespace odenet
