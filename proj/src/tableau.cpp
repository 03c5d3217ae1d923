#include "odenet/tableau.hpp"

#include <cmath>

#include "odenet/errors.hpp"

namespace odenet {

bool ButcherTableau::is_explicit() const {
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i; j < a.cols(); ++j)
      if (a(i, j) != 0.0) return false;
  return true;
}

bool ButcherTableau::is_consistent(double tol) const {
  double s = 0.0;
  for (double w : b) s += w;
  return std::abs(s - 1.0) <= tol;
}

double ButcherTableau::kappa() const { return norm_inf(a); }

double ButcherTableau::mu() const {
  double s = 0.0;
  for (double w : b) s += std::abs(w);
  return s;
}

bool ButcherTableau::stage_is_trivial(std::size_t i) const {
  for (std::size_t j = 0; j < a.cols(); ++j)
    if (a(i, j) != 0.0) return false;
  return true;
}

ButcherTableau make_tableau(std::string name, Matrix a, std::vector<double> b, int order) {
  if (b.empty()) throw ConfigError("tableau '" + name + "': no stages");
  if (a.rows() != b.size() || a.cols() != b.size()) {
    throw ConfigError("tableau '" + name + "': stage matrix must be " + std::to_string(b.size()) + "x" +
                      std::to_string(b.size()));
  }
  for (double v : a.values())
    if (!std::isfinite(v)) throw ConfigError("tableau '" + name + "': non-finite coefficient");
  for (double v : b)
    if (!std::isfinite(v)) throw ConfigError("tableau '" + name + "': non-finite weight");
  return ButcherTableau{std::move(name), std::move(a), std::move(b), order};
}

ButcherTableau forward_euler() { return make_tableau("forward_euler", Matrix{{0.0}}, {1.0}, 1); }

ButcherTableau implicit_euler() { return make_tableau("implicit_euler", Matrix{{1.0}}, {1.0}, 1); }

ButcherTableau implicit_midpoint() { return make_tableau("implicit_midpoint", Matrix{{0.5}}, {1.0}, 2); }

ButcherTableau implicit_trapezoidal() {
  return make_tableau("implicit_trapezoidal", Matrix{{0.0, 0.0}, {0.5, 0.5}}, {0.5, 0.5}, 2);
}

ButcherTableau rk4() {
  return make_tableau("rk4", Matrix{{0, 0, 0, 0}, {0.5, 0, 0, 0}, {0, 0.5, 0, 0}, {0, 0, 1, 0}},
                      {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6}, 4);
}

ButcherTableau tableau_by_name(const std::string& name) {
  if (name == "forward_euler") return forward_euler();
  if (name == "implicit_euler") return implicit_euler();
  if (name == "implicit_midpoint" || name == "midpoint") return implicit_midpoint();
  if (name == "implicit_trapezoidal" || name == "trapezoidal") return implicit_trapezoidal();
  if (name == "rk4") return rk4();
  throw ConfigError("unknown tableau '" + name + "'");
}

std::vector<std::string> builtin_tableau_names() {
  return {"forward_euler", "implicit_euler", "implicit_midpoint", "implicit_trapezoidal", "rk4"};
}

}  // namespace odenet
