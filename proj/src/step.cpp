#include "odenet/step.hpp"

namespace odenet {

std::string to_string(IterationKind kind) {
  switch (kind) {
    case IterationKind::exact:
      return "exact";
    case IterationKind::fixed_point:
      return "fixed_point";
    case IterationKind::newton:
      return "newton";
  }
  return "unknown";
}

IterationKind parse_iteration_kind(const std::string& name) {
  if (name == "exact") return IterationKind::exact;
  if (name == "fixed_point") return IterationKind::fixed_point;
  if (name == "newton") return IterationKind::newton;
  throw ConfigError("unknown iteration mode '" + name + "' (expected exact, fixed_point or newton)");
}

std::string StepMode::describe() const {
  if (kind == IterationKind::exact) return "exact";
  return to_string(kind) + "(L=" + std::to_string(iterations) + ")";
}

std::vector<double> odesolve(std::span<const double> x, const VectorField& f, int m, double dt,
                             const ButcherTableau& tab, const StepMode& mode, int s, std::size_t* evals) {
  if (m < 1) throw ContractError("odesolve: horizon multiplier must be >= 1");
  if (s < 1) throw ContractError("odesolve: composition count must be >= 1");
  const StepOperator step(tab, mode, dt / s);
  return compose<double>(step, f, x, m * s, evals);
}

}  // namespace odenet
