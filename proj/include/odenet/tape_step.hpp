#pragma once

// Batched step operators recorded on a Tape: every row of the state matrix is
// one independent initial point, all advanced together through the same
// unrolled iterations so gradients flow through every stage.

#include <cstddef>
#include <memory>

#include "odenet/model.hpp"
#include "odenet/step.hpp"
#include "odenet/tableau.hpp"
#include "odenet/tape.hpp"

namespace odenet {

class TapeIntegrator {
 public:
  /// Binds `model` onto `tape` (as leaves when `trainable`). `evals`, if given,
  /// accumulates per-point field passes (forward and Jacobian-vector alike).
  TapeIntegrator(Tape& tape, const ParamModel& model, bool trainable, std::size_t* evals = nullptr);

  const TapeModel& bound() const { return *bound_; }
  Tape& tape() { return tape_; }

  /// Batched f_θ(X).
  Var field(Var x);
  /// One step Φ_h in the given mode.
  Var step(Var x, double h, const ButcherTableau& tab, const StepMode& mode);
  /// s consecutive steps.
  Var compose(Var x, double h, const ButcherTableau& tab, const StepMode& mode, int s);

 private:
  Var fixed_point(Var x, double h, const ButcherTableau& tab, int L);
  Var newton(Var x, double h, const ButcherTableau& tab, int L);
  Var exact(Var x, double h, const ButcherTableau& tab, const StepMode& mode);
  Var output(Var x, const std::vector<Var>& v, double h, const ButcherTableau& tab);
  void count(std::size_t rows, std::size_t passes);

  Tape& tape_;
  const ParamModel& model_;
  std::unique_ptr<TapeModel> bound_;
  std::size_t* evals_;
};

/// One Newton–Raphson update of batched stage values V (one node per stage)
/// through the block system δ_ij I − h a_ij f′(v_j). `stages_equal` lets the
/// first iterate share one Jacobian across stages. Returns the residual max-norm
/// at the incoming V.
double newton_update(Tape& tape, const TapeModel& model, Var x, std::vector<Var>& v, double h,
                     const ButcherTableau& tab, bool stages_equal, int iterate, std::size_t* evals);

}  // namespace odenet
