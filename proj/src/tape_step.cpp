#include "odenet/tape_step.hpp"

#include <cmath>
#include <string>

#include "odenet/errors.hpp"

namespace odenet {

namespace {

void check_finite(const Matrix& m, const std::string& where) {
  for (double v : m.values())
    if (!std::isfinite(v)) throw DivergenceError("non-finite value at " + where);
}

Matrix basis_columns(std::size_t rows, std::size_t dim, std::size_t q) {
  Matrix u(rows, dim);
  for (std::size_t r = 0; r < rows; ++r) u(r, q) = 1.0;
  return u;
}

void add_evals(std::size_t* evals, std::size_t n) {
  if (evals) *evals += n;
}

}  // namespace

double newton_update(Tape& tape, const TapeModel& model, Var x, std::vector<Var>& v, double h,
                     const ButcherTableau& tab, bool stages_equal, int iterate, std::size_t* evals) {
  const std::size_t stages = tab.stages();
  const std::size_t rows = tape.value(x).rows();
  const std::size_t dim = tape.value(x).cols();

  std::vector<Var> k(stages);
  std::vector<std::vector<Var>> cols(stages);
  for (std::size_t j = 0; j < stages; ++j) {
    if (stages_equal && j > 0) {
      k[j] = k[0];
      cols[j] = cols[0];
      continue;
    }
    const auto e = model.forward(tape, v[j], true);
    k[j] = e.out;
    for (std::size_t q = 0; q < dim; ++q)
      cols[j].push_back(model.jvp(tape, e, tape.constant(basis_columns(rows, dim, q))));
    add_evals(evals, rows * (1 + dim));
  }

  std::vector<Var> residuals(stages);
  double resid = 0.0;
  for (std::size_t i = 0; i < stages; ++i) {
    std::vector<std::pair<double, Var>> terms{{1.0, v[i]}, {-1.0, x}};
    for (std::size_t j = 0; j < stages; ++j)
      if (tab.a(i, j) != 0.0) terms.emplace_back(-h * tab.a(i, j), k[j]);
    residuals[i] = tape.linear_combination(terms);
    resid = std::max(resid, max_abs(tape.value(residuals[i])));
  }
  Var system = tape.stage_newton_matrix(cols, tab.a, h);
  Var delta;
  try {
    delta = tape.solve_linear(system, stages == 1 ? residuals[0] : tape.hcat(residuals));
  } catch (const SingularMatrixError& e) {
    throw SingularMatrixError(e.pivot(), "Newton iterate " + std::to_string(iterate));
  }
  for (std::size_t i = 0; i < stages; ++i) {
    Var di = stages == 1 ? delta : tape.slice_cols(delta, i * dim, dim);
    v[i] = tape.sub(v[i], di);
    check_finite(tape.value(v[i]), "Newton iterate " + std::to_string(iterate) + ", stage " + std::to_string(i));
  }
  return resid;
}

TapeIntegrator::TapeIntegrator(Tape& tape, const ParamModel& model, bool trainable, std::size_t* evals)
    : tape_(tape), model_(model), bound_(model.bind(tape, trainable)), evals_(evals) {}

void TapeIntegrator::count(std::size_t rows, std::size_t passes) { add_evals(evals_, rows * passes); }

Var TapeIntegrator::field(Var x) {
  count(tape_.value(x).rows(), 1);
  return bound_->forward(tape_, x, false).out;
}

Var TapeIntegrator::step(Var x, double h, const ButcherTableau& tab, const StepMode& mode) {
  if (tape_.value(x).cols() != model_.dim()) throw ContractError("TapeIntegrator: state width differs from model");
  switch (mode.kind) {
    case IterationKind::fixed_point:
      return fixed_point(x, h, tab, mode.iterations);
    case IterationKind::newton:
      return newton(x, h, tab, mode.iterations);
    case IterationKind::exact:
      break;
  }
  return exact(x, h, tab, mode);
}

Var TapeIntegrator::compose(Var x, double h, const ButcherTableau& tab, const StepMode& mode, int s) {
  if (s < 1) throw ContractError("compose: composition count must be >= 1");
  for (int i = 0; i < s; ++i) x = step(x, h, tab, mode);
  return x;
}

Var TapeIntegrator::output(Var x, const std::vector<Var>& k, double h, const ButcherTableau& tab) {
  std::vector<std::pair<double, Var>> terms{{1.0, x}};
  for (std::size_t i = 0; i < tab.stages(); ++i)
    if (tab.b[i] != 0.0) terms.emplace_back(h * tab.b[i], k[i]);
  Var y = tape_.linear_combination(terms);
  check_finite(tape_.value(y), "step output");
  return y;
}

Var TapeIntegrator::fixed_point(Var x, double h, const ButcherTableau& tab, int L) {
  if (L < 0) throw ContractError("fixed point: negative iteration count");
  const std::size_t stages = tab.stages();
  const Var fx = field(x);
  std::vector<Var> k(stages, fx);
  for (int l = 1; l <= L; ++l) {
    std::vector<Var> next(stages);
    for (std::size_t i = 0; i < stages; ++i) {
      if (tab.stage_is_trivial(i)) {
        next[i] = fx;
        continue;
      }
      std::vector<std::pair<double, Var>> terms{{1.0, x}};
      for (std::size_t j = 0; j < stages; ++j)
        if (tab.a(i, j) != 0.0) terms.emplace_back(h * tab.a(i, j), k[j]);
      Var vi = tape_.linear_combination(terms);
      check_finite(tape_.value(vi), "iteration " + std::to_string(l) + ", stage " + std::to_string(i));
      next[i] = field(vi);
    }
    k = std::move(next);
  }
  return output(x, k, h, tab);
}

Var TapeIntegrator::newton(Var x, double h, const ButcherTableau& tab, int L) {
  if (L < 0) throw ContractError("newton: negative iteration count");
  if (L == 0) return fixed_point(x, h, tab, 0);
  std::vector<Var> v(tab.stages(), x);
  for (int l = 1; l <= L; ++l) newton_update(tape_, *bound_, x, v, h, tab, l == 1, l, evals_);
  std::vector<Var> k;
  for (Var vi : v) k.push_back(field(vi));
  return output(x, k, h, tab);
}

Var TapeIntegrator::exact(Var x, double h, const ButcherTableau& tab, const StepMode& mode) {
  // Root first, off the main tape; then one Newton update on the main tape
  // starting from the constant root, whose derivative is the implicit-function
  // derivative of the root.
  std::vector<Matrix> root;
  {
    Tape scratch;
    auto constant_model = model_.bind(scratch, false);
    Var sx = scratch.constant(tape_.value(x));
    std::vector<Var> v(tab.stages(), sx);
    double resid = 0.0;
    for (int it = 0;; ++it) {
      std::vector<Var> k;
      for (Var vi : v) k.push_back(constant_model->forward(scratch, vi, false).out);
      count(scratch.value(sx).rows(), tab.stages());
      resid = 0.0;
      for (std::size_t i = 0; i < tab.stages(); ++i) {
        std::vector<std::pair<double, Var>> terms{{1.0, v[i]}, {-1.0, sx}};
        for (std::size_t j = 0; j < tab.stages(); ++j)
          if (tab.a(i, j) != 0.0) terms.emplace_back(-h * tab.a(i, j), k[j]);
        resid = std::max(resid, max_abs(scratch.value(scratch.linear_combination(terms))));
      }
      if (resid <= mode.tol) break;
      if (it == mode.max_iters)
        throw ConvergenceError(
            "exact stage solve did not converge in " + std::to_string(mode.max_iters) + " iterations", resid);
      newton_update(scratch, *constant_model, sx, v, h, tab, it == 0, it + 1, evals_);
    }
    for (Var vi : v) root.push_back(scratch.value(vi));
  }
  std::vector<Var> v;
  for (auto& r : root) v.push_back(tape_.constant(std::move(r)));
  newton_update(tape_, *bound_, x, v, h, tab, false, 0, evals_);
  std::vector<Var> k;
  for (Var vi : v) k.push_back(field(vi));
  return output(x, k, h, tab);
}

}  // namespace odenet
