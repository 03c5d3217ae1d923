#include "odenet/tape.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "odenet/errors.hpp"
#include "odenet/linalg.hpp"

namespace odenet {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using MapM = Eigen::Map<RowMajor>;

MapC view(const Matrix& m) { return MapC(m.data(), m.rows(), m.cols()); }
MapM view(Matrix& m) { return MapM(m.data(), m.rows(), m.cols()); }

Matrix& accumulate_into(std::vector<Matrix>& grads, const Tape& tape, std::size_t id) {
  Matrix& g = grads[id];
  if (g.empty()) {
    const Matrix& v = tape.value(Var{id});
    g = Matrix(v.rows(), v.cols());
  }
  return g;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ContractError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
  }
}

}  // namespace

Gradients::Gradients(const Tape& tape, std::vector<Matrix> grads) : grads_(std::move(grads)) {
  zeros_.resize(grads_.size());
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (grads_[i].empty()) {
      const Matrix& v = tape.value(Var{i});
      zeros_[i] = Matrix(v.rows(), v.cols());
    }
  }
}

const Matrix& Gradients::wrt(Var v) const {
  if (v.id >= grads_.size()) throw ContractError("Gradients::wrt: variable not on tape");
  return grads_[v.id].empty() ? zeros_[v.id] : grads_[v.id];
}

Var Tape::push(Matrix value, bool requires_grad, Backprop backprop) {
  nodes_.push_back(Node{std::move(value), requires_grad, requires_grad ? std::move(backprop) : Backprop{}});
  return Var{nodes_.size() - 1};
}

bool Tape::any_requires_grad(std::initializer_list<Var> vars) const {
  for (Var v : vars)
    if (nodes_.at(v.id).requires_grad) return true;
  return false;
}

Var Tape::leaf(Matrix value) { return push(std::move(value), true, {}); }

Var Tape::constant(Matrix value) { return push(std::move(value), false, {}); }

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Matrix out = value(a) + value(b);
  return push(std::move(out), any_requires_grad({a, b}),
              [a, b](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
                const Matrix up = g[self];
                if (t.requires_grad(a)) accumulate_into(g, t, a.id) += up;
                if (t.requires_grad(b)) accumulate_into(g, t, b.id) += up;
              });
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Matrix out = value(a) - value(b);
  return push(std::move(out), any_requires_grad({a, b}),
              [a, b](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
                const Matrix up = g[self];
                if (t.requires_grad(a)) accumulate_into(g, t, a.id) += up;
                if (t.requires_grad(b)) accumulate_into(g, t, b.id) -= up;
              });
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  Matrix out(va.rows(), va.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  return push(std::move(out), any_requires_grad({a, b}),
              [a, b](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
                const Matrix& up = g[self];
                if (t.requires_grad(a)) {
                  Matrix& ga = accumulate_into(g, t, a.id);
                  const Matrix& vb = t.value(b);
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[self][i] * vb[i];
                }
                if (t.requires_grad(b)) {
                  Matrix& gb = accumulate_into(g, t, b.id);
                  const Matrix& va = t.value(a);
                  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[self][i] * va[i];
                }
                (void)up;
              });
}

Var Tape::scale(Var a, double c) {
  Matrix out = c * value(a);
  return push(std::move(out), requires_grad(a), [a, c](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
    Matrix& ga = accumulate_into(g, t, a.id);
    const Matrix& up = g[self];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * up[i];
  });
}

Var Tape::linear_combination(const std::vector<std::pair<double, Var>>& terms) {
  if (terms.empty()) throw ContractError("linear_combination: no terms");
  const Matrix& first = value(terms.front().second);
  Matrix out(first.rows(), first.cols());
  bool grad = false;
  for (const auto& [c, v] : terms) {
    const Matrix& x = value(v);
    require_same_shape(first, x, "linear_combination");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * x[i];
    grad = grad || requires_grad(v);
  }
  return push(std::move(out), grad, [terms](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
    for (const auto& [c, v] : terms) {
      if (!t.requires_grad(v)) continue;
      Matrix& gv = accumulate_into(g, t, v.id);
      const Matrix& up = g[self];
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += c * up[i];
    }
  });
}

Var Tape::matmul_nt(Var x, Var w) {
  const Matrix& vx = value(x);
  const Matrix& vw = value(w);
  if (vx.cols() != vw.cols()) throw ContractError("matmul_nt: inner dimensions differ");
  Matrix out(vx.rows(), vw.rows());
  view(out).noalias() = view(vx) * view(vw).transpose();
  return push(std::move(out), any_requires_grad({x, w}),
              [x, w](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
                const Matrix& up = g[self];
                if (t.requires_grad(x)) view(accumulate_into(g, t, x.id)).noalias() += view(up) * view(t.value(w));
                if (t.requires_grad(w))
                  view(accumulate_into(g, t, w.id)).noalias() += view(up).transpose() * view(t.value(x));
              });
}

Var Tape::add_row(Var x, Var row) {
  const Matrix& vx = value(x);
  const Matrix& vr = value(row);
  if (vr.rows() != 1 || vr.cols() != vx.cols()) throw ContractError("add_row: bias must be 1×cols");
  Matrix out = vx;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += vr(0, c);
  return push(std::move(out), any_requires_grad({x, row}),
              [x, row](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
                const Matrix& up = g[self];
                if (t.requires_grad(x)) accumulate_into(g, t, x.id) += up;
                if (t.requires_grad(row)) {
                  Matrix& gr = accumulate_into(g, t, row.id);
                  for (std::size_t r = 0; r < up.rows(); ++r)
                    for (std::size_t c = 0; c < up.cols(); ++c) gr(0, c) += up(r, c);
                }
              });
}

Var Tape::tanh(Var x) {
  Matrix out = value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return push(std::move(out), requires_grad(x), [x](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
    Matrix& gx = accumulate_into(g, t, x.id);
    const Matrix& y = t.value(Var{self});
    const Matrix& up = g[self];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += up[i] * (1.0 - y[i] * y[i]);
  });
}

Var Tape::one_minus_square(Var y) {
  Matrix out = value(y);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - out[i] * out[i];
  return push(std::move(out), requires_grad(y), [y](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
    Matrix& gy = accumulate_into(g, t, y.id);
    const Matrix& vy = t.value(y);
    const Matrix& up = g[self];
    for (std::size_t i = 0; i < gy.size(); ++i) gy[i] -= 2.0 * vy[i] * up[i];
  });
}

Var Tape::hcat(const std::vector<Var>& blocks) {
  if (blocks.empty()) throw ContractError("hcat: no blocks");
  const std::size_t rows = value(blocks.front()).rows();
  std::size_t cols = 0;
  bool grad = false;
  for (Var b : blocks) {
    if (value(b).rows() != rows) throw ContractError("hcat: row counts differ");
    cols += value(b).cols();
    grad = grad || requires_grad(b);
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (Var b : blocks) {
    const Matrix& v = value(b);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, offset + c) = v(r, c);
    offset += v.cols();
  }
  return push(std::move(out), grad, [blocks](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
    std::size_t offset = 0;
    for (Var b : blocks) {
      const std::size_t bc = t.value(b).cols();
      if (t.requires_grad(b)) {
        Matrix& gb = accumulate_into(g, t, b.id);
        const Matrix& up = g[self];
        for (std::size_t r = 0; r < gb.rows(); ++r)
          for (std::size_t c = 0; c < bc; ++c) gb(r, c) += up(r, offset + c);
      }
      offset += bc;
    }
  });
}

Var Tape::slice_cols(Var x, std::size_t start, std::size_t count) {
  const Matrix& v = value(x);
  if (start + count > v.cols()) throw ContractError("slice_cols: range exceeds column count");
  Matrix out(v.rows(), count);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = v(r, start + c);
  return push(std::move(out), requires_grad(x),
              [x, start, count](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
                Matrix& gx = accumulate_into(g, t, x.id);
                const Matrix& up = g[self];
                for (std::size_t r = 0; r < up.rows(); ++r)
                  for (std::size_t c = 0; c < count; ++c) gx(r, start + c) += up(r, c);
              });
}

Var Tape::sum_squares(Var x) {
  const Matrix& v = value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * v[i];
  return push(Matrix(1, 1, s), requires_grad(x), [x](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
    Matrix& gx = accumulate_into(g, t, x.id);
    const Matrix& v = t.value(x);
    const double up = g[self][0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * up * v[i];
  });
}

Var Tape::solve_linear(Var a, Var b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  const std::size_t batch = vb.rows();
  const std::size_t n = vb.cols();
  if (va.rows() != batch || va.cols() != n * n) throw ContractError("solve_linear: A must be B×n² for b of B×n");
  auto factors = std::make_shared<std::vector<LuFactorization<double>>>();
  factors->reserve(batch);
  Matrix out(batch, n);
  for (std::size_t r = 0; r < batch; ++r) {
    try {
      factors->emplace_back(va.row_span(r), n);
    } catch (const SingularMatrixError& e) {
      throw SingularMatrixError(e.pivot(), "batch row " + std::to_string(r));
    }
    const auto x = factors->back().solve(vb.row_span(r));
    for (std::size_t c = 0; c < n; ++c) out(r, c) = x[c];
  }
  return push(std::move(out), any_requires_grad({a, b}),
              [a, b, factors, n](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
                const Matrix& x = t.value(Var{self});
                const Matrix& up = g[self];
                Matrix* ga = t.requires_grad(a) ? &accumulate_into(g, t, a.id) : nullptr;
                Matrix* gb = t.requires_grad(b) ? &accumulate_into(g, t, b.id) : nullptr;
                for (std::size_t r = 0; r < x.rows(); ++r) {
                  const auto bbar = (*factors)[r].solve_transpose(up.row_span(r));
                  if (gb)
                    for (std::size_t c = 0; c < n; ++c) (*gb)(r, c) += bbar[c];
                  if (ga)
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < n; ++j) (*ga)(r, i * n + j) -= bbar[i] * x(r, j);
                }
              });
}

Var Tape::stage_newton_matrix(const std::vector<std::vector<Var>>& jac_columns, const Matrix& a, double h) {
  const std::size_t stages = jac_columns.size();
  if (a.rows() != stages || a.cols() != stages) throw ContractError("stage_newton_matrix: tableau size mismatch");
  if (stages == 0) throw ContractError("stage_newton_matrix: no stages");
  const std::size_t dim = jac_columns.front().size();
  const std::size_t batch = value(jac_columns.front().front()).rows();
  const std::size_t n = stages * dim;
  bool grad = false;
  for (const auto& cols : jac_columns) {
    if (cols.size() != dim) throw ContractError("stage_newton_matrix: ragged Jacobian columns");
    for (Var c : cols) {
      const Matrix& v = value(c);
      if (v.rows() != batch || v.cols() != dim) throw ContractError("stage_newton_matrix: column shape");
      grad = grad || requires_grad(c);
    }
  }
  Matrix out(batch, n * n);
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t i = 0; i < stages; ++i) {
      for (std::size_t j = 0; j < stages; ++j) {
        const double coeff = -h * a(i, j);
        for (std::size_t q = 0; q < dim; ++q) {
          const Matrix& col = value(jac_columns[j][q]);
          for (std::size_t p = 0; p < dim; ++p) {
            double entry = coeff * col(r, p);
            if (i == j && p == q) entry += 1.0;
            out(r, (i * dim + p) * n + (j * dim + q)) = entry;
          }
        }
      }
    }
  }
  return push(std::move(out), grad,
              [jac_columns, a, h, stages, dim, n](const Tape& t, std::size_t self, std::vector<Matrix>& g) {
                const Matrix& up = g[self];
                for (std::size_t j = 0; j < stages; ++j) {
                  for (std::size_t q = 0; q < dim; ++q) {
                    Var c = jac_columns[j][q];
                    if (!t.requires_grad(c)) continue;
                    Matrix& gc = accumulate_into(g, t, c.id);
                    for (std::size_t r = 0; r < up.rows(); ++r)
                      for (std::size_t i = 0; i < stages; ++i) {
                        const double coeff = -h * a(i, j);
                        if (coeff == 0.0) continue;
                        for (std::size_t p = 0; p < dim; ++p)
                          gc(r, p) += coeff * up(r, (i * dim + p) * n + (j * dim + q));
                      }
                  }
                }
              });
}

Gradients backward(const Tape& tape, Var output, const Matrix& seed) {
  if (output.id >= tape.size()) throw ContractError("backward: output node not on tape");
  if (!tape.value(output).same_shape(seed)) throw ContractError("backward: seed shape does not match output");
  std::vector<Matrix> grads(tape.size());
  grads[output.id] = seed;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    const auto& node = tape.nodes_[i];
    if (grads[i].empty() || !node.backprop) continue;
    node.backprop(tape, i, grads);
  }
  return Gradients(tape, std::move(grads));
}

Gradients backward(const Tape& tape, Var output) { return backward(tape, output, Matrix(1, 1, 1.0)); }

}  // namespace odenet
