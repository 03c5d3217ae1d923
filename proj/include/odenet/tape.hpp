#pragma once

// Reverse-mode tape over dense matrices.
//
// Values are batched: a state batch is a B×D matrix with one point per row, so a
// whole dataset flows through each primitive at once. Every primitive records
// a closure that pushes its output gradient onto its inputs; the backward pass
// walks the tape once in reverse. Nodes are appended in evaluation order, so
// inputs always precede their consumers.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

#include "odenet/matrix.hpp"

namespace odenet {

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  friend bool operator==(Var, Var) = default;
};

class Tape;

/// Output of a backward pass: one gradient per tape node, zero where unused.
class Gradients {
 public:
  Gradients(const Tape& tape, std::vector<Matrix> grads);
  /// Gradient with respect to `v`; a zero matrix of v's shape if v did not
  /// influence the output.
  const Matrix& wrt(Var v) const;

 private:
  std::vector<Matrix> grads_;
  std::vector<Matrix> zeros_;
};

class Tape {
 public:
  using Backprop = std::function<void(const Tape&, std::size_t self, std::vector<Matrix>& grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Differentiable input (model parameter, or a tracked input state).
  Var leaf(Matrix value);
  /// Non-differentiable input (data).
  Var constant(Matrix value);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// Elementwise product.
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  /// Σ c_k x_k over same-shaped inputs.
  Var linear_combination(const std::vector<std::pair<double, Var>>& terms);
  /// x Wᵀ for x: B×K and W: M×K.
  Var matmul_nt(Var x, Var w);
  /// Adds a 1×M row to every row of a B×M matrix.
  Var add_row(Var x, Var row);
  Var tanh(Var x);
  /// 1 − y² elementwise (the tanh derivative expressed through tanh's output).
  Var one_minus_square(Var y);
  /// Horizontal concatenation of blocks with equal row counts.
  Var hcat(const std::vector<Var>& blocks);
  Var slice_cols(Var x, std::size_t start, std::size_t count);
  /// Σ of squared entries, as a 1×1 node.
  Var sum_squares(Var x);
  /// Row-wise linear solve: row r of `a` holds an n×n matrix (row-major), row r
  /// of `b` an n-vector; returns the B×n matrix of solutions. The reverse pass
  /// uses the adjoint rule b̄ = A⁻ᵀ x̄, Ā = −b̄ xᵀ instead of taping elimination.
  Var solve_linear(Var a, Var b);
  /// Row-wise assembly of the Runge–Kutta Newton matrix
  /// δ_ij·I − h a_ij J_j, where jac_columns[j][q] is the B×D node whose row r
  /// holds column q of stage j's Jacobian at point r.
  Var stage_newton_matrix(const std::vector<std::vector<Var>>& jac_columns, const Matrix& a, double h);

 private:
  struct Node {
    Matrix value;
    bool requires_grad = false;
    Backprop backprop;
  };

  Var push(Matrix value, bool requires_grad, Backprop backprop);
  bool any_requires_grad(std::initializer_list<Var> vars) const;

  std::vector<Node> nodes_;

  friend Gradients backward(const Tape& tape, Var output, const Matrix& seed);
};

/// Reverse pass from `output` seeded with `seed` (same shape as output).
Gradients backward(const Tape& tape, Var output, const Matrix& seed);
/// Scalar convenience: seed 1 on a 1×1 output.
Gradients backward(const Tape& tape, Var output);

}  // namespace odenet
