#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "odenet/dual.hpp"
#include "odenet/errors.hpp"
#include "odenet/matrix.hpp"

namespace odenet {

/// Pivots with magnitude at or below this are declared singular.
inline constexpr double kPivotTolerance = 1e-12;

/// LU factorization with partial pivoting, generic over the scalar type so the
/// same elimination runs on nested duals. Pivoting decisions use primal values.
template <class T>
class LuFactorization {
 public:
  LuFactorization(std::span<const T> a, std::size_t n) : n_(n), lu_(a.begin(), a.end()), perm_(n) {
    if (a.size() != n * n) throw ContractError("LU: matrix storage is not n*n");
    for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t p = k;
      double best = std::abs(primal(lu_[k * n + k]));
      for (std::size_t r = k + 1; r < n; ++r) {
        const double m = std::abs(primal(lu_[r * n + k]));
        if (m > best) {
          best = m;
          p = r;
        }
      }
      if (!(best > kPivotTolerance)) throw SingularMatrixError(k);
      if (p != k) {
        for (std::size_t c = 0; c < n; ++c) std::swap(lu_[k * n + c], lu_[p * n + c]);
        std::swap(perm_[k], perm_[p]);
      }
      const T inv = 1.0 / lu_[k * n + k];
      for (std::size_t r = k + 1; r < n; ++r) {
        T factor = lu_[r * n + k] * inv;
        lu_[r * n + k] = factor;
        for (std::size_t c = k + 1; c < n; ++c) lu_[r * n + c] -= factor * lu_[k * n + c];
      }
    }
  }

  std::size_t dim() const noexcept { return n_; }

  /// Solves A x = b.
  std::vector<T> solve(std::span<const T> b) const {
    if (b.size() != n_) throw ContractError("LU solve: rhs length mismatch");
    std::vector<T> x(n_);
    for (std::size_t i = 0; i < n_; ++i) x[i] = b[perm_[i]];
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < i; ++j) x[i] -= lu_[i * n_ + j] * x[j];
    for (std::size_t i = n_; i-- > 0;) {
      for (std::size_t j = i + 1; j < n_; ++j) x[i] -= lu_[i * n_ + j] * x[j];
      x[i] = x[i] / lu_[i * n_ + i];
    }
    return x;
  }

  /// Solves Aᵀ x = b.
  std::vector<T> solve_transpose(std::span<const T> b) const {
    if (b.size() != n_) throw ContractError("LU solve_transpose: rhs length mismatch");
    // PA = LU  =>  Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ z = b, Lᵀ w = z, x = Pᵀ w.
    std::vector<T> z(b.begin(), b.end());
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = 0; j < i; ++j) z[i] -= lu_[j * n_ + i] * z[j];
      z[i] = z[i] / lu_[i * n_ + i];
    }
    for (std::size_t i = n_; i-- > 0;)
      for (std::size_t j = i + 1; j < n_; ++j) z[i] -= lu_[j * n_ + i] * z[j];
    std::vector<T> x(n_);
    for (std::size_t i = 0; i < n_; ++i) x[perm_[i]] = z[i];
    return x;
  }

 private:
  std::size_t n_;
  std::vector<T> lu_;
  std::vector<std::size_t> perm_;
};

/// Convenience wrapper: x = A⁻¹ b.
template <class T>
std::vector<T> lu_solve(std::span<const T> a, std::span<const T> b) {
  return LuFactorization<T>(a, b.size()).solve(b);
}

std::vector<double> solve(const Matrix& a, std::span<const double> b);
Matrix inverse(const Matrix& a);

/// e^{A t} by scaling and squaring with a truncated Taylor series.
Matrix matrix_exp(const Matrix& a, double t = 1.0);

/// Integer matrix power, p >= 0.
Matrix matrix_power(const Matrix& a, int p);

}  // namespace odenet
