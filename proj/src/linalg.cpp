#include "odenet/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace odenet {

std::vector<double> solve(const Matrix& a, std::span<const double> b) {
  if (a.rows() != a.cols()) throw ContractError("solve: matrix is not square");
  return lu_solve<double>(a.values(), b);
}

Matrix inverse(const Matrix& a) {
  if (a.rows() != a.cols()) throw ContractError("inverse: matrix is not square");
  const std::size_t n = a.rows();
  LuFactorization<double> lu(a.values(), n);
  Matrix inv(n, n);
  std::vector<double> e(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    std::fill(e.begin(), e.end(), 0.0);
    e[c] = 1.0;
    const auto col = lu.solve(e);
    for (std::size_t r = 0; r < n; ++r) inv(r, c) = col[r];
  }
  return inv;
}

Matrix matrix_exp(const Matrix& a, double t) {
  if (a.rows() != a.cols()) throw ContractError("matrix_exp: matrix is not square");
  if (a.rows() > 16) throw ContractError("matrix_exp: dimension above 16");
  const std::size_t n = a.rows();
  Matrix at = t * a;
  const double norm = norm_inf(at);
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  at *= std::ldexp(1.0, -squarings);

  // ‖at‖ ≤ 1/2 so 24 terms leave a remainder far below double epsilon.
  Matrix result = Matrix::identity(n);
  Matrix term = Matrix::identity(n);
  for (int k = 1; k <= 24; ++k) {
    term = matmul(term, at);
    term *= 1.0 / k;
    result += term;
    if (max_abs(term) < 1e-18 * max_abs(result)) break;
  }
  for (int i = 0; i < squarings; ++i) result = matmul(result, result);
  return result;
}

Matrix matrix_power(const Matrix& a, int p) {
  if (a.rows() != a.cols()) throw ContractError("matrix_power: matrix is not square");
  if (p < 0) throw ContractError("matrix_power: negative exponent");
  Matrix r = Matrix::identity(a.rows());
  for (int i = 0; i < p; ++i) r = matmul(r, a);
  return r;
}

}  // namespace odenet
