#include "odenet/field.hpp"

namespace odenet {

std::vector<double> jvp(const VectorField& f, std::span<const double> x,
                        const std::vector<std::vector<double>>& directions) {
  const std::size_t n = f.dim();
  if (x.size() != n) throw ContractError("jvp: point has wrong dimension");
  for (const auto& d : directions)
    if (d.size() != n) throw ContractError("jvp: direction has wrong dimension");
  switch (directions.size()) {
    case 1:
      return directional<double>(f, x, directions[0]);
    case 2:
      return second_directional<double>(f, x, directions[0], directions[1]);
    case 3:
      return third_directional<double>(f, x, directions[0], directions[1], directions[2]);
    default:
      throw UnsupportedOrderError("jvp: between 1 and 3 directions supported, got " +
                                  std::to_string(directions.size()));
  }
}

AffineField::AffineField(Matrix a, std::vector<double> b) : a_(std::move(a)), b_(std::move(b)) {
  if (a_.rows() != a_.cols()) throw ContractError("AffineField: matrix is not square");
  if (b_.size() != a_.rows()) throw ContractError("AffineField: offset length mismatch");
}

}  // namespace odenet
