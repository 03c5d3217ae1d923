#pragma once

#include <atomic>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "odenet/dual.hpp"
#include "odenet/errors.hpp"
#include "odenet/matrix.hpp"

namespace odenet {

/// Autonomous vector field y ↦ f(y) on R^D, evaluable at doubles and at nested
/// duals up to depth kMaxDualDepth so directional derivatives come out exact.
class VectorField {
 public:
  virtual ~VectorField() = default;

  virtual std::size_t dim() const = 0;

  virtual void eval(std::span<const double> x, std::span<double> out) const = 0;
  virtual void eval(std::span<const D1> x, std::span<D1> out) const = 0;
  virtual void eval(std::span<const D2> x, std::span<D2> out) const = 0;
  virtual void eval(std::span<const D3> x, std::span<D3> out) const = 0;
  virtual void eval(std::span<const D4> x, std::span<D4> out) const = 0;
  virtual void eval(std::span<const D5> x, std::span<D5> out) const = 0;

  template <class T>
  std::vector<T> operator()(std::span<const T> x) const {
    std::vector<T> out(dim());
    eval(x, std::span<T>(out));
    return out;
  }
  std::vector<double> operator()(const std::vector<double>& x) const {
    return (*this)(std::span<const double>(x));
  }
};

using FieldPtr = std::shared_ptr<const VectorField>;

/// Implements every VectorField overload by forwarding to
/// `Derived::template apply<T>(x, out)`. `Base` lets richer interfaces that
/// extend VectorField reuse the dispatch.
template <class Derived, class Base = VectorField>
class FieldAdapter : public Base {
 public:
  void eval(std::span<const double> x, std::span<double> out) const override { dispatch(x, out); }
  void eval(std::span<const D1> x, std::span<D1> out) const override { dispatch(x, out); }
  void eval(std::span<const D2> x, std::span<D2> out) const override { dispatch(x, out); }
  void eval(std::span<const D3> x, std::span<D3> out) const override { dispatch(x, out); }
  void eval(std::span<const D4> x, std::span<D4> out) const override { dispatch(x, out); }
  void eval(std::span<const D5> x, std::span<D5> out) const override { dispatch(x, out); }

 private:
  template <class T>
  void dispatch(std::span<const T> x, std::span<T> out) const {
    const std::size_t n = this->dim();
    if (x.size() != n || out.size() != n) {
      throw ContractError("VectorField: expected dimension " + std::to_string(n) + ", got " +
                          std::to_string(x.size()));
    }
    static_cast<const Derived&>(*this).template apply<T>(x, out);
  }
};

/// Jacobian f′(x) (row-major D×D) at scalar type T, computed with one Dual<T>
/// pass per coordinate direction. Optionally returns f(x) as well.
template <class T>
std::vector<T> jacobian(const VectorField& f, std::span<const T> x, std::vector<T>* value = nullptr) {
  const std::size_t n = f.dim();
  std::vector<T> jac(n * n);
  if constexpr (dual_depth_v<T> < kMaxDualDepth) {
    using DT = Dual<T>;
    std::vector<DT> xd(n), fd(n);
    for (std::size_t i = 0; i < n; ++i) xd[i] = DT(x[i], T(0.0));
    for (std::size_t c = 0; c < n; ++c) {
      xd[c].d = T(1.0);
      f.eval(std::span<const DT>(xd), std::span<DT>(fd));
      xd[c].d = T(0.0);
      for (std::size_t r = 0; r < n; ++r) jac[r * n + c] = fd[r].d;
      if (value && c == 0) {
        value->resize(n);
        for (std::size_t r = 0; r < n; ++r) (*value)[r] = fd[r].v;
      }
    }
    if (value && n == 0) value->clear();
  } else {
    throw UnsupportedOrderError("jacobian: nesting depth exceeds supported maximum");
  }
  return jac;
}

/// Directional derivative f′(x)u at scalar type T.
template <class T>
std::vector<T> directional(const VectorField& f, std::span<const T> x, std::span<const T> u) {
  if constexpr (dual_depth_v<T> < kMaxDualDepth) {
    using DT = Dual<T>;
    const std::size_t n = f.dim();
    std::vector<DT> xd(n), fd(n);
    for (std::size_t i = 0; i < n; ++i) xd[i] = DT(x[i], u[i]);
    f.eval(std::span<const DT>(xd), std::span<DT>(fd));
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fd[i].d;
    return out;
  } else {
    throw UnsupportedOrderError("directional: nesting depth exceeds supported maximum");
  }
}

/// Second derivative contraction f″(x)(u, v) at scalar type T.
template <class T>
std::vector<T> second_directional(const VectorField& f, std::span<const T> x, std::span<const T> u,
                                  std::span<const T> v) {
  if constexpr (dual_depth_v<T> + 2 <= kMaxDualDepth) {
    using DT = Dual<T>;
    using DDT = Dual<DT>;
    const std::size_t n = f.dim();
    std::vector<DDT> xd(n), fd(n);
    for (std::size_t i = 0; i < n; ++i) xd[i] = DDT(DT(x[i], u[i]), DT(v[i], T(0.0)));
    f.eval(std::span<const DDT>(xd), std::span<DDT>(fd));
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fd[i].d.d;
    return out;
  } else {
    throw UnsupportedOrderError("second_directional: nesting depth exceeds supported maximum");
  }
}

/// Third derivative contraction f‴(x)(u, v, w) at scalar type T.
template <class T>
std::vector<T> third_directional(const VectorField& f, std::span<const T> x, std::span<const T> u,
                                 std::span<const T> v, std::span<const T> w) {
  if constexpr (dual_depth_v<T> + 3 <= kMaxDualDepth) {
    using DT = Dual<T>;
    using DDT = Dual<DT>;
    using DDDT = Dual<DDT>;
    const std::size_t n = f.dim();
    std::vector<DDDT> xd(n), fd(n);
    for (std::size_t i = 0; i < n; ++i) {
      xd[i] = DDDT(DDT(DT(x[i], u[i]), DT(v[i], T(0.0))), DDT(DT(w[i], T(0.0)), DT(T(0.0), T(0.0))));
    }
    f.eval(std::span<const DDDT>(xd), std::span<DDDT>(fd));
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fd[i].d.d.d;
    return out;
  } else {
    throw UnsupportedOrderError("third_directional: nesting depth exceeds supported maximum");
  }
}

/// k-th order symmetric derivative contraction for 1 ≤ k ≤ 3 directions.
std::vector<double> jvp(const VectorField& f, std::span<const double> x,
                        const std::vector<std::vector<double>>& directions);

/// f(y) = A y + b.
class AffineField : public FieldAdapter<AffineField> {
 public:
  AffineField(Matrix a, std::vector<double> b);
  explicit AffineField(Matrix a) : AffineField(a, std::vector<double>(a.rows(), 0.0)) {}

  std::size_t dim() const override { return a_.rows(); }
  const Matrix& matrix() const { return a_; }
  const std::vector<double>& offset() const { return b_; }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    const std::size_t n = a_.rows();
    for (std::size_t i = 0; i < n; ++i) {
      T s(b_[i]);
      for (std::size_t j = 0; j < n; ++j) s += a_(i, j) * x[j];
      out[i] = s;
    }
  }

 private:
  Matrix a_;
  std::vector<double> b_;
};

/// Wraps a field and counts evaluations (one per point, any scalar type).
/// The counter is owned by the caller.
class CountingField : public FieldAdapter<CountingField> {
 public:
  CountingField(const VectorField& inner, std::atomic<std::size_t>& counter)
      : inner_(inner), counter_(counter) {}
  std::size_t dim() const override { return inner_.dim(); }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    counter_.fetch_add(1, std::memory_order_relaxed);
    inner_.eval(x, out);
  }

 private:
  const VectorField& inner_;
  std::atomic<std::size_t>& counter_;
};

}  // namespace odenet
