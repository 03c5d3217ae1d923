#pragma once

// Parametric vector fields f_θ. Each model is usable two ways: as a generic
// VectorField (pointwise, any dual depth; used by oracles and metrics) and
// bound to a Tape (batched rows, differentiable in θ; used by training).

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "odenet/field.hpp"
#include "odenet/matrix.hpp"
#include "odenet/tape.hpp"

namespace odenet {

enum class ModelKind { affine, mlp };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// A model's parameters placed on a tape.
class TapeModel {
 public:
  struct Eval {
    Var out;
    std::vector<Var> cache;
  };

  virtual ~TapeModel() = default;

  /// Batched f_θ(X) for X of shape B×D. With `for_jvp`, also records what jvp needs.
  virtual Eval forward(Tape& tape, Var x, bool for_jvp) const = 0;
  /// Batched f′_θ(X)·U, row by row, at the point of a forward(…, true) result.
  virtual Var jvp(Tape& tape, const Eval& at, Var u) const = 0;
  /// Parameter nodes in params_flat order.
  virtual const std::vector<Var>& params() const = 0;

  /// Gradient of a backward pass flattened in params_flat order.
  std::vector<double> flat_gradient(const Gradients& grads) const;
};

class ParamModel : public VectorField {
 public:
  virtual ModelKind kind() const = 0;
  /// Hidden width; 0 for the affine model.
  virtual std::size_t hidden() const = 0;
  virtual std::size_t param_count() const = 0;
  virtual std::vector<double> params_flat() const = 0;
  /// Throws ContractError on a length mismatch.
  virtual void load_flat(std::span<const double> theta) = 0;
  virtual std::unique_ptr<ParamModel> clone() const = 0;
  /// Places the parameters on `tape`, as leaves when `trainable`, else as constants.
  virtual std::unique_ptr<TapeModel> bind(Tape& tape, bool trainable) const = 0;

  std::uint64_t seed() const noexcept { return seed_; }
  void set_seed(std::uint64_t seed) noexcept { seed_ = seed; }

 private:
  std::uint64_t seed_ = 0;
};

/// f_θ(x) = W x + b with D² + D parameters (W row-major, then b).
class AffineModel : public FieldAdapter<AffineModel, ParamModel> {
 public:
  explicit AffineModel(std::size_t dim);
  AffineModel(Matrix w, std::vector<double> b);

  std::size_t dim() const override { return w_.rows(); }
  ModelKind kind() const override { return ModelKind::affine; }
  std::size_t hidden() const override { return 0; }
  std::size_t param_count() const override { return w_.size() + b_.size(); }
  std::vector<double> params_flat() const override;
  void load_flat(std::span<const double> theta) override;
  std::unique_ptr<ParamModel> clone() const override { return std::make_unique<AffineModel>(*this); }
  std::unique_ptr<TapeModel> bind(Tape& tape, bool trainable) const override;

  const Matrix& weight() const { return w_; }
  const std::vector<double>& bias() const { return b_; }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    const std::size_t n = w_.rows();
    for (std::size_t i = 0; i < n; ++i) {
      T s(b_[i]);
      for (std::size_t j = 0; j < n; ++j) s += w_(i, j) * x[j];
      out[i] = s;
    }
  }

 private:
  Matrix w_;
  std::vector<double> b_;
};

/// f_θ(x) = W₃ tanh(W₂ tanh(W₁x + b₁) + b₂) + b₃.
/// Flat order: W₁ (H×D), b₁, W₂ (H×H), b₂, W₃ (D×H), b₃, matrices row-major.
class MlpModel : public FieldAdapter<MlpModel, ParamModel> {
 public:
  MlpModel(std::size_t dim, std::size_t hidden);

  std::size_t dim() const override { return dim_; }
  ModelKind kind() const override { return ModelKind::mlp; }
  std::size_t hidden() const override { return hidden_; }
  std::size_t param_count() const override;
  std::vector<double> params_flat() const override;
  void load_flat(std::span<const double> theta) override;
  std::unique_ptr<ParamModel> clone() const override { return std::make_unique<MlpModel>(*this); }
  std::unique_ptr<TapeModel> bind(Tape& tape, bool trainable) const override;

  const Matrix& w1() const { return w1_; }
  const Matrix& w2() const { return w2_; }
  const Matrix& w3() const { return w3_; }
  const Matrix& b1() const { return b1_; }
  const Matrix& b2() const { return b2_; }
  const Matrix& b3() const { return b3_; }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    using std::tanh;
    std::vector<T> a1(hidden_), a2(hidden_);
    for (std::size_t i = 0; i < hidden_; ++i) {
      T s(b1_[i]);
      for (std::size_t j = 0; j < dim_; ++j) s += w1_(i, j) * x[j];
      a1[i] = tanh(s);
    }
    for (std::size_t i = 0; i < hidden_; ++i) {
      T s(b2_[i]);
      for (std::size_t j = 0; j < hidden_; ++j) s += w2_(i, j) * a1[j];
      a2[i] = tanh(s);
    }
    for (std::size_t i = 0; i < dim_; ++i) {
      T s(b3_[i]);
      for (std::size_t j = 0; j < hidden_; ++j) s += w3_(i, j) * a2[j];
      out[i] = s;
    }
  }

 private:
  std::size_t dim_;
  std::size_t hidden_;
  Matrix w1_, b1_, w2_, b2_, w3_, b3_;
};

/// Glorot-uniform weights, zero biases; deterministic per seed. `hidden` is
/// ignored for the affine kind and must be positive for the MLP.
std::unique_ptr<ParamModel> init_params(ModelKind kind, std::size_t dim, std::size_t hidden, std::uint64_t seed);

/// Checkpoint JSON: {kind, D, H, seed, params}.
std::string checkpoint_json(const ParamModel& model);
std::unique_ptr<ParamModel> model_from_checkpoint_json(const std::string& text);
void save_checkpoint(const ParamModel& model, const std::string& path);
std::unique_ptr<ParamModel> load_checkpoint(const std::string& path);

}  // namespace odenet
