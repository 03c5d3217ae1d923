#pragma once

// Built-in benchmark systems: five planar linear systems, the damped pendulum
// and the seven-species glycolytic oscillator.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "odenet/field.hpp"
#include "odenet/matrix.hpp"
#include "odenet/step.hpp"

namespace odenet {

/// Axis-aligned box lo ≤ x ≤ hi.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  std::size_t dim() const { return lo.size(); }
  bool contains(std::span<const double> x) const;
};

struct BenchmarkSystem {
  std::string name;
  FieldPtr field;
  Box domain;
  /// Canonical data step and trajectory horizon.
  double dt = 0.0;
  double horizon = 0.0;
  /// Scheme used for this system in the reference experiments.
  std::string tableau;
  StepMode mode;
  /// Set for linear systems f(y) = A y + b.
  std::optional<Matrix> a;
  std::vector<double> b;
  /// Reference initial condition, if the experiments name one.
  std::vector<double> x0;

  std::size_t dim() const { return field->dim(); }
  bool linear() const { return a.has_value(); }
};

/// dp/dt = −αp − β sin q, dq/dt = p.
class PendulumField : public FieldAdapter<PendulumField> {
 public:
  explicit PendulumField(double alpha = 0.2, double beta = 8.91) : alpha_(alpha), beta_(beta) {}
  std::size_t dim() const override { return 2; }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    using std::sin;
    out[0] = -alpha_ * x[0] - beta_ * sin(x[1]);
    out[1] = x[0];
  }

 private:
  double alpha_;
  double beta_;
};

struct GlycolysisParams {
  double j0, k1, k2, k3, k4, k5, k6, k, kappa, q, big_k1, psi, n, a;
};

enum class GlycolysisVariant { corrected, literal };

/// Seven-species yeast glycolysis model. The corrected variant drains
/// k₆S₂S₅ from S₂ (as in the S₅ equation); the literal variant drains k₆S₂ + 2S₅.
class GlycolysisField : public FieldAdapter<GlycolysisField> {
 public:
  GlycolysisField(GlycolysisParams p, GlycolysisVariant variant) : p_(p), variant_(variant) {}
  std::size_t dim() const override { return 7; }
  const GlycolysisParams& params() const { return p_; }

  template <class T>
  void apply(std::span<const T> s, std::span<T> out) const {
    const T ratio = s[5] / p_.big_k1;
    T hill(1.0);
    const int iq = static_cast<int>(p_.q);
    if (static_cast<double>(iq) == p_.q && iq >= 0) {
      for (int i = 0; i < iq; ++i) hill = hill * ratio;
    } else {
      using std::pow;
      hill = pow(ratio, p_.q);
    }
    const T v1 = p_.k1 * s[0] * s[5] / (1.0 + hill);
    const T v2 = p_.k2 * s[1] * (p_.n - s[4]);
    const T v3 = p_.k3 * s[2] * (p_.a - s[5]);
    const T v4 = p_.k4 * s[3] * s[4];
    const T v6 = p_.k6 * s[1] * s[4];
    const T leak = p_.kappa * (s[3] - s[6]);
    const T drain = variant_ == GlycolysisVariant::corrected ? v6 : p_.k6 * s[1] + 2.0 * s[4];
    out[0] = p_.j0 - v1;
    out[1] = 2.0 * v1 - v2 - drain;
    out[2] = v2 - v3;
    out[3] = v3 - v4 - leak;
    out[4] = v2 - v4 - v6;
    out[5] = -2.0 * v1 + 2.0 * v3 - p_.k5 * s[5];
    out[6] = p_.psi * leak - p_.k * s[6];
  }

 private:
  GlycolysisParams p_;
  GlycolysisVariant variant_;
};

/// Reads {parameters, x0} from a glycolysis JSON document. ConfigError on
/// missing or malformed entries.
GlycolysisParams glycolysis_params_from_json(const std::string& text, std::vector<double>* x0 = nullptr);

/// Directory holding bundled data files: $ODENET_DATA_DIR if set, else the
/// source tree's data/ directory.
std::string data_dir();

/// Names accepted by builtin().
std::vector<std::string> builtin_names();

/// saddle, center, improper_node, spiral, nodal_sink, nodal_sink_literal,
/// pendulum, glycolysis, glycolysis_literal. ConfigError for unknown names.
BenchmarkSystem builtin(const std::string& name);

/// A linear system from inline coefficients.
BenchmarkSystem linear_system(std::string name, Matrix a, std::vector<double> b, Box domain, double dt);

}  // namespace odenet
