#pragma once

// Unrolled training loss, the δ-gap monitor, Adam, learning-rate schedules and
// the adaptive-iteration training loop.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "odenet/data.hpp"
#include "odenet/model.hpp"
#include "odenet/step.hpp"
#include "odenet/tableau.hpp"
#include "odenet/tape.hpp"
#include "odenet/tape_step.hpp"

namespace odenet {

struct LossConfig {
  /// Steps per episode used in the loss; 0 means all of the dataset's steps.
  std::size_t m = 0;
  /// Compositions per data step, h = Δt/s.
  int s = 1;
  ButcherTableau tableau = implicit_euler();
  StepMode mode = StepMode::fixed_point(0);
};

/// Loss value and, when requested, its gradient in params_flat order.
struct LossEval {
  double value = 0.0;
  std::vector<double> gradient;
};

/// (1/(D·N·M)) Σ_n Σ_{m=1}^{M} ‖(Φ_h)^{ms}(x_n) − x_n(mΔt)‖² / (mΔt)², recorded on
/// `integ`'s tape (bound to `model`). DivergenceError names the episode and horizon m.
Var unrolled_loss(TapeIntegrator& integ, const ParamModel& model, const EpisodeDataset& data,
                  const LossConfig& config);

/// Evaluates unrolled_loss on a fresh tape, with the gradient when `with_gradient`.
/// `evals` accumulates per-point field passes.
LossEval evaluate_loss(const ParamModel& model, const EpisodeDataset& data, const LossConfig& config,
                       bool with_gradient, std::size_t* evals = nullptr);

/// Σ_n Σ_m ‖(Φ_a)^{ms}(x_n) − (Φ_b)^{ms}(x_n)‖² / (mΔt)² between two step modes,
/// without the 1/(D·N·M) factor.
double rollout_gap_raw(const ParamModel& model, const EpisodeDataset& data, const LossConfig& config,
                       const StepMode& a, const StepMode& b, std::size_t* evals = nullptr);

/// δ between L and L+1 iterations of config.mode, normalized like the loss.
double delta_gap(const ParamModel& model, const EpisodeDataset& data, const LossConfig& config,
                 std::size_t* evals = nullptr);

class Adam {
 public:
  explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Bias-corrected Adam update in place. DivergenceError on a non-finite gradient.
  void step(std::vector<double>& params, std::span<const double> grads, double lr);

  std::size_t steps() const { return t_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

struct LrSchedule {
  enum class Kind { constant, exp_decay };
  Kind kind = Kind::constant;
  double start = 1e-2;
  /// Final rate for exp_decay.
  double end = 1e-4;
};

/// constant: start. exp_decay: start·(end/start)^(epoch/total), so 10^(−2−2·epoch/total) by default.
double lr_at(const LrSchedule& schedule, std::size_t epoch, std::size_t total);

std::string to_string(LrSchedule::Kind kind);
LrSchedule::Kind parse_lr_kind(const std::string& name);

struct AdaptiveConfig {
  double c = 1.0;
  std::size_t check_every = 10;
  int l_init = 0;
  /// 20 for fixed point, 8 for Newton if left negative.
  int l_max = -1;

  int cap(IterationKind kind) const { return l_max >= 0 ? l_max : (kind == IterationKind::newton ? 8 : 20); }
};

struct TrainConfig {
  LossConfig loss;
  /// Absent: fixed L = loss.mode.iterations throughout.
  std::optional<AdaptiveConfig> adaptive;
  LrSchedule lr;
  std::size_t epochs = 1000;
  std::uint64_t seed = 0;
  /// Record the loss every `log_every` epochs in the report (the first and last are always kept).
  std::size_t log_every = 1;
};

struct TrainReport {
  struct Row {
    std::size_t epoch;
    double loss;
    std::optional<double> delta;
    int l;
    std::size_t evals;
    double seconds;
  };
  std::vector<Row> rows;
  /// (epoch, L) at every change, starting with epoch 0.
  std::vector<std::pair<std::size_t, int>> l_schedule;
  std::vector<std::pair<std::size_t, double>> deltas;
  std::size_t evals = 0;
  double seconds = 0.0;
  double final_loss = 0.0;
  int final_l = 0;
  bool l_max_reached = false;
  std::uint64_t seed = 0;
  std::string checkpoint;
};

/// Algorithm: per epoch, loss and gradient at the current parameters, one Adam
/// update; with an adaptive block, every check_every epochs δ is evaluated at the
/// updated parameters and L ← min(L+1, L_max) when loss < c·δ.
TrainReport train(ParamModel& model, const EpisodeDataset& data, const TrainConfig& config);

std::string report_json(const TrainReport& report);
/// Columns: epoch, loss, delta, L, eval_count, seconds.
void write_loss_csv(std::ostream& out, const TrainReport& report);

}  // namespace odenet
