#pragma once

// Experiment drivers shared by the command-line tool and the acceptance suite:
// JSON run configs, training with held-out evaluation, IMDE tables, Δt/s sweeps
// and paired adaptive-vs-fixed comparisons.

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "odenet/data.hpp"
#include "odenet/imde.hpp"
#include "odenet/metrics.hpp"
#include "odenet/model.hpp"
#include "odenet/systems.hpp"
#include "odenet/training.hpp"

namespace odenet {

using Json = nlohmann::json;

/// Global overrides from the command line.
struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool paper_scale = false;
  int threads = 1;
};

/// Throws ConfigError naming the first key of `j` not in `allowed`.
void require_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& context);

/// A built-in name or an inline {name, A, b, domain: {lo, hi}, dt} object.
BenchmarkSystem system_from_json(const Json& j);

struct DataSpec {
  /// Load from this CSV instead of generating.
  std::string path;
  std::size_t trajectories = 90;
  /// Trajectory length in time; defaults to the system's horizon.
  double horizon = 0.0;
  double dt = 0.0;
  /// Sub-episode length.
  std::size_t m = 1;
  /// Keep this many episodes (0 keeps all).
  std::size_t pairs = 0;
  std::string sampling = "uniform";
  double spread = 0.2;
};

struct TestSpec {
  std::size_t trajectories = 10;
  double dt = 0.01;
  /// Defaults to the system's horizon.
  double horizon = 0.0;
};

struct TrainSpec {
  BenchmarkSystem system;
  DataSpec data;
  TestSpec test;
  ModelKind model = ModelKind::mlp;
  std::size_t hidden = 32;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::string out;
};

/// Parses a train document; the scheme block defaults to the system's canonical scheme.
TrainSpec train_spec_from_json(const Json& j, const RunOptions& options);

/// Reference IMDE for metrics: the converged linear IMDE of the configured mode
/// for linear systems, the exact one-stage IMDE for implicit Euler and midpoint,
/// and the depth-4 defect-correction series otherwise.
FieldPtr imde_reference(const BenchmarkSystem& system, const ButcherTableau& tab, const StepMode& mode, double h);

struct TrainOutcome {
  TrainReport report;
  std::unique_ptr<ParamModel> model;
  ErrorReport errors;
  EpisodeDataset data;
};

/// Builds the training and held-out test sets (disjoint initial states from one
/// seeded draw), trains, and evaluates Error(f_θ, f) and Error(f_θ, f_h).
TrainOutcome run_training(const TrainSpec& spec);

/// Writes report.json, loss.csv, checkpoint.json and errors.csv under `dir`.
void write_training_outputs(const TrainOutcome& outcome, const std::string& dir);

struct ImdeRow {
  std::string system;
  std::string scheme;
  int k = 0;
  LinearImde imde;
};

/// Table of truncated (k ≥ 0) or converged (k < 0) linear IMDE coefficients
/// for each system in its canonical scheme unless `tab`/`mode` are given.
std::vector<ImdeRow> linear_imde_table(const std::vector<BenchmarkSystem>& systems, int k,
                                       const std::optional<ButcherTableau>& tab = {},
                                       const std::optional<StepMode>& mode = {});
void write_imde_csv(std::ostream& out, const std::vector<ImdeRow>& rows);

struct SweepPoint {
  double dt;
  int s;
  int replicate;
  std::uint64_t seed;
  double err_truth;
  double err_imde;
  double final_loss;
  int final_l;
  std::size_t evals;
  double seconds;

  double h() const { return dt / s; }
};

struct SweepSummary {
  double dt;
  int s;
  double err_truth_mean, err_truth_sd;
  double err_imde_mean, err_imde_sd;
  std::size_t replicates;
  double h() const { return dt / s; }
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<SweepSummary> summary;
  /// Log-log slope of mean Error(f_θ, f) against h (NaN with a single grid point).
  double slope_truth = 0.0;
  double slope_imde = 0.0;
};

/// Trains `base` once per (grid point, replicate) with seed = base seed + replicate.
/// Exactly one of dts / ss varies; the other stays at the base value.
SweepResult run_sweep(const TrainSpec& base, const std::vector<double>& dts, const std::vector<int>& ss,
                      int replicates, int threads);
SweepResult summarize_sweep(std::vector<SweepPoint> points);
void write_sweep_csv(std::ostream& out, const SweepResult& result);
void write_sweep_summary_csv(std::ostream& out, const SweepResult& result);

struct ComparePair {
  int replicate;
  std::uint64_t seed;
  SweepPoint fixed;
  SweepPoint adaptive;
};

struct CompareResult {
  std::vector<ComparePair> pairs;
  int fixed_l = 5;
  /// fixed evals / adaptive evals, and adaptive Error(f_θ, f_h) / fixed, per pair.
  std::vector<double> eval_ratios;
  std::vector<double> error_ratios;
};

/// Paired runs at equal seeds: fixed L versus adaptive iteration from adaptive.l_init.
CompareResult run_compare(const TrainSpec& base, int fixed_l, const AdaptiveConfig& adaptive, int replicates,
                          int threads);
void write_compare_csv(std::ostream& out, const CompareResult& result);
/// Markdown summary: mean ± sd per column; sd omitted for one replicate.
void write_compare_summary(std::ostream& out, const CompareResult& result);

/// Command entry points. Each returns a one-paragraph human summary.
std::string cmd_generate(const Json& config, const RunOptions& options);
std::string cmd_train(const Json& config, const RunOptions& options);
std::string cmd_imde(const Json& config, const RunOptions& options);
std::string cmd_sweep(const Json& config, const RunOptions& options);
std::string cmd_compare(const Json& config, const RunOptions& options);
/// Merges sweep.csv / compare.csv from run directories into report.csv and report.md.
std::string cmd_report(const std::vector<std::string>& run_dirs, const RunOptions& options);

}  // namespace odenet
