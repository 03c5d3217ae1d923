#pragma once

// Trajectory data: reference generation, episode splitting and CSV persistence.

#include <cstdint>
#include <string>
#include <vector>

#include "odenet/field.hpp"
#include "odenet/matrix.hpp"
#include "odenet/systems.hpp"

namespace odenet {

struct Sampling {
  enum class Kind { uniform_box, listed, scaled };
  Kind kind = Kind::uniform_box;
  Box box;
  /// listed: initial states used in order (N must not exceed the list).
  std::vector<std::vector<double>> initials;
  /// scaled: (1 + δ)·center with δ ~ U[−spread, spread], one δ per trajectory.
  std::vector<double> center;
  double spread = 0.2;

  static Sampling uniform(Box box) { return {Kind::uniform_box, std::move(box), {}, {}, 0.2}; }
  static Sampling listed(std::vector<std::vector<double>> xs) { return {Kind::listed, {}, std::move(xs), {}, 0.2}; }
  static Sampling scaled(std::vector<double> center, double spread) {
    return {Kind::scaled, {}, {}, std::move(center), spread};
  }
};

struct DatasetMeta {
  std::string system;
  std::uint64_t seed = 0;
  Box domain;
  /// Generator: RK4 with fine_step = fine_step_fraction · Δt.
  std::string generator = "rk4";
  double fine_step_fraction = 0.01;
  /// States discarded by split_episodes because the tail was shorter than M+1.
  std::size_t dropped_states = 0;
  std::vector<std::string> warnings;
};

/// N episodes of M+1 uniformly spaced states each.
class EpisodeDataset {
 public:
  EpisodeDataset() = default;
  /// Throws ContractError if episodes differ in shape or hold non-finite values.
  EpisodeDataset(std::vector<Matrix> episodes, double dt, DatasetMeta meta = {});

  std::size_t size() const { return episodes_.size(); }
  bool empty() const { return episodes_.empty(); }
  std::size_t dim() const { return dim_; }
  /// M: steps per episode.
  std::size_t steps() const { return steps_; }
  double dt() const { return dt_; }
  const std::vector<Matrix>& episodes() const { return episodes_; }
  const DatasetMeta& meta() const { return meta_; }
  DatasetMeta& meta() { return meta_; }

  /// State m of every episode as an N×D batch.
  Matrix states_at(std::size_t m) const;
  /// Every state of every episode as rows.
  Matrix all_states() const;
  /// Deterministic subset of `count` episodes (all if count ≥ size()).
  EpisodeDataset subsample(std::size_t count, std::uint64_t seed) const;

 private:
  std::vector<Matrix> episodes_;
  double dt_ = 0.0;
  std::size_t dim_ = 0;
  std::size_t steps_ = 0;
  DatasetMeta meta_;
};

/// N initial states, deterministic per seed.
std::vector<std::vector<double>> sample_initials(const Sampling& sampling, std::size_t n, std::uint64_t seed);

/// Reference trajectories of `steps`+1 states at spacing dt, each step made of
/// 100 RK4 sub-steps. Runs on up to `threads` workers. DivergenceError names
/// the trajectory that left the finite range.
std::vector<Matrix> generate_trajectories(const VectorField& f, const std::vector<std::vector<double>>& initials,
                                          std::size_t steps, double dt, int threads = 1);

/// N episodes of M steps from sampled initial states.
EpisodeDataset generate(const BenchmarkSystem& system, std::size_t n, std::size_t m, double dt,
                        const Sampling& sampling, std::uint64_t seed, int threads = 1);

/// Consecutive non-overlapping windows of M+1 states; a shorter tail is dropped
/// and counted in meta().dropped_states.
EpisodeDataset split_episodes(const std::vector<Matrix>& trajectories, std::size_t m, double dt,
                              DatasetMeta meta = {});

/// CSV rows (episode_id, step_index, x1..xD) at full precision, with metadata
/// in a JSON sidecar next to it (same stem, .json).
void save_dataset(const EpisodeDataset& data, const std::string& csv_path);
/// ParseError (with line number) on malformed CSV, ConfigError on a missing
/// or malformed sidecar.
EpisodeDataset load_dataset(const std::string& csv_path);

std::string sidecar_path(const std::string& csv_path);

}  // namespace odenet
