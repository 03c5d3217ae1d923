#include "odenet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "odenet/errors.hpp"
#include "odenet/step.hpp"

namespace odenet {

namespace {

using nlohmann::json;

void check_finite(const Matrix& m, const std::string& what) {
  for (double v : m.values())
    if (!std::isfinite(v)) throw ContractError(what + " holds a non-finite value");
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\r')) --last;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) throw ParseError("not a number: '" + s + "'", line);
  return v;
}

std::size_t parse_index(const std::string& s, std::size_t line) {
  const double v = parse_double(s, line);
  if (v < 0 || v != std::floor(v)) throw ParseError("not a non-negative integer: '" + s + "'", line);
  return static_cast<std::size_t>(v);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

EpisodeDataset::EpisodeDataset(std::vector<Matrix> episodes, double dt, DatasetMeta meta)
    : episodes_(std::move(episodes)), dt_(dt), meta_(std::move(meta)) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ContractError("dataset: Δt must be positive and finite");
  if (episodes_.empty()) return;
  dim_ = episodes_.front().cols();
  if (episodes_.front().rows() < 2) throw ContractError("dataset: episodes need at least two states");
  steps_ = episodes_.front().rows() - 1;
  for (std::size_t n = 0; n < episodes_.size(); ++n) {
    if (!episodes_[n].same_shape(episodes_.front()))
      throw ContractError("dataset: episode " + std::to_string(n) + " differs in shape from episode 0");
    check_finite(episodes_[n], "dataset episode " + std::to_string(n));
  }
}

Matrix EpisodeDataset::states_at(std::size_t m) const {
  if (m > steps_) throw ContractError("dataset: step index beyond episode length");
  Matrix out(episodes_.size(), dim_);
  for (std::size_t n = 0; n < episodes_.size(); ++n)
    for (std::size_t d = 0; d < dim_; ++d) out(n, d) = episodes_[n](m, d);
  return out;
}

Matrix EpisodeDataset::all_states() const {
  Matrix out(episodes_.size() * (steps_ + 1), dim_);
  std::size_t r = 0;
  for (const auto& e : episodes_)
    for (std::size_t i = 0; i < e.rows(); ++i, ++r)
      for (std::size_t d = 0; d < dim_; ++d) out(r, d) = e(i, d);
  return out;
}

EpisodeDataset EpisodeDataset::subsample(std::size_t count, std::uint64_t seed) const {
  if (count >= episodes_.size()) return *this;
  std::vector<std::size_t> idx(episodes_.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  std::vector<Matrix> eps;
  for (std::size_t i : idx) eps.push_back(episodes_[i]);
  return EpisodeDataset(std::move(eps), dt_, meta_);
}

std::vector<std::vector<double>> sample_initials(const Sampling& sampling, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> out;
  switch (sampling.kind) {
    case Sampling::Kind::uniform_box: {
      const Box& box = sampling.box;
      if (box.lo.empty() || box.lo.size() != box.hi.size()) throw ConfigError("sampling box is malformed");
      for (std::size_t i = 0; i < box.dim(); ++i)
        if (!(box.lo[i] <= box.hi[i])) throw ConfigError("sampling box has lo > hi");
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> x(box.dim());
        for (std::size_t i = 0; i < box.dim(); ++i) x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * u(rng);
        out.push_back(std::move(x));
      }
      break;
    }
    case Sampling::Kind::listed:
      if (n > sampling.initials.size())
        throw ConfigError("listed sampling: requested " + std::to_string(n) + " initial states, " +
                          std::to_string(sampling.initials.size()) + " given");
      out.assign(sampling.initials.begin(), sampling.initials.begin() + static_cast<std::ptrdiff_t>(n));
      break;
    case Sampling::Kind::scaled: {
      if (sampling.center.empty()) throw ConfigError("scaled sampling needs a center state");
      std::uniform_real_distribution<double> u(-sampling.spread, sampling.spread);
      for (std::size_t k = 0; k < n; ++k) {
        const double delta = u(rng);
        std::vector<double> x(sampling.center);
        for (double& v : x) v *= 1.0 + delta;
        out.push_back(std::move(x));
      }
      break;
    }
  }
  return out;
}

std::vector<Matrix> generate_trajectories(const VectorField& f, const std::vector<std::vector<double>>& initials,
                                          std::size_t steps, double dt, int threads) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("data step Δt must be positive and finite");
  const std::size_t n = initials.size();
  const std::size_t dim = f.dim();
  std::vector<Matrix> out(n);
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t k) {
    try {
      if (initials[k].size() != dim) throw ConfigError("initial state " + std::to_string(k) + " has wrong dimension");
      Matrix traj(steps + 1, dim);
      std::vector<double> x = initials[k];
      for (std::size_t d = 0; d < dim; ++d) traj(0, d) = x[d];
      for (std::size_t s = 1; s <= steps; ++s) {
        x = rk4_flow<double>(f, std::span<const double>(x), dt, kReferenceSubsteps);
        for (std::size_t d = 0; d < dim; ++d) {
          if (!std::isfinite(x[d]))
            throw DivergenceError("trajectory " + std::to_string(k) + " became non-finite at step " +
                                  std::to_string(s));
          traj(s, d) = x[d];
        }
      }
      out[k] = std::move(traj);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), n));
  if (workers == 1) {
    for (std::size_t k = 0; k < n; ++k) run(k);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < n; k += workers) run(k);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

EpisodeDataset generate(const BenchmarkSystem& system, std::size_t n, std::size_t m, double dt,
                        const Sampling& sampling, std::uint64_t seed, int threads) {
  if (n < 1 || m < 1) throw ConfigError("generate: N and M must be >= 1");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("generate: Δt must be positive and finite");
  const auto initials = sample_initials(sampling, n, seed);
  auto trajectories = generate_trajectories(*system.field, initials, m, dt, threads);
  DatasetMeta meta;
  meta.system = system.name;
  meta.seed = seed;
  meta.domain = sampling.kind == Sampling::Kind::uniform_box ? sampling.box : system.domain;
  return EpisodeDataset(std::move(trajectories), dt, std::move(meta));
}

EpisodeDataset split_episodes(const std::vector<Matrix>& trajectories, std::size_t m, double dt, DatasetMeta meta) {
  if (m < 1) throw ConfigError("split_episodes: M must be >= 1");
  std::vector<Matrix> episodes;
  std::size_t dropped = 0;
  for (const auto& t : trajectories) {
    std::size_t start = 0;
    while (start + m < t.rows()) {
      Matrix e(m + 1, t.cols());
      for (std::size_t i = 0; i <= m; ++i)
        for (std::size_t d = 0; d < t.cols(); ++d) e(i, d) = t(start + i, d);
      episodes.push_back(std::move(e));
      start += m;
    }
    dropped += start == 0 ? t.rows() : t.rows() - (start + 1);
  }
  meta.dropped_states += dropped;
  if (episodes.empty())
    meta.warnings.push_back("split_episodes: no trajectory holds M+1 = " + std::to_string(m + 1) + " states");
  return EpisodeDataset(std::move(episodes), dt, std::move(meta));
}

std::string sidecar_path(const std::string& csv_path) {
  std::filesystem::path p(csv_path);
  p.replace_extension(".json");
  return p.string();
}

void save_dataset(const EpisodeDataset& data, const std::string& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw ConfigError("cannot write dataset '" + csv_path + "'");
  out << "episode_id,step_index";
  for (std::size_t d = 0; d < data.dim(); ++d) out << ",x" << (d + 1);
  out << '\n';
  for (std::size_t n = 0; n < data.size(); ++n) {
    const Matrix& e = data.episodes()[n];
    for (std::size_t i = 0; i < e.rows(); ++i) {
      out << n << ',' << i;
      for (std::size_t d = 0; d < e.cols(); ++d) out << ',' << format_double(e(i, d));
      out << '\n';
    }
  }
  const auto& m = data.meta();
  json j;
  j["dim"] = data.dim();
  j["dt"] = data.dt();
  j["episodes"] = data.size();
  j["steps"] = data.steps();
  j["system"] = m.system;
  j["seed"] = m.seed;
  j["domain"] = {{"lo", m.domain.lo}, {"hi", m.domain.hi}};
  j["generator"] = {{"tableau", m.generator}, {"fine_step", m.fine_step_fraction * data.dt()}};
  j["dropped_states"] = m.dropped_states;
  j["warnings"] = m.warnings;
  std::ofstream side(sidecar_path(csv_path));
  if (!side) throw ConfigError("cannot write dataset sidecar '" + sidecar_path(csv_path) + "'");
  side << j.dump(2) << '\n';
}

EpisodeDataset load_dataset(const std::string& csv_path) {
  const std::string side_path = sidecar_path(csv_path);
  std::ifstream side(side_path);
  if (!side) throw ConfigError("dataset sidecar '" + side_path + "' is missing");
  json j;
  try {
    side >> j;
  } catch (const json::exception& e) {
    throw ConfigError("dataset sidecar '" + side_path + "': " + e.what());
  }
  DatasetMeta meta;
  double dt = 0.0;
  std::size_t dim = 0;
  try {
    dt = j.at("dt").get<double>();
    dim = j.at("dim").get<std::size_t>();
    meta.system = j.value("system", std::string());
    meta.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("domain")) {
      meta.domain.lo = j["domain"].value("lo", std::vector<double>{});
      meta.domain.hi = j["domain"].value("hi", std::vector<double>{});
    }
    if (j.contains("generator")) {
      meta.generator = j["generator"].value("tableau", std::string("rk4"));
      if (j["generator"].contains("fine_step") && dt > 0.0)
        meta.fine_step_fraction = j["generator"]["fine_step"].get<double>() / dt;
    }
    meta.dropped_states = j.value("dropped_states", std::size_t{0});
    meta.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw ConfigError("dataset sidecar '" + side_path + "': " + e.what());
  }

  std::ifstream in(csv_path);
  if (!in) throw ConfigError("cannot read dataset '" + csv_path + "'");
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", lineno);
  const auto header = split_csv(line);
  if (header.size() != dim + 2 || header[0] != "episode_id" || header[1] != "step_index")
    throw ParseError("header must be episode_id,step_index,x1..x" + std::to_string(dim), lineno);

  std::vector<Matrix> episodes;
  std::vector<std::vector<double>> rows;
  std::size_t current = 0;
  auto flush = [&](std::size_t at_line) {
    if (rows.empty()) return;
    if (!episodes.empty() && rows.size() != episodes.front().rows())
      throw ParseError("episode " + std::to_string(current) + " has " + std::to_string(rows.size()) +
                           " states, expected " + std::to_string(episodes.front().rows()),
                       at_line);
    Matrix e(rows.size(), dim);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t d = 0; d < dim; ++d) e(i, d) = rows[i][d];
    episodes.push_back(std::move(e));
    rows.clear();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != dim + 2)
      throw ParseError("expected " + std::to_string(dim + 2) + " columns, got " + std::to_string(cells.size()),
                       lineno);
    const std::size_t ep = parse_index(cells[0], lineno);
    const std::size_t step = parse_index(cells[1], lineno);
    if (ep != current) {
      if (ep != current + 1 || rows.empty()) throw ParseError("episode ids must be consecutive from 0", lineno);
      flush(lineno);
      current = ep;
    }
    if (step != rows.size()) throw ParseError("step indices must be consecutive from 0", lineno);
    std::vector<double> x(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      x[d] = parse_double(cells[d + 2], lineno);
      if (!std::isfinite(x[d])) throw ParseError("non-finite state value", lineno);
    }
    rows.push_back(std::move(x));
  }
  flush(lineno);
  for (const auto& e : episodes)
    if (e.rows() < 2) throw ParseError("episodes need at least two states", lineno);
  return EpisodeDataset(std::move(episodes), dt, std::move(meta));
}

}  // namespace odenet
