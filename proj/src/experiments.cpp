#include "odenet/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "odenet/errors.hpp"
#include "odenet/stats.hpp"

namespace odenet {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kLinearEpochs = 10000;
constexpr std::size_t kDeskEpochs = 20000;
constexpr std::size_t kPaperEpochs = 100000;
constexpr std::size_t kDeskHidden = 32;
constexpr std::size_t kPaperHidden = 128;

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& context) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(context + ": '" + key + "' has the wrong type");
  }
}

const Json& object_at(const Json& j, const char* key, const std::string& context) {
  static const Json empty = Json::object();
  if (!j.contains(key)) return empty;
  if (!j[key].is_object()) throw ConfigError(context + ": '" + key + "' must be an object");
  return j[key];
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string out_dir(const Json& config, const RunOptions& options, const std::string& fallback) {
  std::string dir = options.out ? *options.out : get_or<std::string>(config, "out", fallback, "config");
  fs::create_directories(dir);
  return dir;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

std::vector<double> parse_vector(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array of numbers");
  std::vector<double> v;
  for (const auto& x : j) {
    if (!x.is_number()) throw ConfigError(what + " must be an array of numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

Matrix parse_matrix(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError(what + " must be a non-empty array of rows");
  std::vector<std::vector<double>> rows;
  for (const auto& r : j) rows.push_back(parse_vector(r, what));
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols()) throw ConfigError(what + " is ragged");
    for (std::size_t k = 0; k < m.cols(); ++k) m(i, k) = rows[i][k];
  }
  return m;
}

bool one_stage_theta(const ButcherTableau& tab) {
  return tab.stages() == 1 && tab.b[0] == 1.0 && tab.a(0, 0) > 0.0;
}

StepMode parse_mode(const std::string& kind, int l) {
  switch (parse_iteration_kind(kind)) {
    case IterationKind::fixed_point:
      return StepMode::fixed_point(l);
    case IterationKind::newton:
      return StepMode::newton(l);
    case IterationKind::exact:
      break;
  }
  return StepMode::exact();
}

/// Runs tasks 0..n-1 on up to `threads` workers; the first exception is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& task) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// (a(x) − b(x))·scale.
class ScaledDifference : public FieldAdapter<ScaledDifference> {
 public:
  ScaledDifference(FieldPtr a, FieldPtr b, double scale) : a_(std::move(a)), b_(std::move(b)), scale_(scale) {}
  std::size_t dim() const override { return a_->dim(); }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    std::vector<T> tmp(x.size());
    a_->eval(x, out);
    b_->eval(x, std::span<T>(tmp));
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (out[i] - tmp[i]) * scale_;
  }

 private:
  FieldPtr a_, b_;
  double scale_;
};

SweepPoint point_from(const TrainOutcome& o, double dt, int s, int replicate, std::uint64_t seed) {
  return {dt,
          s,
          replicate,
          seed,
          o.errors.error_vs_truth,
          o.errors.error_vs_imde.value_or(std::numeric_limits<double>::quiet_NaN()),
          o.report.final_loss,
          o.report.final_l,
          o.report.evals,
          o.report.seconds};
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::string mean_sd(std::span<const double> v) {
  if (v.size() < 2) return fmt(mean(v));
  return fmt(mean(v)) + " ± " + fmt(stddev(v));
}

}  // namespace

void require_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(context + ": unknown key '" + key + "'");
  }
}

BenchmarkSystem system_from_json(const Json& j) {
  if (j.is_string()) return builtin(j.get<std::string>());
  require_keys(j, {"name", "A", "b", "domain", "dt"}, "system");
  if (!j.contains("A") || !j.contains("b") || !j.contains("domain"))
    throw ConfigError("inline system needs A, b and domain");
  const Json& dom = j["domain"];
  require_keys(dom, {"lo", "hi"}, "system.domain");
  if (!dom.contains("lo") || !dom.contains("hi")) throw ConfigError("system.domain needs lo and hi");
  return linear_system(get_or<std::string>(j, "name", "inline", "system"), parse_matrix(j["A"], "system.A"),
                       parse_vector(j["b"], "system.b"),
                       {parse_vector(dom["lo"], "system.domain.lo"), parse_vector(dom["hi"], "system.domain.hi")},
                       get_or<double>(j, "dt", 0.1, "system"));
}

TrainSpec train_spec_from_json(const Json& j, const RunOptions& options) {
  require_keys(j,
               {"system", "data", "test", "model", "scheme", "adaptive", "epochs", "lr", "log_every", "seed", "out",
                "grid", "replicates", "fixed_L"},
               "config");
  if (!j.contains("system")) throw ConfigError("config: 'system' is required");
  TrainSpec spec;
  spec.system = system_from_json(j["system"]);
  spec.seed = options.seed ? *options.seed : get_or<std::uint64_t>(j, "seed", 0, "config");
  spec.out = get_or<std::string>(j, "out", "", "config");

  const Json& data = object_at(j, "data", "config");
  require_keys(data, {"path", "trajectories", "horizon", "dt", "M", "pairs", "sampling", "spread"}, "data");
  spec.data.path = get_or<std::string>(data, "path", "", "data");
  spec.data.trajectories = get_or<std::size_t>(data, "trajectories", spec.system.linear() ? 100 : 90, "data");
  spec.data.dt = get_or<double>(data, "dt", spec.system.dt, "data");
  spec.data.horizon = get_or<double>(data, "horizon", spec.system.linear() ? spec.data.dt : spec.system.horizon, "data");
  spec.data.m = get_or<std::size_t>(data, "M", 1, "data");
  spec.data.pairs = get_or<std::size_t>(data, "pairs", 0, "data");
  spec.data.sampling = get_or<std::string>(data, "sampling", "uniform", "data");
  spec.data.spread = get_or<double>(data, "spread", 0.2, "data");
  if (spec.data.sampling != "uniform" && spec.data.sampling != "scaled")
    throw ConfigError("data.sampling must be 'uniform' or 'scaled'");
  if (!(spec.data.dt > 0.0)) throw ConfigError("data.dt must be positive");
  if (spec.data.m < 1) throw ConfigError("data.M must be >= 1");
  if (options.paper_scale) spec.data.pairs = 0;

  const Json& test = object_at(j, "test", "config");
  require_keys(test, {"trajectories", "dt", "horizon"}, "test");
  spec.test.trajectories = get_or<std::size_t>(test, "trajectories", 10, "test");
  spec.test.dt = get_or<double>(test, "dt", 0.01, "test");
  spec.test.horizon =
      get_or<double>(test, "horizon", spec.system.linear() ? spec.system.dt : spec.system.horizon, "test");
  if (spec.test.trajectories < 1) throw ConfigError("test.trajectories must be >= 1");

  const Json& model = object_at(j, "model", "config");
  require_keys(model, {"kind", "hidden"}, "model");
  spec.model = parse_model_kind(get_or<std::string>(model, "kind", spec.system.linear() ? "affine" : "mlp", "model"));
  spec.hidden = get_or<std::size_t>(model, "hidden", options.paper_scale ? kPaperHidden : kDeskHidden, "model");
  if (options.paper_scale && spec.model == ModelKind::mlp) spec.hidden = kPaperHidden;

  const Json& scheme = object_at(j, "scheme", "config");
  require_keys(scheme, {"tableau", "mode", "L", "s", "M"}, "scheme");
  spec.train.loss.tableau = tableau_by_name(get_or<std::string>(scheme, "tableau", spec.system.tableau, "scheme"));
  const std::string mode_name =
      get_or<std::string>(scheme, "mode", to_string(spec.system.mode.kind), "scheme");
  spec.train.loss.mode = parse_mode(mode_name, get_or<int>(scheme, "L", spec.system.mode.iterations, "scheme"));
  if (spec.train.loss.mode.iterations < 0) throw ConfigError("scheme.L must be >= 0");
  spec.train.loss.s = get_or<int>(scheme, "s", 1, "scheme");
  if (spec.train.loss.s < 1) throw ConfigError("scheme.s must be >= 1");
  spec.train.loss.m = get_or<std::size_t>(scheme, "M", 0, "scheme");

  if (j.contains("adaptive") && !j["adaptive"].is_null()) {
    const Json& a = object_at(j, "adaptive", "config");
    require_keys(a, {"c", "check_every", "L_init", "L_max"}, "adaptive");
    AdaptiveConfig ac;
    ac.c = get_or<double>(a, "c", 1.0, "adaptive");
    ac.check_every = get_or<std::size_t>(a, "check_every", 10, "adaptive");
    ac.l_init = get_or<int>(a, "L_init", spec.train.loss.mode.iterations, "adaptive");
    ac.l_max = get_or<int>(a, "L_max", -1, "adaptive");
    spec.train.adaptive = ac;
  }

  const std::size_t full_epochs = spec.system.linear() ? kLinearEpochs : kPaperEpochs;
  spec.train.epochs =
      get_or<std::size_t>(j, "epochs", spec.system.linear() ? kLinearEpochs : options.paper_scale ? kPaperEpochs : kDeskEpochs, "config");
  if (options.paper_scale) spec.train.epochs = full_epochs;
  const Json& lr = object_at(j, "lr", "config");
  require_keys(lr, {"kind", "start", "end"}, "lr");
  spec.train.lr.kind = parse_lr_kind(get_or<std::string>(lr, "kind", spec.system.linear() ? "constant" : "exp_decay", "lr"));
  spec.train.lr.start = get_or<double>(lr, "start", 1e-2, "lr");
  spec.train.lr.end = get_or<double>(lr, "end", 1e-4, "lr");
  if (!(spec.train.lr.start > 0.0) || !(spec.train.lr.end > 0.0)) throw ConfigError("lr rates must be positive");
  spec.train.log_every = get_or<std::size_t>(j, "log_every", 100, "config");
  spec.train.seed = spec.seed;
  return spec;
}

FieldPtr imde_reference(const BenchmarkSystem& system, const ButcherTableau& tab, const StepMode& mode, double h) {
  if (system.linear()) {
    const auto imde = linear_imde_solve(*system.a, system.b, h, tab, mode);
    return std::make_shared<AffineField>(imde.a_h, imde.c_h);
  }
  if (one_stage_theta(tab)) return std::make_shared<OneStageImde>(system.field, tab, h);
  return numeric_imde(system.field, tab, StepMode::exact(), h, 4);
}

TrainOutcome run_training(const TrainSpec& spec) {
  const BenchmarkSystem& sys = spec.system;
  const std::size_t n_train = spec.data.path.empty() ? spec.data.trajectories : 0;
  Sampling sampling = spec.data.sampling == "scaled" ? Sampling::scaled(sys.x0, spec.data.spread)
                                                     : Sampling::uniform(sys.domain);
  const auto initials = sample_initials(sampling, n_train + spec.test.trajectories, spec.seed);
  const std::vector<std::vector<double>> train_init(initials.begin(),
                                                    initials.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<std::vector<double>> test_init(initials.begin() + static_cast<std::ptrdiff_t>(n_train),
                                                   initials.end());

  TrainOutcome out;
  if (!spec.data.path.empty()) {
    out.data = load_dataset(spec.data.path);
    if (out.data.dim() != sys.dim()) throw ConfigError("dataset dimension differs from the system");
  } else {
    const auto steps = static_cast<std::size_t>(std::llround(spec.data.horizon / spec.data.dt));
    if (steps < spec.data.m) throw ConfigError("data.horizon is shorter than one episode");
    const auto trajectories = generate_trajectories(*sys.field, train_init, steps, spec.data.dt);
    DatasetMeta meta;
    meta.system = sys.name;
    meta.seed = spec.seed;
    meta.domain = sys.domain;
    out.data = split_episodes(trajectories, spec.data.m, spec.data.dt, meta);
  }
  if (spec.data.pairs > 0) out.data = out.data.subsample(spec.data.pairs, spec.seed);
  if (out.data.empty()) throw ConfigError("training set is empty");

  const auto test_steps = static_cast<std::size_t>(std::llround(spec.test.horizon / spec.test.dt));
  const auto test = generate_trajectories(*sys.field, test_init, test_steps, spec.test.dt);
  Matrix points(test.size() * (test_steps + 1), sys.dim());
  std::size_t r = 0;
  for (const auto& t : test)
    for (std::size_t i = 0; i < t.rows(); ++i, ++r)
      for (std::size_t d = 0; d < sys.dim(); ++d) points(r, d) = t(i, d);

  out.model = init_params(spec.model, sys.dim(), spec.hidden, spec.seed);
  out.report = train(*out.model, out.data, spec.train);
  const double h = out.data.dt() / spec.train.loss.s;
  const FieldPtr fh = imde_reference(sys, spec.train.loss.tableau, spec.train.loss.mode, h);
  out.errors = evaluate(*out.model, *sys.field, fh.get(), points,
                        std::to_string(test.size()) + " trajectories, dt " + fmt(spec.test.dt) + ", horizon " +
                            fmt(spec.test.horizon));
  return out;
}

void write_training_outputs(const TrainOutcome& outcome, const std::string& dir) {
  fs::create_directories(dir);
  TrainReport report = outcome.report;
  report.checkpoint = (fs::path(dir) / "checkpoint.json").string();
  save_checkpoint(*outcome.model, report.checkpoint);
  Json j = Json::parse(report_json(report));
  j["error_vs_truth"] = outcome.errors.error_vs_truth;
  if (outcome.errors.error_vs_imde) j["error_vs_imde"] = *outcome.errors.error_vs_imde;
  j["test_set"] = outcome.errors.test_set;
  write_file((fs::path(dir) / "report.json").string(), j.dump(2) + "\n");
  std::ofstream loss((fs::path(dir) / "loss.csv").string());
  write_loss_csv(loss, report);
  std::ofstream errs((fs::path(dir) / "errors.csv").string());
  write_csv(errs, outcome.errors);
}

std::vector<ImdeRow> linear_imde_table(const std::vector<BenchmarkSystem>& systems, int k,
                                       const std::optional<ButcherTableau>& tab, const std::optional<StepMode>& mode) {
  std::vector<ImdeRow> rows;
  for (const auto& sys : systems) {
    if (!sys.linear()) throw ConfigError("linear IMDE table: '" + sys.name + "' is not linear");
    const ButcherTableau t = tab ? *tab : tableau_by_name(sys.tableau);
    const StepMode m = mode ? *mode : sys.mode;
    ImdeRow row;
    row.system = sys.name;
    row.scheme = t.name + " " + m.describe();
    row.k = k;
    row.imde = k >= 0 ? linear_imde_series(*sys.a, sys.b, sys.dt, t, m, k)
                      : linear_imde_solve(*sys.a, sys.b, sys.dt, t, m);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_imde_csv(std::ostream& out, const std::vector<ImdeRow>& rows) {
  std::size_t dim = 0;
  for (const auto& r : rows) dim = std::max(dim, r.imde.a_h.rows());
  out << "system,scheme,K,row";
  for (std::size_t c = 0; c < dim; ++c) out << ",a" << (c + 1);
  out << ",c\n";
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.imde.a_h.rows(); ++i) {
      out << r.system << ',' << r.scheme << ',' << (r.k >= 0 ? std::to_string(r.k) : "converged") << ',' << i + 1;
      for (std::size_t c = 0; c < dim; ++c) out << ',' << (c < r.imde.a_h.cols() ? full(r.imde.a_h(i, c)) : "");
      out << ',' << full(r.imde.c_h[i]) << '\n';
    }
}

SweepResult summarize_sweep(std::vector<SweepPoint> points) {
  SweepResult result;
  result.points = std::move(points);
  std::map<std::pair<double, int>, std::vector<const SweepPoint*>> groups;
  std::vector<std::pair<double, int>> order;
  for (const auto& p : result.points) {
    const auto key = std::make_pair(p.dt, p.s);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&p);
  }
  for (const auto& key : order) {
    std::vector<double> t, m;
    for (const auto* p : groups[key]) {
      t.push_back(p->err_truth);
      m.push_back(p->err_imde);
    }
    result.summary.push_back({key.first, key.second, mean(t), stddev(t), mean(m), stddev(m), t.size()});
  }
  if (result.summary.size() >= 2) {
    std::vector<double> hs, et, em;
    for (const auto& s : result.summary) {
      hs.push_back(s.h());
      et.push_back(s.err_truth_mean);
      em.push_back(s.err_imde_mean);
    }
    result.slope_truth = loglog_slope(hs, et);
    result.slope_imde = loglog_slope(hs, em);
  } else {
    result.slope_truth = result.slope_imde = std::numeric_limits<double>::quiet_NaN();
  }
  return result;
}

SweepResult run_sweep(const TrainSpec& base, const std::vector<double>& dts, const std::vector<int>& ss,
                      int replicates, int threads) {
  if (!dts.empty() && !ss.empty()) throw ConfigError("sweep: vary either dt or s, not both");
  if (replicates < 1) throw ConfigError("sweep: replicates must be >= 1");
  std::vector<std::pair<double, int>> grid;
  for (double dt : dts) grid.emplace_back(dt, base.train.loss.s);
  for (int s : ss) grid.emplace_back(base.data.dt, s);
  if (grid.empty()) grid.emplace_back(base.data.dt, base.train.loss.s);
  const std::size_t n = grid.size() * static_cast<std::size_t>(replicates);
  std::vector<SweepPoint> points(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto [dt, s] = grid[i / static_cast<std::size_t>(replicates)];
    const int rep = static_cast<int>(i % static_cast<std::size_t>(replicates));
    TrainSpec spec = base;
    spec.data.dt = dt;
    spec.train.loss.s = s;
    spec.seed = base.seed + static_cast<std::uint64_t>(rep);
    spec.train.seed = spec.seed;
    const auto outcome = run_training(spec);
    points[i] = point_from(outcome, dt, s, rep, spec.seed);
  });
  return summarize_sweep(std::move(points));
}

void write_sweep_csv(std::ostream& out, const SweepResult& result) {
  out << "dt,s,h,replicate,seed,err_truth,err_imde,final_loss,final_L,eval_count,seconds\n";
  for (const auto& p : result.points)
    out << full(p.dt) << ',' << p.s << ',' << full(p.h()) << ',' << p.replicate << ',' << p.seed << ','
        << full(p.err_truth) << ',' << full(p.err_imde) << ',' << full(p.final_loss) << ',' << p.final_l << ','
        << p.evals << ',' << fmt(p.seconds) << '\n';
}

void write_sweep_summary_csv(std::ostream& out, const SweepResult& result) {
  out << "dt,s,h,replicates,err_truth_mean,err_truth_sd,err_imde_mean,err_imde_sd\n";
  for (const auto& s : result.summary)
    out << full(s.dt) << ',' << s.s << ',' << full(s.h()) << ',' << s.replicates << ',' << full(s.err_truth_mean)
        << ',' << full(s.err_truth_sd) << ',' << full(s.err_imde_mean) << ',' << full(s.err_imde_sd) << '\n';
  out << "slope,,,," << full(result.slope_truth) << ",," << full(result.slope_imde) << ",\n";
}

CompareResult run_compare(const TrainSpec& base, int fixed_l, const AdaptiveConfig& adaptive, int replicates,
                          int threads) {
  if (replicates < 1) throw ConfigError("compare: replicates must be >= 1");
  if (base.train.loss.mode.kind == IterationKind::exact) throw ConfigError("compare: needs an unrolled mode");
  CompareResult result;
  result.fixed_l = fixed_l;
  result.pairs.resize(static_cast<std::size_t>(replicates));
  parallel_for(2 * static_cast<std::size_t>(replicates), threads, [&](std::size_t i) {
    const int rep = static_cast<int>(i / 2);
    const bool is_adaptive = i % 2 == 1;
    TrainSpec spec = base;
    spec.seed = base.seed + static_cast<std::uint64_t>(rep);
    spec.train.seed = spec.seed;
    if (is_adaptive) {
      spec.train.adaptive = adaptive;
    } else {
      spec.train.adaptive.reset();
      spec.train.loss.mode = spec.train.loss.mode.with_iterations(fixed_l);
    }
    const auto outcome = run_training(spec);
    auto& pair = result.pairs[static_cast<std::size_t>(rep)];
    pair.replicate = rep;
    pair.seed = spec.seed;
    (is_adaptive ? pair.adaptive : pair.fixed) = point_from(outcome, spec.data.dt, spec.train.loss.s, rep, spec.seed);
  });
  for (const auto& p : result.pairs) {
    result.eval_ratios.push_back(static_cast<double>(p.fixed.evals) / static_cast<double>(p.adaptive.evals));
    result.error_ratios.push_back(p.adaptive.err_imde / p.fixed.err_imde);
  }
  return result;
}

void write_compare_csv(std::ostream& out, const CompareResult& result) {
  out << "replicate,seed,variant,final_L,eval_count,seconds,err_truth,err_imde,final_loss\n";
  for (const auto& p : result.pairs)
    for (const auto* run : {&p.fixed, &p.adaptive}) {
      const std::string variant = run == &p.fixed ? "fixed_L" + std::to_string(result.fixed_l) : "adaptive";
      out << p.replicate << ',' << p.seed << ',' << variant << ',' << run->final_l << ',' << run->evals << ','
          << fmt(run->seconds) << ',' << full(run->err_truth) << ',' << full(run->err_imde) << ','
          << full(run->final_loss) << '\n';
    }
}

void write_compare_summary(std::ostream& out, const CompareResult& result) {
  std::vector<double> ft, at, fe, ae, fv, av, fm, am;
  for (const auto& p : result.pairs) {
    ft.push_back(p.fixed.seconds);
    at.push_back(p.adaptive.seconds);
    fe.push_back(p.fixed.err_truth);
    ae.push_back(p.adaptive.err_truth);
    fm.push_back(p.fixed.err_imde);
    am.push_back(p.adaptive.err_imde);
    fv.push_back(static_cast<double>(p.fixed.evals));
    av.push_back(static_cast<double>(p.adaptive.evals));
  }
  out << "| variant | seconds | field evaluations | Error(f_theta, f) | Error(f_theta, f_h) |\n";
  out << "|---|---|---|---|---|\n";
  out << "| fixed L=" << result.fixed_l << " | " << mean_sd(ft) << " | " << mean_sd(fv) << " | " << mean_sd(fe)
      << " | " << mean_sd(fm) << " |\n";
  out << "| adaptive | " << mean_sd(at) << " | " << mean_sd(av) << " | " << mean_sd(ae) << " | " << mean_sd(am)
      << " |\n";
  out << "\nevaluation ratio (fixed/adaptive): " << mean_sd(result.eval_ratios)
      << "\nerror ratio (adaptive/fixed, vs f_h): " << mean_sd(result.error_ratios) << '\n';
}

std::string cmd_generate(const Json& config, const RunOptions& options) {
  require_keys(config, {"system", "data", "seed", "out"}, "config");
  if (!config.contains("system")) throw ConfigError("config: 'system' is required");
  const BenchmarkSystem sys = system_from_json(config["system"]);
  const Json& data = object_at(config, "data", "config");
  require_keys(data, {"trajectories", "horizon", "dt", "M", "sampling", "spread", "initials"}, "data");
  const std::uint64_t seed = options.seed ? *options.seed : get_or<std::uint64_t>(config, "seed", 0, "config");
  const double dt = get_or<double>(data, "dt", sys.dt, "data");
  if (!(dt > 0.0)) throw ConfigError("data.dt must be positive");
  const double horizon = get_or<double>(data, "horizon", sys.linear() ? dt : sys.horizon, "data");
  const std::size_t m = get_or<std::size_t>(data, "M", 1, "data");
  const std::string kind = get_or<std::string>(data, "sampling", "uniform", "data");
  Sampling sampling;
  std::size_t n = get_or<std::size_t>(data, "trajectories", sys.linear() ? 100 : 90, "data");
  if (kind == "uniform") {
    sampling = Sampling::uniform(sys.domain);
  } else if (kind == "scaled") {
    sampling = Sampling::scaled(sys.x0, get_or<double>(data, "spread", 0.2, "data"));
  } else if (kind == "listed") {
    if (!data.contains("initials")) throw ConfigError("listed sampling needs data.initials");
    std::vector<std::vector<double>> xs;
    for (const auto& x : data["initials"]) xs.push_back(parse_vector(x, "data.initials"));
    n = xs.size();
    sampling = Sampling::listed(std::move(xs));
  } else {
    throw ConfigError("data.sampling must be uniform, scaled or listed");
  }
  if (n < 1 || m < 1) throw ConfigError("data: trajectories and M must be >= 1");
  const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
  if (steps < m) throw ConfigError("data.horizon is shorter than one episode");
  const auto trajectories =
      generate_trajectories(*sys.field, sample_initials(sampling, n, seed), steps, dt, options.threads);
  DatasetMeta meta;
  meta.system = sys.name;
  meta.seed = seed;
  meta.domain = sys.domain;
  const auto dataset = split_episodes(trajectories, m, dt, meta);
  const std::string dir = out_dir(config, options, "runs/generate");
  const std::string path = (fs::path(dir) / "dataset.csv").string();
  save_dataset(dataset, path);
  return "generated " + std::to_string(dataset.size()) + " episodes of M = " + std::to_string(m) + " for " +
         sys.name + " (Δt = " + fmt(dt) + ") into " + path;
}

std::string cmd_train(const Json& config, const RunOptions& options) {
  for (const char* key : {"grid", "replicates", "fixed_L"})
    if (config.contains(key)) throw ConfigError(std::string("config: '") + key + "' belongs to sweep or compare");
  const TrainSpec spec = train_spec_from_json(config, options);
  const auto outcome = run_training(spec);
  const std::string dir = out_dir(config, options, "runs/train");
  write_training_outputs(outcome, dir);
  std::ostringstream s;
  s << "trained " << to_string(spec.model) << " on " << spec.system.name << " for " << spec.train.epochs
    << " epochs: final loss " << fmt(outcome.report.final_loss) << ", L " << outcome.report.final_l
    << ", Error(f_theta, f) " << fmt(outcome.errors.error_vs_truth) << ", Error(f_theta, f_h) "
    << fmt(outcome.errors.error_vs_imde.value_or(NAN)) << ", " << outcome.report.evals << " field evaluations; outputs in "
    << dir;
  return s.str();
}

std::string cmd_imde(const Json& config, const RunOptions& options) {
  require_keys(config, {"system", "systems", "K", "tableau", "mode", "L", "h", "variant", "per_axis", "out", "seed"},
               "config");
  std::vector<BenchmarkSystem> systems;
  if (config.contains("systems")) {
    if (!config["systems"].is_array()) throw ConfigError("config: 'systems' must be an array");
    for (const auto& s : config["systems"]) systems.push_back(system_from_json(s));
  } else if (config.contains("system")) {
    systems.push_back(system_from_json(config["system"]));
  } else {
    for (const char* name : {"saddle", "center", "improper_node", "spiral", "nodal_sink"})
      systems.push_back(builtin(name));
  }
  int k = 3;
  if (config.contains("K")) {
    if (config["K"].is_string() && config["K"] == "converged")
      k = -1;
    else
      k = get_or<int>(config, "K", 3, "config");
  }
  std::optional<ButcherTableau> tab;
  std::optional<StepMode> mode;
  if (config.contains("tableau")) tab = tableau_by_name(config["tableau"].get<std::string>());
  if (config.contains("mode"))
    mode = parse_mode(get_or<std::string>(config, "mode", "exact", "config"), get_or<int>(config, "L", 0, "config"));
  const std::string dir = out_dir(config, options, "runs/imde");

  std::vector<BenchmarkSystem> linear, nonlinear;
  for (auto& s : systems) (s.linear() ? linear : nonlinear).push_back(std::move(s));
  std::ostringstream summary;
  if (!linear.empty()) {
    const auto rows = linear_imde_table(linear, k, tab, mode);
    std::ofstream out((fs::path(dir) / "imde.csv").string());
    write_imde_csv(out, rows);
    summary << "IMDE coefficients (" << (k >= 0 ? "K = " + std::to_string(k) : std::string("converged")) << "):\n";
    for (const auto& r : rows) {
      summary << "  " << r.system << " [" << r.scheme << "]";
      for (std::size_t i = 0; i < r.imde.a_h.rows(); ++i) {
        summary << (i ? "; " : " ");
        for (std::size_t c = 0; c < r.imde.a_h.cols(); ++c) summary << fmt(r.imde.a_h(i, c)) << ' ';
        summary << "| " << fmt(r.imde.c_h[i]);
      }
      summary << '\n';
    }
  }
  for (const auto& sys : nonlinear) {
    if (k < 0 || k > 4) throw ConfigError("nonlinear IMDE tables need 0 <= K <= 4");
    const double h = get_or<double>(config, "h", sys.dt, "config");
    const std::size_t per_axis = get_or<std::size_t>(config, "per_axis", 5, "config");
    const Matrix points = grid_points(sys.domain.lo, sys.domain.hi, per_axis);
    std::vector<FieldPtr> terms;
    std::string source;
    if (config.contains("variant")) {
      const auto series = nonlinear_imde_terms(sys.field, parse_imde_variant(config["variant"].get<std::string>()), h);
      if (k > series.order()) throw ConfigError("closed-form variants provide terms up to K = 3");
      terms.assign(series.terms().begin(), series.terms().begin() + k + 1);
      source = "closed form " + to_string(parse_imde_variant(config["variant"].get<std::string>()));
    } else {
      const ButcherTableau t = tab ? *tab : tableau_by_name(sys.tableau);
      const StepMode m = mode ? *mode : sys.mode;
      FieldPtr prev = sys.field;
      terms.push_back(sys.field);
      for (int depth = 1; depth <= k; ++depth) {
        FieldPtr next = numeric_imde(sys.field, t, m, h, depth);
        terms.push_back(std::make_shared<ScaledDifference>(next, prev, 1.0 / std::pow(h, depth)));
        prev = next;
      }
      source = "defect correction " + t.name + " " + m.describe();
    }
    const std::string path = (fs::path(dir) / (sys.name + "_imde.csv")).string();
    std::ofstream out(path);
    out << "point";
    for (std::size_t d = 0; d < sys.dim(); ++d) out << ",x" << d + 1;
    for (std::size_t t = 0; t < terms.size(); ++t)
      for (std::size_t d = 0; d < sys.dim(); ++d) out << ",f" << t << "_" << d + 1;
    out << '\n';
    for (std::size_t i = 0; i < points.rows(); ++i) {
      out << i;
      for (double v : points.row_span(i)) out << ',' << full(v);
      for (const auto& t : terms) {
        std::vector<double> y(sys.dim());
        t->eval(points.row_span(i), std::span<double>(y));
        for (double v : y) out << ',' << full(v);
      }
      out << '\n';
    }
    summary << sys.name << ": terms f_0..f_" << k << " (" << source << ", h = " << fmt(h) << ") at "
            << points.rows() << " grid points in " << path << '\n';
  }
  return summary.str();
}

std::string cmd_sweep(const Json& config, const RunOptions& options) {
  TrainSpec base = train_spec_from_json(config, options);
  const Json& grid = object_at(config, "grid", "config");
  require_keys(grid, {"dt", "s"}, "grid");
  std::vector<double> dts;
  std::vector<int> ss;
  if (grid.contains("dt")) dts = parse_vector(grid["dt"], "grid.dt");
  if (grid.contains("s"))
    for (double s : parse_vector(grid["s"], "grid.s")) {
      if (s < 1 || s != std::floor(s)) throw ConfigError("grid.s entries must be positive integers");
      ss.push_back(static_cast<int>(s));
    }
  for (double dt : dts)
    if (!(dt > 0.0)) throw ConfigError("grid.dt entries must be positive");
  const int replicates = get_or<int>(config, "replicates", options.paper_scale ? 5 : 3, "config");
  const auto result = run_sweep(base, dts, ss, replicates, options.threads);
  const std::string dir = out_dir(config, options, "runs/sweep");
  {
    std::ofstream out((fs::path(dir) / "sweep.csv").string());
    write_sweep_csv(out, result);
    std::ofstream sum((fs::path(dir) / "sweep_summary.csv").string());
    write_sweep_summary_csv(sum, result);
  }
  std::ostringstream s;
  s << "sweep over " << result.summary.size() << " grid points x " << replicates << " replicates on "
    << base.system.name << ":\n";
  for (const auto& p : result.summary)
    s << "  h = " << fmt(p.h()) << "  Error(f_theta, f) = " << fmt(p.err_truth_mean) << "  Error(f_theta, f_h) = "
      << fmt(p.err_imde_mean) << '\n';
  s << "  log-log slope of Error(f_theta, f) vs h: " << fmt(result.slope_truth) << "; outputs in " << dir;
  return s.str();
}

std::string cmd_compare(const Json& config, const RunOptions& options) {
  TrainSpec base = train_spec_from_json(config, options);
  if (!base.train.adaptive) throw ConfigError("compare: an 'adaptive' block is required");
  const AdaptiveConfig adaptive = *base.train.adaptive;
  const int fixed_l = get_or<int>(config, "fixed_L", 5, "config");
  if (fixed_l < 0) throw ConfigError("fixed_L must be >= 0");
  const int replicates = get_or<int>(config, "replicates", options.paper_scale ? 10 : 3, "config");
  const auto result = run_compare(base, fixed_l, adaptive, replicates, options.threads);
  const std::string dir = out_dir(config, options, "runs/compare");
  std::ostringstream table;
  write_compare_summary(table, result);
  {
    std::ofstream out((fs::path(dir) / "compare.csv").string());
    write_compare_csv(out, result);
    write_file((fs::path(dir) / "compare.md").string(), table.str());
  }
  return table.str() + "outputs in " + dir;
}

std::string cmd_report(const std::vector<std::string>& run_dirs, const RunOptions& options) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  std::ostringstream long_table, summary_table, md;
  long_table << "run,dt,s,h,replicate,err_truth,err_imde\n";
  summary_table << "run,dt,s,h,replicates,err_truth_mean,err_truth_sd,err_imde_mean,err_imde_sd\n";
  md << "# Run report\n";
  std::size_t found = 0;
  for (const auto& dir : run_dirs) {
    if (!fs::is_directory(dir)) throw ConfigError("report: '" + dir + "' is not a directory");
    const fs::path sweep = fs::path(dir) / "sweep.csv";
    const fs::path compare = fs::path(dir) / "compare.csv";
    if (!fs::exists(sweep) && !fs::exists(compare))
      throw ConfigError("report: '" + dir + "' holds no sweep.csv or compare.csv");
    if (fs::exists(sweep)) {
      std::ifstream in(sweep);
      std::string line;
      std::getline(in, line);
      std::vector<SweepPoint> points;
      std::size_t lineno = 1;
      while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto c = split_line(line);
        if (c.size() < 11) throw ParseError("sweep.csv: expected 11 columns", lineno);
        try {
          SweepPoint p{std::stod(c[0]), std::stoi(c[1]), std::stoi(c[3]), std::stoull(c[4]), std::stod(c[5]),
                       std::stod(c[6]), std::stod(c[7]), std::stoi(c[8]), std::stoull(c[9]), std::stod(c[10])};
          points.push_back(p);
        } catch (const std::exception&) {
          throw ParseError("sweep.csv: malformed number", lineno);
        }
      }
      if (points.empty()) throw ConfigError("report: '" + sweep.string() + "' has no rows");
      const auto result = summarize_sweep(std::move(points));
      for (const auto& p : result.points)
        long_table << dir << ',' << full(p.dt) << ',' << p.s << ',' << full(p.h()) << ',' << p.replicate << ','
                   << full(p.err_truth) << ',' << full(p.err_imde) << '\n';
      md << "\n## " << dir << " (sweep)\n\n| h | replicates | Error(f_theta, f) | Error(f_theta, f_h) |\n|---|---|---|---|\n";
      for (const auto& s : result.summary) {
        summary_table << dir << ',' << full(s.dt) << ',' << s.s << ',' << full(s.h()) << ',' << s.replicates << ','
                      << full(s.err_truth_mean) << ',' << full(s.err_truth_sd) << ',' << full(s.err_imde_mean) << ','
                      << full(s.err_imde_sd) << '\n';
        md << "| " << fmt(s.h()) << " | " << s.replicates << " | " << fmt(s.err_truth_mean) << " ± "
           << fmt(s.err_truth_sd) << " | " << fmt(s.err_imde_mean) << " ± " << fmt(s.err_imde_sd) << " |\n";
      }
      md << "\nslope of Error(f_theta, f) vs h: " << fmt(result.slope_truth) << '\n';
      ++found;
    }
    if (fs::exists(compare)) {
      const fs::path summary = fs::path(dir) / "compare.md";
      md << "\n## " << dir << " (compare)\n\n";
      if (fs::exists(summary)) {
        std::ifstream in(summary);
        md << in.rdbuf();
      }
      ++found;
    }
  }
  const std::string out = options.out ? *options.out : "runs/report";
  fs::create_directories(out);
  write_file((fs::path(out) / "report.csv").string(), long_table.str());
  write_file((fs::path(out) / "report_summary.csv").string(), summary_table.str());
  write_file((fs::path(out) / "report.md").string(), md.str());
  return "merged " + std::to_string(found) + " tables from " + std::to_string(run_dirs.size()) +
         " run directories into " + out;
}

}  // namespace odenet
