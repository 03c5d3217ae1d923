#include "odenet/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "odenet/errors.hpp"

namespace odenet {

namespace {

std::size_t horizon(const EpisodeDataset& data, const LossConfig& config) {
  if (data.empty()) throw ContractError("loss: dataset has no episodes");
  if (config.s < 1) throw ConfigError("loss: s must be >= 1");
  const std::size_t m = config.m == 0 ? data.steps() : config.m;
  if (m > data.steps())
    throw ContractError("loss: M = " + std::to_string(m) + " exceeds the episode length " +
                        std::to_string(data.steps()));
  return m;
}

double step_size(const EpisodeDataset& data, const LossConfig& config) {
  return data.dt() / static_cast<double>(config.s);
}

std::size_t first_bad_row(const Matrix& x) {
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (double v : x.row_span(r))
      if (!std::isfinite(v)) return r;
  return x.rows();
}

/// The first row whose pointwise step fails or leaves the finite range.
std::size_t failing_row(const VectorField& f, const Matrix& x, double h, const LossConfig& config,
                        const StepMode& mode) {
  const StepOperator op(config.tableau, mode, h);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    try {
      const std::vector<double> y = compose(op, f, std::vector<double>(x.row_span(r).begin(), x.row_span(r).end()), config.s);
      for (double v : y)
        if (!std::isfinite(v)) return r;
    } catch (const NumericalError&) {
      return r;
    }
  }
  return x.rows();
}

/// (Φ)^{s} applied to X, with errors tagged by episode and horizon m.
Var advance(TapeIntegrator& integ, const ParamModel& model, Var x, double h, const LossConfig& config,
            const StepMode& mode, std::size_t m) {
  Var y;
  try {
    y = integ.compose(x, h, config.tableau, mode, config.s);
  } catch (const DivergenceError& e) {
    const Matrix& xv = integ.tape().value(x);
    const std::size_t bad = failing_row(model, xv, h, config, mode);
    throw DivergenceError(std::string(e.what()) + " at horizon m = " + std::to_string(m) +
                          (bad < xv.rows() ? ", episode " + std::to_string(bad) : ""));
  }
  const std::size_t bad = first_bad_row(integ.tape().value(y));
  if (bad < integ.tape().value(y).rows())
    throw DivergenceError("prediction of episode " + std::to_string(bad) + " became non-finite at horizon m = " +
                          std::to_string(m));
  return y;
}

double squared_diff(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

Var unrolled_loss(TapeIntegrator& integ, const ParamModel& model, const EpisodeDataset& data,
                  const LossConfig& config) {
  const std::size_t big_m = horizon(data, config);
  const double h = step_size(data, config);
  Tape& tape = integ.tape();
  const double norm = 1.0 / static_cast<double>(data.dim() * data.size() * big_m);
  Var x = tape.constant(data.states_at(0));
  std::vector<std::pair<double, Var>> terms;
  for (std::size_t m = 1; m <= big_m; ++m) {
    x = advance(integ, model, x, h, config, config.mode, m);
    const double w = static_cast<double>(m) * data.dt();
    Var r = tape.sub(x, tape.constant(data.states_at(m)));
    terms.emplace_back(norm / (w * w), tape.sum_squares(r));
  }
  return terms.size() == 1 ? tape.scale(terms[0].second, terms[0].first) : tape.linear_combination(terms);
}

LossEval evaluate_loss(const ParamModel& model, const EpisodeDataset& data, const LossConfig& config,
                       bool with_gradient, std::size_t* evals) {
  Tape tape;
  TapeIntegrator integ(tape, model, with_gradient, evals);
  Var loss = unrolled_loss(integ, model, data, config);
  LossEval out;
  out.value = tape.value(loss)[0];
  if (!std::isfinite(out.value)) throw DivergenceError("loss is non-finite");
  if (with_gradient) out.gradient = integ.bound().flat_gradient(backward(tape, loss));
  return out;
}

double rollout_gap_raw(const ParamModel& model, const EpisodeDataset& data, const LossConfig& config,
                       const StepMode& a, const StepMode& b, std::size_t* evals) {
  const std::size_t big_m = horizon(data, config);
  const double h = step_size(data, config);
  Tape tape;
  TapeIntegrator integ(tape, model, false, evals);
  Var xa = tape.constant(data.states_at(0));
  Var xb = xa;
  double sum = 0.0;
  for (std::size_t m = 1; m <= big_m; ++m) {
    xa = advance(integ, model, xa, h, config, a, m);
    xb = advance(integ, model, xb, h, config, b, m);
    const double w = static_cast<double>(m) * data.dt();
    sum += squared_diff(tape.value(xa), tape.value(xb)) / (w * w);
  }
  return sum;
}

double delta_gap(const ParamModel& model, const EpisodeDataset& data, const LossConfig& config,
                 std::size_t* evals) {
  if (config.mode.kind == IterationKind::exact) throw ContractError("delta_gap: needs an unrolled mode");
  const std::size_t big_m = horizon(data, config);
  const StepMode next = config.mode.with_iterations(config.mode.iterations + 1);
  const double raw = rollout_gap_raw(model, data, config, config.mode, next, evals);
  return raw / static_cast<double>(data.dim() * data.size() * big_m);
}

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::vector<double>& params, std::span<const double> grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw ContractError("Adam: parameter and gradient lengths differ from the optimizer state");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i])) throw DivergenceError("Adam: non-finite gradient entry " + std::to_string(i));
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
  }
}

double lr_at(const LrSchedule& schedule, std::size_t epoch, std::size_t total) {
  if (epoch > total) throw ContractError("lr schedule: epoch beyond the total");
  if (schedule.kind == LrSchedule::Kind::constant || total == 0) return schedule.start;
  const double t = static_cast<double>(epoch) / static_cast<double>(total);
  return std::pow(10.0, std::log10(schedule.start) + t * (std::log10(schedule.end) - std::log10(schedule.start)));
}

std::string to_string(LrSchedule::Kind kind) {
  return kind == LrSchedule::Kind::constant ? "constant" : "exp_decay";
}

LrSchedule::Kind parse_lr_kind(const std::string& name) {
  if (name == "constant") return LrSchedule::Kind::constant;
  if (name == "exp_decay") return LrSchedule::Kind::exp_decay;
  throw ConfigError("unknown learning-rate schedule '" + name + "' (known: constant, exp_decay)");
}

TrainReport train(ParamModel& model, const EpisodeDataset& data, const TrainConfig& config) {
  using clock = std::chrono::steady_clock;
  LossConfig loss_config = config.loss;
  int cap = 0;
  if (config.adaptive) {
    const auto& a = *config.adaptive;
    if (loss_config.mode.kind == IterationKind::exact) throw ConfigError("adaptive training needs an unrolled mode");
    if (!(a.c > 0.0)) throw ConfigError("adaptive: c must be positive");
    if (a.check_every < 1) throw ConfigError("adaptive: check_every must be >= 1");
    cap = a.cap(loss_config.mode.kind);
    if (a.l_init < 0 || cap < a.l_init) throw ConfigError("adaptive: need 0 <= L_init <= L_max");
    loss_config.mode = loss_config.mode.with_iterations(a.l_init);
  }
  horizon(data, loss_config);

  TrainReport report;
  report.seed = config.seed;
  report.l_schedule.emplace_back(0, loss_config.mode.iterations);
  Adam adam(model.param_count());
  std::vector<double> theta = model.params_flat();
  const auto start = clock::now();
  const std::size_t log_every = std::max<std::size_t>(1, config.log_every);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    LossEval eval = evaluate_loss(model, data, loss_config, true, &report.evals);
    adam.step(theta, eval.gradient, lr_at(config.lr, epoch, config.epochs));
    model.load_flat(theta);
    report.final_loss = eval.value;

    std::optional<double> delta;
    if (config.adaptive && (epoch + 1) % config.adaptive->check_every == 0) {
      delta = delta_gap(model, data, loss_config, &report.evals);
      report.deltas.emplace_back(epoch, *delta);
      if (eval.value < config.adaptive->c * *delta) {
        if (loss_config.mode.iterations < cap) {
          loss_config.mode = loss_config.mode.with_iterations(loss_config.mode.iterations + 1);
          report.l_schedule.emplace_back(epoch + 1, loss_config.mode.iterations);
        } else {
          report.l_max_reached = true;
        }
      }
    }
    if (epoch % log_every == 0 || epoch + 1 == config.epochs || delta) {
      const double secs = std::chrono::duration<double>(clock::now() - start).count();
      report.rows.push_back({epoch, eval.value, delta, loss_config.mode.iterations, report.evals, secs});
    }
  }
  report.seconds = std::chrono::duration<double>(clock::now() - start).count();
  report.final_l = loss_config.mode.iterations;
  return report;
}

std::string report_json(const TrainReport& report) {
  nlohmann::json j;
  j["seed"] = report.seed;
  j["epochs"] = report.rows.empty() ? 0 : report.rows.back().epoch + 1;
  j["final_loss"] = report.final_loss;
  j["final_L"] = report.final_l;
  j["L_max_reached"] = report.l_max_reached;
  j["eval_count"] = report.evals;
  j["seconds"] = report.seconds;
  j["checkpoint"] = report.checkpoint;
  auto& sched = j["L_schedule"] = nlohmann::json::array();
  for (const auto& [epoch, l] : report.l_schedule) sched.push_back({{"epoch", epoch}, {"L", l}});
  auto& deltas = j["delta_history"] = nlohmann::json::array();
  for (const auto& [epoch, d] : report.deltas) deltas.push_back({{"epoch", epoch}, {"delta", d}});
  auto& loss = j["loss"] = nlohmann::json::array();
  for (const auto& r : report.rows) loss.push_back({{"epoch", r.epoch}, {"loss", r.loss}});
  return j.dump(2);
}

void write_loss_csv(std::ostream& out, const TrainReport& report) {
  out << "epoch,loss,delta,L,eval_count,seconds\n";
  char buf[64];
  for (const auto& r : report.rows) {
    out << r.epoch << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.loss);
    out << buf << ',';
    if (r.delta) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.delta);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%.6f", r.seconds);
    out << ',' << r.l << ',' << r.evals << ',' << buf << '\n';
  }
}

}  // namespace odenet
