#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "odenet/data.hpp"
#include "odenet/errors.hpp"
#include "odenet/imde.hpp"
#include "odenet/stats.hpp"
#include "odenet/systems.hpp"
#include "odenet/training.hpp"

using namespace odenet;

namespace {

EpisodeDataset pendulum_data(std::size_t n, std::size_t m, double dt, std::uint64_t seed) {
  const auto sys = builtin("pendulum");
  return generate(sys, n, m, dt, Sampling::uniform(sys.domain), seed);
}

double loss_at(const ParamModel& model, std::span<const double> theta, const EpisodeDataset& data,
               const LossConfig& config) {
  auto local = model.clone();
  local->load_flat(theta);
  return evaluate_loss(*local, data, config, false).value;
}

}  // namespace

TEST_CASE("learning-rate schedule endpoints") {
  const LrSchedule decay{LrSchedule::Kind::exp_decay, 1e-2, 1e-4};
  CHECK(lr_at(decay, 0, 1000) == doctest::Approx(1e-2).epsilon(1e-14));
  CHECK(lr_at(decay, 1000, 1000) == doctest::Approx(1e-4).epsilon(1e-14));
  CHECK(lr_at(decay, 500, 1000) == doctest::Approx(1e-3).epsilon(1e-14));
  CHECK(lr_at(LrSchedule{}, 123, 1000) == 0.01);
  CHECK_THROWS_AS(lr_at(decay, 1001, 1000), ContractError);
  CHECK(parse_lr_kind("exp_decay") == LrSchedule::Kind::exp_decay);
  CHECK_THROWS_AS(parse_lr_kind("cosine"), ConfigError);
}

TEST_CASE("Adam recursion") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Adam adam(3);
    std::vector<double> p{1, 2, 3};
    const std::vector<double> g(3, 0.0);
    for (int i = 0; i < 5; ++i) adam.step(p, g, 0.01);
    CHECK(p == std::vector<double>{1, 2, 3});
  }
  SUBCASE("first step moves each parameter by lr·g/(|g|+ε)") {
    Adam adam(3);
    std::vector<double> p{0, 0, 0};
    const std::vector<double> g{2.0, -0.5, 1e-3};
    adam.step(p, g, 0.1);
    for (int i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(-0.1 * g[i] / (std::abs(g[i]) + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("a constant gradient settles to steps of lr·sign(g)") {
    Adam adam(2);
    std::vector<double> p{0, 0};
    const std::vector<double> g{3.0, -7.0};
    for (int i = 0; i < 2000; ++i) {
      const auto before = p;
      adam.step(p, g, 0.01);
      CHECK(std::abs(p[0] - before[0]) <= 0.01 * (1 + 1e-9));
      if (i == 1999) {
        CHECK(p[0] - before[0] == doctest::Approx(-0.01).epsilon(1e-6));
        CHECK(p[1] - before[1] == doctest::Approx(0.01).epsilon(1e-6));
      }
    }
  }
  SUBCASE("non-finite gradients are rejected") {
    Adam adam(1);
    std::vector<double> p{0};
    CHECK_THROWS_AS(adam.step(p, std::vector<double>{NAN}, 0.01), DivergenceError);
    CHECK_THROWS_AS(adam.step(p, std::vector<double>{1, 2}, 0.01), ContractError);
  }
}

TEST_CASE("single-term loss is e²/Δt²") {
  const double dt = 0.1;
  const EpisodeDataset data({Matrix{{0.7}, {0.4}}}, dt);
  AffineModel still(Matrix{{0.0}}, {0.0});
  LossConfig config;
  config.mode = StepMode::fixed_point(0);
  const double e = 0.7 - 0.4;
  CHECK(evaluate_loss(still, data, config, false).value == doctest::Approx(e * e / (dt * dt)).epsilon(1e-14));
}

TEST_CASE("the loss weights horizon m by 1/(mΔt)² and normalizes by D·N·M") {
  const double dt = 0.5;
  const EpisodeDataset data({Matrix{{0, 0}, {1, 0}, {1, 2}}}, dt);
  AffineModel still(Matrix(2, 2), {0, 0});
  LossConfig config;
  const double expected = (1.0 / (dt * dt) + 5.0 / (4 * dt * dt)) / (2 * 1 * 2);
  CHECK(evaluate_loss(still, data, config, false).value == doctest::Approx(expected).epsilon(1e-14));
  config.m = 1;
  CHECK(evaluate_loss(still, data, config, false).value == doctest::Approx(1.0 / (dt * dt) / 2).epsilon(1e-14));
  config.m = 3;
  CHECK_THROWS_AS(evaluate_loss(still, data, config, false), ContractError);
}

TEST_CASE("the exact-mode IMDE model reproduces linear data") {
  const auto sys = builtin("spiral");
  const auto data = generate(sys, 10, 3, sys.dt, Sampling::uniform(sys.domain), 4);
  const auto imde = linear_imde_solve(*sys.a, sys.b, sys.dt, implicit_euler(), StepMode::exact(1e-15));
  AffineModel model(imde.a_h, imde.c_h);
  LossConfig config;
  config.mode = StepMode::exact(1e-15);
  CHECK(evaluate_loss(model, data, config, false).value < 1e-20);
}

TEST_CASE("δ vanishes when one more iteration changes nothing") {
  const auto sys = builtin("nodal_sink");
  const auto data = generate(sys, 8, 2, sys.dt, Sampling::uniform(sys.domain), 4);
  AffineModel model(*sys.a, sys.b);
  LossConfig config;
  config.mode = StepMode::newton(1);
  CHECK(delta_gap(model, data, config) <= 1e-20);
  AffineModel zero(Matrix(2, 2), {0, 0});
  config.mode = StepMode::fixed_point(2);
  CHECK(delta_gap(zero, data, config) == 0.0);
  config.mode = StepMode::exact();
  CHECK_THROWS_AS(delta_gap(model, data, config), ContractError);
}

TEST_CASE("loss gradient matches central differences for every scheme and mode") {
  const auto data = pendulum_data(4, 2, 0.1, 3);
  const auto model = init_params(ModelKind::mlp, 2, 2, 21);
  const auto theta0 = model->params_flat();
  for (const auto& tab : {implicit_euler(), implicit_midpoint(), implicit_trapezoidal()}) {
    for (const auto& mode : {StepMode::fixed_point(0), StepMode::fixed_point(1), StepMode::fixed_point(3),
                             StepMode::newton(1)}) {
      LossConfig config;
      config.tableau = tab;
      config.mode = mode;
      config.s = 2;
      const auto grad = evaluate_loss(*model, data, config, true).gradient;
      REQUIRE(grad.size() == theta0.size());
      double worst = 0.0;
      for (std::size_t i = 0; i < theta0.size(); ++i) {
        auto p = theta0, q = theta0;
        const double step = 1e-5 * std::max(1.0, std::abs(theta0[i]));
        p[i] += step;
        q[i] -= step;
        const double fd = (loss_at(*model, p, data, config) - loss_at(*model, q, data, config)) / (2 * step);
        worst = std::max(worst, std::abs(grad[i] - fd) / std::max(std::abs(fd), 1e-3));
      }
      INFO(tab.name, " ", mode.describe());
      CHECK(worst < 1e-6);
    }
  }
}

TEST_CASE("loss reports the episode and horizon that diverge") {
  const EpisodeDataset data({Matrix{{1.0}, {1.0}, {1.0}}, Matrix{{1e200}, {1.0}, {1.0}}}, 1.0);
  AffineModel wild(Matrix{{1e200}}, {0.0});
  LossConfig config;
  config.mode = StepMode::fixed_point(0);
  try {
    evaluate_loss(wild, data, config, false);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    const std::string what = e.what();
    CHECK(what.find("episode 1") != std::string::npos);
    CHECK(what.find("m = 1") != std::string::npos);
  }
}

TEST_CASE("teacher-forced and M-step losses bound each other") {
  const auto sys = builtin("pendulum");
  const auto traj = generate_trajectories(*sys.field, {{-1.0, -2.0}, {-0.5, -3.0}}, 40, 0.04);
  const auto pairs = split_episodes(traj, 1, 0.04);
  const auto shots = split_episodes(traj, 10, 0.04);
  std::vector<double> ratios;
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    const auto model = init_params(ModelKind::mlp, 2, 8, seed);
    LossConfig config;
    config.mode = StepMode::newton(2);
    const double one = evaluate_loss(*model, pairs, config, false).value;
    const double many = evaluate_loss(*model, shots, config, false).value;
    ratios.push_back(many / one);
  }
  for (double r : ratios) {
    CHECK(r > 1.0 / 20);
    CHECK(r < 20.0);
  }
}

TEST_CASE("training is deterministic and an adaptive run with c→0 matches the fixed run bitwise") {
  const auto data = pendulum_data(6, 1, 0.04, 8);
  TrainConfig fixed;
  fixed.loss.mode = StepMode::fixed_point(1);
  fixed.epochs = 40;
  fixed.lr = {LrSchedule::Kind::exp_decay, 1e-2, 1e-4};
  auto a = init_params(ModelKind::mlp, 2, 6, 5);
  auto b = a->clone();
  auto c = a->clone();
  const auto ra = train(*a, data, fixed);
  const auto rb = train(*b, data, fixed);
  REQUIRE(ra.rows.size() == 40);
  for (std::size_t i = 0; i < ra.rows.size(); ++i) CHECK(ra.rows[i].loss == rb.rows[i].loss);
  CHECK(a->params_flat() == b->params_flat());

  TrainConfig adaptive = fixed;
  adaptive.adaptive = AdaptiveConfig{1e-300, 5, 1, 20};
  const auto rc = train(*c, data, adaptive);
  CHECK(c->params_flat() == a->params_flat());
  for (std::size_t i = 0; i < ra.rows.size(); ++i) CHECK(rc.rows[i].loss == ra.rows[i].loss);
  CHECK(rc.final_l == 1);
  CHECK(rc.deltas.size() == 8);
  CHECK(rc.evals > ra.evals);
}

TEST_CASE("adaptive iteration grows L monotonically up to its cap") {
  const auto data = pendulum_data(10, 1, 0.1, 2);
  TrainConfig config;
  config.loss.mode = StepMode::fixed_point(0);
  config.epochs = 1000;
  config.adaptive = AdaptiveConfig{1.0, 10, 0, 3};
  auto model = init_params(ModelKind::mlp, 2, 8, 1);
  const auto report = train(*model, data, config);
  REQUIRE(!report.l_schedule.empty());
  CHECK(report.l_schedule.front().second == 0);
  for (std::size_t i = 1; i < report.l_schedule.size(); ++i) {
    CHECK(report.l_schedule[i].second == report.l_schedule[i - 1].second + 1);
    CHECK(report.l_schedule[i].first > report.l_schedule[i - 1].first);
  }
  CHECK(report.final_l >= 1);
  CHECK(report.final_l <= 3);
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    CHECK(report.rows[i].evals > report.rows[i - 1].evals);
    CHECK(report.rows[i].l >= report.rows[i - 1].l);
  }
  CHECK(report.rows.back().loss < report.rows.front().loss);
}

TEST_CASE("train report serializes to JSON and CSV") {
  const auto data = pendulum_data(3, 1, 0.04, 1);
  TrainConfig config;
  config.epochs = 20;
  config.adaptive = AdaptiveConfig{};
  auto model = init_params(ModelKind::mlp, 2, 4, 1);
  const auto report = train(*model, data, config);
  const auto json = report_json(report);
  CHECK(json.find("\"L_schedule\"") != std::string::npos);
  CHECK(json.find("\"eval_count\"") != std::string::npos);
  std::ostringstream csv;
  write_loss_csv(csv, report);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,loss,delta,L,eval_count,seconds");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 20);
}

TEST_CASE("exact loss stays below the unrolled loss plus the δ gap plus a fast-shrinking remainder") {
  for (int L : {1, 2}) {
    std::vector<double> hs, remainders;
    for (double dt : {0.04, 0.02, 0.01}) {
      const auto data = pendulum_data(8, 1, dt, 6);
      const auto model = init_params(ModelKind::mlp, 2, 8, 3);
      LossConfig config;
      config.mode = StepMode::fixed_point(L);
      const double unrolled = evaluate_loss(*model, data, config, false).value;
      LossConfig exact = config;
      exact.mode = StepMode::exact(1e-15);
      const double exact_loss = evaluate_loss(*model, data, exact, false).value;
      const double norm = static_cast<double>(data.dim() * data.size());
      const double delta_raw = delta_gap(*model, data, config) * norm;
      const double rem_raw =
          rollout_gap_raw(*model, data, config, StepMode::fixed_point(L + 1), StepMode::exact(1e-15));
      const double lhs = std::sqrt(exact_loss * norm);
      const double rhs = std::sqrt(unrolled * norm) + std::sqrt(delta_raw) + std::sqrt(rem_raw);
      CHECK(lhs <= rhs * (1 + 1e-12));
      hs.push_back(dt);
      remainders.push_back(std::sqrt(rem_raw));
    }
    CHECK(loglog_slope(hs, remainders) >= L + 2 - 0.25);
  }
}
