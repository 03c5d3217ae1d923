#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "doctest.h"
#include "odenet/data.hpp"
#include "odenet/errors.hpp"
#include "odenet/linalg.hpp"
#include "odenet/systems.hpp"

using namespace odenet;

namespace {

std::vector<double> eval(const BenchmarkSystem& s, std::vector<double> x) { return (*s.field)(x); }

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "odenet_test_data";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

Matrix ramp(std::size_t rows, std::size_t cols, double start) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = start + static_cast<double>(i);
  return m;
}

}  // namespace

TEST_CASE("builtin fields match their equations at sample points") {
  CHECK(eval(builtin("saddle"), {1, 1}) == std::vector<double>{0, 0});
  const auto p = eval(builtin("pendulum"), {1, 0});
  CHECK(p[0] == doctest::Approx(-0.2).epsilon(1e-15));
  CHECK(p[1] == 1.0);
  CHECK(eval(builtin("center"), {0, 0}) == std::vector<double>{0, 0});
  CHECK(eval(builtin("spiral"), {0, 0}) == std::vector<double>{-1, 5});
  CHECK(eval(builtin("nodal_sink"), {1, 0}) == std::vector<double>{-4, 2});
  CHECK(eval(builtin("improper_node"), {1, 1}) == std::vector<double>{-3, -3});
}

TEST_CASE("unknown system names are rejected") {
  CHECK_THROWS_AS(builtin("lorenz"), ConfigError);
  for (const auto& name : builtin_names()) CHECK(builtin(name).dim() >= 2);
}

TEST_CASE("glycolysis has seven species and the two drain variants differ only in S2") {
  const auto corrected = builtin("glycolysis");
  const auto literal = builtin("glycolysis_literal");
  REQUIRE(corrected.dim() == 7);
  REQUIRE(literal.dim() == 7);
  REQUIRE(corrected.x0.size() == 7);
  const auto fc = eval(corrected, corrected.x0);
  const auto fl = eval(literal, corrected.x0);
  for (std::size_t i = 0; i < 7; ++i)
    if (i != 1) CHECK(fc[i] == fl[i]);
  const auto& x = corrected.x0;
  CHECK(fl[1] - fc[1] == doctest::Approx(12.0 * x[1] * x[4] - 12.0 * x[1] - 2.0 * x[4]));
  CHECK(fc[0] == doctest::Approx(2.5 - 100.0 * x[0] * x[5] / (1.0 + std::pow(x[5] / 0.52, 4))));
  CHECK(fc[6] == doctest::Approx(0.1 * 13.0 * (x[3] - x[6]) - 1.8 * x[6]));
}

TEST_CASE("glycolysis parameters reject malformed documents") {
  CHECK_THROWS_AS(glycolysis_params_from_json("{"), ConfigError);
  CHECK_THROWS_AS(glycolysis_params_from_json(R"({"parameters": {"J0": 1}})"), ConfigError);
}

TEST_CASE("generated linear trajectories follow the exact flow") {
  for (const char* name : {"saddle", "spiral", "center"}) {
    const auto sys = builtin(name);
    const double dt = sys.dt;
    const auto data = generate(sys, 5, 10, dt, Sampling::uniform(sys.domain), 7);
    REQUIRE(data.size() == 5);
    REQUIRE(data.steps() == 10);
    const Matrix e = matrix_exp(*sys.a, dt);
    const Matrix e_minus_i = e - Matrix::identity(2);
    for (const auto& ep : data.episodes()) {
      for (std::size_t m = 0; m + 1 < ep.rows(); ++m) {
        std::vector<double> x(ep.row_span(m).begin(), ep.row_span(m).end());
        auto next = matvec(e, x);
        bool has_offset = sys.b[0] != 0.0 || sys.b[1] != 0.0;
        if (has_offset) {
          const auto shift = matvec(e_minus_i, solve(*sys.a, sys.b));
          for (int d = 0; d < 2; ++d) next[d] += shift[d];
        }
        const auto got = ep.row_span(m + 1);
        for (int d = 0; d < 2; ++d) CHECK(std::abs(got[d] - next[d]) <= 1e-10 * std::max(1.0, std::abs(next[d])));
      }
    }
  }
}

TEST_CASE("generation validates its inputs and reports divergence") {
  const auto sys = builtin("saddle");
  CHECK_THROWS_AS(generate(sys, 2, 2, 0.0, Sampling::uniform(sys.domain), 1), ConfigError);
  CHECK_THROWS_AS(generate(sys, 0, 2, 0.1, Sampling::uniform(sys.domain), 1), ConfigError);
  const auto blowup = linear_system("blowup", {{800, 0}, {0, 800}}, {0, 0}, {{1, 1}, {2, 2}}, 1.0);
  try {
    generate(blowup, 3, 3, 1.0, Sampling::listed({{0, 0}, {1, 1}, {0, 0}}), 1);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("trajectory 1") != std::string::npos);
  }
}

TEST_CASE("sampling is deterministic per seed and stays inside the box") {
  const Box box{{-1.5, -4.0}, {0.0, 0.0}};
  const auto a = sample_initials(Sampling::uniform(box), 50, 11);
  const auto b = sample_initials(Sampling::uniform(box), 50, 11);
  const auto c = sample_initials(Sampling::uniform(box), 50, 12);
  CHECK(a == b);
  CHECK(a != c);
  for (const auto& x : a) CHECK(box.contains(x));
  const auto scaled = sample_initials(Sampling::scaled({1.0, 2.0}, 0.2), 20, 3);
  for (const auto& x : scaled) {
    CHECK(x[1] == doctest::Approx(2.0 * x[0]));
    CHECK(x[0] >= 0.8);
    CHECK(x[0] <= 1.2);
  }
  CHECK_THROWS_AS(sample_initials(Sampling::listed({{0, 0}}), 2, 0), ConfigError);
}

TEST_CASE("threaded generation is identical to serial generation") {
  const auto sys = builtin("pendulum");
  const auto s = generate(sys, 6, 5, 0.01, Sampling::uniform(sys.domain), 5, 1);
  const auto t = generate(sys, 6, 5, 0.01, Sampling::uniform(sys.domain), 5, 3);
  CHECK(s.episodes() == t.episodes());
}

TEST_CASE("split_episodes windows share endpoints and count the dropped tail") {
  const Matrix five = ramp(5, 2, 0.0);
  const auto pairs = split_episodes({five}, 1, 0.1);
  REQUIRE(pairs.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(pairs.episodes()[i].rows() == 2);
    CHECK(pairs.episodes()[i](0, 0) == five(i, 0));
    CHECK(pairs.episodes()[i](1, 1) == five(i + 1, 1));
  }
  CHECK(pairs.meta().dropped_states == 0);

  const auto two = split_episodes({ramp(21, 3, 0.5)}, 10, 0.1);
  CHECK(two.size() == 2);
  CHECK(two.meta().dropped_states == 0);
  CHECK(split_episodes({ramp(24, 3, 0.5)}, 10, 0.1).meta().dropped_states == 3);

  const auto none = split_episodes({ramp(2, 2, 0.0)}, 10, 0.1);
  CHECK(none.empty());
  CHECK(none.meta().dropped_states == 2);
  CHECK(none.meta().warnings.size() == 1);
}

TEST_CASE("split_episodes keeps retained states bit-exact") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix t(33, 2);
  for (auto& v : t.values()) v = n(rng);
  const auto data = split_episodes({t}, 4, 0.1);
  REQUIRE(data.size() == 8);
  for (std::size_t k = 0; k < data.size(); ++k)
    for (std::size_t i = 0; i <= 4; ++i)
      for (std::size_t d = 0; d < 2; ++d) CHECK(data.episodes()[k](i, d) == t(4 * k + i, d));
}

TEST_CASE("datasets round-trip bitwise through CSV and sidecar") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  std::vector<Matrix> eps(4, Matrix(6, 3));
  for (auto& e : eps)
    for (auto& v : e.values()) v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
  DatasetMeta meta;
  meta.system = "random";
  meta.seed = 17;
  meta.domain = {{-1, -1, -1}, {1, 1, 1}};
  const EpisodeDataset data(eps, 0.037, meta);
  const auto path = temp_path("roundtrip.csv");
  save_dataset(data, path);
  const auto back = load_dataset(path);
  CHECK(back.episodes() == data.episodes());
  CHECK(back.dt() == data.dt());
  CHECK(back.meta().system == "random");
  CHECK(back.meta().seed == 17);
  CHECK(back.meta().domain.hi == meta.domain.hi);
}

TEST_CASE("loading requires the sidecar and reports malformed lines") {
  const auto path = temp_path("orphan.csv");
  std::filesystem::remove(sidecar_path(path));
  { std::ofstream(path) << "episode_id,step_index,x1\n0,0,1\n0,1,2\n"; }
  CHECK_THROWS_AS(load_dataset(path), ConfigError);

  const auto good = temp_path("handmade.csv");
  { std::ofstream(good) << "episode_id,step_index,x1,x2\n0,0,1.5,-2\n0,1,1.25,-1.75\n"; }
  { std::ofstream(sidecar_path(good)) << R"({"dim": 2, "dt": 0.1})"; }
  const auto data = load_dataset(good);
  REQUIRE(data.size() == 1);
  CHECK(data.steps() == 1);
  CHECK(data.episodes()[0] == Matrix{{1.5, -2}, {1.25, -1.75}});

  const auto bad = temp_path("bad.csv");
  { std::ofstream(bad) << "episode_id,step_index,x1,x2\n0,0,1.5,-2\n0,1,oops,-1.75\n"; }
  { std::ofstream(sidecar_path(bad)) << R"({"dim": 2, "dt": 0.1})"; }
  try {
    load_dataset(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("subsample picks a deterministic subset") {
  std::vector<Matrix> eps;
  for (int i = 0; i < 10; ++i) eps.push_back(ramp(2, 1, 10.0 * i));
  const EpisodeDataset data(eps, 0.1);
  const auto a = data.subsample(4, 9);
  const auto b = data.subsample(4, 9);
  CHECK(a.size() == 4);
  CHECK(a.episodes() == b.episodes());
  CHECK(data.subsample(20, 1).size() == 10);
  CHECK(data.states_at(1).rows() == 10);
  CHECK(data.all_states().rows() == 20);
}
