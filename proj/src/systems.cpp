#include "odenet/systems.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "odenet/errors.hpp"

#ifndef ODENET_DATA_DIR
#define ODENET_DATA_DIR "data"
#endif

namespace odenet {

namespace {

using nlohmann::json;

BenchmarkSystem make_linear(std::string name, Matrix a, std::vector<double> b, Box domain, double dt,
                            std::string tableau, StepMode mode) {
  BenchmarkSystem s = linear_system(std::move(name), std::move(a), std::move(b), std::move(domain), dt);
  s.tableau = std::move(tableau);
  s.mode = mode;
  return s;
}

BenchmarkSystem glycolysis(GlycolysisVariant variant) {
  const std::string path = data_dir() + "/glycolysis.json";
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read glycolysis parameters '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  BenchmarkSystem s;
  s.name = variant == GlycolysisVariant::corrected ? "glycolysis" : "glycolysis_literal";
  const auto params = glycolysis_params_from_json(ss.str(), &s.x0);
  s.field = std::make_shared<GlycolysisField>(params, variant);
  for (double v : s.x0) {
    s.domain.lo.push_back(0.8 * v);
    s.domain.hi.push_back(1.2 * v);
  }
  s.dt = 0.01;
  s.horizon = 5.0;
  s.tableau = "implicit_midpoint";
  s.mode = StepMode::newton(1);
  return s;
}

}  // namespace

bool Box::contains(std::span<const double> x) const {
  if (x.size() != lo.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] < lo[i] || x[i] > hi[i]) return false;
  return true;
}

GlycolysisParams glycolysis_params_from_json(const std::string& text, std::vector<double>* x0) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("glycolysis parameters: ") + e.what());
  }
  if (!j.contains("parameters") || !j["parameters"].is_object())
    throw ConfigError("glycolysis parameters: missing 'parameters' object");
  const auto& p = j["parameters"];
  auto get = [&](const char* key) {
    if (!p.contains(key) || !p[key].is_number())
      throw ConfigError(std::string("glycolysis parameters: missing number '") + key + "'");
    return p[key].get<double>();
  };
  GlycolysisParams out{get("J0"), get("k1"), get("k2"),    get("k3"), get("k4"),  get("k5"), get("k6"),
                       get("k"),  get("kappa"), get("q"), get("K1"), get("psi"), get("N"),  get("A")};
  if (x0) {
    if (!j.contains("x0") || !j["x0"].is_array() || j["x0"].size() != 7)
      throw ConfigError("glycolysis parameters: 'x0' must list 7 concentrations");
    *x0 = j["x0"].get<std::vector<double>>();
  }
  return out;
}

std::string data_dir() {
  if (const char* env = std::getenv("ODENET_DATA_DIR"); env && *env) return env;
  return ODENET_DATA_DIR;
}

std::vector<std::string> builtin_names() {
  return {"saddle", "center",   "improper_node", "spiral",           "nodal_sink",
          "nodal_sink_literal", "pendulum", "glycolysis", "glycolysis_literal"};
}

BenchmarkSystem linear_system(std::string name, Matrix a, std::vector<double> b, Box domain, double dt) {
  if (a.rows() != a.cols() || a.rows() != b.size() || b.empty())
    throw ConfigError("linear system '" + name + "': A must be D×D and b length D");
  if (domain.lo.size() != b.size() || domain.hi.size() != b.size())
    throw ConfigError("linear system '" + name + "': domain dimension differs from A");
  BenchmarkSystem s;
  s.name = std::move(name);
  s.field = std::make_shared<AffineField>(a, b);
  s.domain = std::move(domain);
  s.dt = dt;
  s.horizon = dt;
  s.tableau = "implicit_euler";
  s.mode = StepMode::exact();
  s.a = std::move(a);
  s.b = std::move(b);
  return s;
}

BenchmarkSystem builtin(const std::string& name) {
  if (name == "saddle")
    return make_linear(name, {{1, 1}, {1, -1}}, {-2, 0}, {{0, 0}, {2, 2}}, 0.1, "implicit_euler",
                       StepMode::fixed_point(0));
  if (name == "center")
    return make_linear(name, {{1, 2}, {-5, -1}}, {0, 0}, {{-1, -1}, {1, 1}}, 0.12, "implicit_trapezoidal",
                       StepMode::fixed_point(1));
  if (name == "improper_node")
    return make_linear(name, {{1, -4}, {4, -7}}, {0, 0}, {{-1, -1}, {1, 1}}, 0.12, "implicit_midpoint",
                       StepMode::fixed_point(2));
  if (name == "spiral")
    return make_linear(name, {{-1, -1}, {2, -1}}, {-1, 5}, {{-3, 0}, {-1, 2}}, 0.05, "implicit_euler",
                       StepMode::fixed_point(3));
  if (name == "nodal_sink")
    return make_linear(name, {{-2, 1}, {1, -2}}, {-2, 1}, {{-2, -1}, {0, 1}}, 0.12, "implicit_euler",
                       StepMode::newton(1));
  if (name == "nodal_sink_literal")
    return make_linear(name, {{0, 1}, {1, -2}}, {-4, 1}, {{-2, -1}, {0, 1}}, 0.12, "implicit_euler",
                       StepMode::newton(1));
  if (name == "pendulum") {
    BenchmarkSystem s;
    s.name = name;
    s.field = std::make_shared<PendulumField>();
    s.domain = {{-1.5, -4.0}, {0.0, 0.0}};
    s.dt = 0.01;
    s.horizon = 4.0;
    s.tableau = "implicit_euler";
    s.mode = StepMode::fixed_point(5);
    s.x0 = {-3.876, -1.193};
    return s;
  }
  if (name == "glycolysis") return glycolysis(GlycolysisVariant::corrected);
  if (name == "glycolysis_literal") return glycolysis(GlycolysisVariant::literal);
  std::string known;
  for (const auto& n : builtin_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown system '" + name + "' (known: " + known + ")");
}

}  // namespace odenet
