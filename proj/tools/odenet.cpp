#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "odenet/errors.hpp"
#include "odenet/experiments.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kNumerical = 3 };

std::string escape(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << "error: kind=" << kind << " message=\"" << escape(message) << "\"\n";
  return code;
}

odenet::Json load_config(const std::string& path) {
  if (path.empty()) throw odenet::ConfigError("--config <path> is required for this command");
  std::ifstream in(path);
  if (!in) throw odenet::ConfigError("cannot open config '" + path + "'");
  try {
    return odenet::Json::parse(in);
  } catch (const odenet::Json::parse_error& e) {
    throw odenet::ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train neural ODE vector fields through implicit integrators and compare against their IMDE."};
  app.require_subcommand(1);

  std::string config_path;
  long long seed = -1;
  std::string out;
  bool paper_scale = false;
  int threads = 1;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "Override the configured seed")->check(CLI::NonNegativeNumber);
  app.add_option("--out", out, "Override the output directory");
  app.add_flag("--paper-scale", paper_scale, "Use the full-scale protocol (1e5 updates, width 128)");
  app.add_option("--threads", threads, "Worker threads for grids and replicates")->check(CLI::PositiveNumber);

  auto* generate = app.add_subcommand("generate", "Generate a trajectory dataset");
  auto* train = app.add_subcommand("train", "Train one model and evaluate it");
  auto* imde = app.add_subcommand("imde", "Tabulate IMDE coefficients or field values");
  auto* sweep = app.add_subcommand("sweep", "Convergence sweep over dt or s");
  auto* compare = app.add_subcommand("compare", "Paired adaptive versus fixed-L runs");
  auto* report = app.add_subcommand("report", "Merge run directories into report tables");
  std::vector<std::string> run_dirs;
  report->add_option("dirs", run_dirs, "Run directories")->required();
  for (auto* sub : {generate, train, imde, sweep, compare, report}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kConfig);
  }

  odenet::RunOptions options;
  if (seed >= 0) options.seed = static_cast<std::uint64_t>(seed);
  if (!out.empty()) options.out = out;
  options.paper_scale = paper_scale;
  options.threads = threads;

  try {
    std::string summary;
    if (*report) {
      summary = odenet::cmd_report(run_dirs, options);
    } else if (*imde) {
      summary = odenet::cmd_imde(config_path.empty() ? odenet::Json::object() : load_config(config_path), options);
    } else {
      const odenet::Json config = load_config(config_path);
      if (*generate) summary = odenet::cmd_generate(config, options);
      else if (*train) summary = odenet::cmd_train(config, options);
      else if (*sweep) summary = odenet::cmd_sweep(config, options);
      else summary = odenet::cmd_compare(config, options);
    }
    std::cout << summary;
    if (!summary.empty() && summary.back() != '\n') std::cout << '\n';
    return kOk;
  } catch (const odenet::ConfigError& e) {
    return fail("config", e.what(), kConfig);
  } catch (const odenet::ParseError& e) {
    return fail("parse", e.what(), kConfig);
  } catch (const odenet::Json::exception& e) {
    return fail("config", e.what(), kConfig);
  } catch (const odenet::NumericalError& e) {
    return fail("numerical", e.what(), kNumerical);
  } catch (const odenet::ContractError& e) {
    return fail("contract", e.what(), kConfig);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}
