// rcml: fit, validate, simulate and benchmark random coefficient models.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "rcml/bench.hpp"
#include "rcml/io.hpp"
#include "rcml/rcml.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitNotConverged = 2;

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    rcml::io::write_text_file(path, text);
  }
}

int resolve_threads(std::optional<int> flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("RCML_THREADS")) {
    try {
      return std::stoi(env);
    } catch (const std::exception&) {
      throw rcml::Error(rcml::ErrorCode::invalid_config, std::string("RCML_THREADS is not an integer: ") + env);
    }
  }
  return 1;
}

struct FitArgs {
  std::string input;
  std::string config;
  std::string output;
  std::string sigma_mode;
  std::vector<double> sigma2;
  std::string dispersion;
  std::optional<int> threads;
};

int cmd_fit(const FitArgs& a) {
  auto req = rcml::io::fit_request_from_json(a.config.empty() ? json() : rcml::io::read_json_file(a.config));
  auto& cfg = req.config;
  if (!a.sigma_mode.empty()) cfg.sigma_mode = rcml::io::parse_sigma_mode(a.sigma_mode);
  if (!a.sigma2.empty()) cfg.sigma2 = Eigen::Map<const rcml::Vector>(a.sigma2.data(), static_cast<Eigen::Index>(a.sigma2.size()));
  if (!a.dispersion.empty()) req.dispersion = a.dispersion;
  if (a.threads || !req.threads_given) cfg.threads = resolve_threads(a.threads);
  if (cfg.sigma_mode == rcml::SigmaMode::user_fixed && cfg.sigma2.size() == 0) {
    std::cerr << "usage: rcml fit --sigma-mode user-fixed requires sigma2 values (--sigma2 V... or \"sigma2\" in the config)\n";
    return kExitError;
  }
  const auto data = rcml::io::load_dataset(a.input);
  const auto spec = rcml::io::dispersion_from_json(req.dispersion, static_cast<int>(data.q()));
  const auto result = rcml::fit(data, spec, cfg);
  emit(a.output, rcml::io::to_json(result).dump(2) + "\n");
  if (!result.converged) {
    std::cerr << "NotConverged: no convergence after " << result.iterations << " iterations\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_validate(const std::string& input, const std::string& output, bool with_stats) {
  const auto data = rcml::io::load_dataset(input);
  const auto report = rcml::validate_dataset(data);
  json out = rcml::io::to_json(report);
  if (with_stats) {
    json stats = json::array();
    for (const auto& s : rcml::compute_all_stats(data)) stats.push_back(rcml::io::to_json(s));
    out["stats"] = std::move(stats);
  }
  emit(output, out.dump(2) + "\n");
  if (!report.valid) {
    try {
      rcml::require_valid(report);
    } catch (const rcml::Error& e) {
      std::cerr << e.what() << "\n";
    }
    return kExitError;
  }
  return kExitOk;
}

int cmd_simulate(const std::string& config, const std::string& output, std::optional<std::uint64_t> seed,
                 bool truth) {
  auto sc = rcml::io::sim_config_from_json(rcml::io::read_json_file(config));
  if (seed) sc.seed = *seed;
  const auto sim = rcml::generate(sc);
  json out = rcml::io::to_json(sim.data);
  if (truth) out["truth"] = rcml::io::to_json(sim.truth);
  emit(output, out.dump(2) + "\n");
  return kExitOk;
}

rcml::BenchConfig bench_config_from_json(const json& j) {
  rcml::BenchConfig c;
  if (j.is_null()) return c;
  rcml::io::reject_unknown_keys(j, {"N", "n_obs", "p", "q", "repetitions", "min_batch_seconds", "seed"},
                                "bench config");
  auto ints = [&](const char* key, std::vector<int>& dst) {
    if (!j.contains(key)) return;
    dst = j[key].is_array() ? j[key].get<std::vector<int>>() : std::vector<int>{j[key].get<int>()};
  };
  try {
    ints("N", c.n_individuals);
    ints("n_obs", c.n_obs);
    ints("p", c.p);
    ints("q", c.q);
    c.repetitions = j.value("repetitions", c.repetitions);
    c.min_batch_seconds = j.value("min_batch_seconds", c.min_batch_seconds);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw rcml::Error(rcml::ErrorCode::invalid_config, std::string("bench config: ") + e.what());
  }
  return c;
}

int cmd_bench(const std::string& config, const std::string& output) {
  const auto cfg = bench_config_from_json(config.empty() ? json() : rcml::io::read_json_file(config));
  std::ostringstream csv;
  rcml::write_bench_csv(csv, rcml::run_bench(cfg));
  emit(output, csv.str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Restricted maximum likelihood for random coefficient models"};
  app.require_subcommand(1);

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "Fit D(theta) and alpha by Fisher scoring");
  fit->add_option("--input", fit_args.input, "Dataset (JSON, or long-format CSV)")->required();
  fit->add_option("--config", fit_args.config, "Fit config JSON");
  fit->add_option("--output", fit_args.output, "Result JSON (default: stdout)");
  fit->add_option("--sigma-mode", fit_args.sigma_mode, "hybrid-ols | user-fixed");
  fit->add_option("--sigma2", fit_args.sigma2, "Fixed sigma_k^2 values (one shared or one per individual)");
  fit->add_option("--dispersion", fit_args.dispersion, "full-symmetric | diagonal");
  fit->add_option("--threads", fit_args.threads, "Worker threads (fallback: RCML_THREADS)");

  std::string val_input, val_output;
  bool val_stats = false;
  auto* validate = app.add_subcommand("validate", "Check containment and rank conditions");
  validate->add_option("--input", val_input, "Dataset (JSON or CSV)")->required();
  validate->add_option("--output", val_output, "Report JSON (default: stdout)");
  validate->add_flag("--stats", val_stats, "Include per-individual sufficient statistics");

  std::string sim_config, sim_output;
  std::optional<std::uint64_t> sim_seed;
  bool sim_truth = false;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset");
  simulate->add_option("--config", sim_config, "Simulation config JSON")->required();
  simulate->add_option("--output", sim_output, "Dataset JSON (default: stdout)");
  simulate->add_option("--seed", sim_seed, "Overrides the config seed");
  simulate->add_flag("--truth", sim_truth, "Embed the generating parameters as a 'truth' block");

  std::string bench_config, bench_output;
  auto* bench = app.add_subcommand("bench", "Time full vs reduced likelihood evaluation");
  bench->add_option("--config", bench_config, "Bench grid JSON");
  bench->add_option("--output", bench_output, "CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitError;
  }

  try {
    if (*fit) return cmd_fit(fit_args);
    if (*validate) return cmd_validate(val_input, val_output, val_stats);
    if (*simulate) return cmd_simulate(sim_config, sim_output, sim_seed, sim_truth);
    if (*bench) return cmd_bench(bench_config, bench_output);
  } catch (const rcml::Error& e) {
    std::cerr << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
