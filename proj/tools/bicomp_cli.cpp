// Command-line front end: run, sweep, validate, gamma-max.

#include "bicomp/config.hpp"
#include "bicomp/validation.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

namespace {

using namespace bicomp;

enum Exit { kOk = 0, kConfigError = 1, kValidationFailure = 2, kAllDiverged = 3 };

nlohmann::json finite_or_null(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

nlohmann::json bounds_json(const GammaBounds& b) {
  return {{"gamma_up", finite_or_null(b.up)},
          {"gamma_dwn", finite_or_null(b.dwn)},
          {"gamma_upsilon", finite_or_null(b.upsilon)},
          {"gamma_degraded", finite_or_null(b.degraded)},
          {"gamma_max", finite_or_null(b.gamma_max)},
          {"L_tilde", finite_or_null(l_tilde(b.gamma_max))}};
}

int run_preflight(long trials, std::uint64_t seed) {
  SuiteOptions o;
  o.trials = trials;
  o.seed = seed;
  int failures = 0;
  for (const auto& r : run_validation_suite(o)) {
    if (!r.passed()) {
      std::cerr << "validation failed: " << r.check << " (" << r.detail << ")\n";
      ++failures;
    }
  }
  return failures;
}

nlohmann::json problem_metadata(const Problem& p) {
  return {{"family", std::string(to_string(p.family()))},
          {"d", p.dim()},
          {"N", p.workers()},
          {"L", p.smoothness()},
          {"mu", p.strong_convexity()},
          {"f_star", p.f_star()},
          {"sigma_sq_at_opt", p.sigma_sq_at_opt()},
          {"hetero_B_sq", p.hetero_B_sq()}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator of distributed SGD with bidirectional compression"};
  app.require_subcommand(1);

  std::string config_path;
  int jobs = 1;
  std::uint64_t seed_offset = 0;
  std::string output;
  bool skip_validation = false;
  long preflight_trials = 10'000;

  auto* run = app.add_subcommand("run", "run every (algorithm, seed) of a config");
  auto* sweep = app.add_subcommand("sweep", "repeat a run over values of one axis");
  for (auto* sub : {run, sweep}) {
    sub->add_option("--config", config_path, "YAML experiment file")->required();
    sub->add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber);
    sub->add_option("--seed-offset", seed_offset, "added to every seed");
    sub->add_option("--output", output, "output directory (overrides output_dir)");
    sub->add_flag("--skip-validation", skip_validation, "do not run the validation suite first");
    sub->add_option("--preflight-trials", preflight_trials, "trials for the preflight checks")
        ->check(CLI::Range(2L, 100'000'000L));
  }
  std::string axis;
  std::vector<double> values;
  sweep->add_option("--axis", axis, "gamma, alpha_dwn, s or q");
  sweep->add_option("--values", values, "values of the axis")->delimiter(',');

  auto* validate = app.add_subcommand("validate", "run the validation suite");
  std::string only;
  long trials = 10'000;
  std::uint64_t validate_seed = 0;
  validate->add_option("--only", only, "run a single check");
  validate->add_option("--trials", trials, "Monte-Carlo trials")->check(CLI::Range(2L, 100'000'000L));
  validate->add_option("--seed", validate_seed, "seed of the suite");
  validate->add_option("--output", output, "also write the JSON report here");

  auto* gmax = app.add_subcommand("gamma-max", "print the step-size bounds");
  double L = 0.0;
  double omega_up = 0.0;
  double omega_dwn = 0.0;
  int workers = 1;
  std::string format = "json";
  gmax->add_option("--config", config_path, "YAML experiment file");
  gmax->add_option("--L", L, "smoothness constant");
  gmax->add_option("--omega-up", omega_up, "uplink variance factor");
  gmax->add_option("--omega-dwn", omega_dwn, "downlink variance factor");
  gmax->add_option("--workers", workers, "number of workers N");
  gmax->add_option("--format", format, "json or text")->check(CLI::IsMember({"json", "text"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) {
      SuiteOptions o;
      o.trials = trials;
      o.seed = validate_seed;
      o.only = only;
      const auto reports = run_validation_suite(o);
      nlohmann::json doc = nlohmann::json::array();
      bool ok = true;
      for (const auto& r : reports) {
        doc.push_back(r.to_json());
        ok = ok && r.passed();
      }
      const std::string text = doc.dump(2) + "\n";
      std::cout << text;
      if (!output.empty()) write_file_atomic(output, text);
      return ok ? kOk : kValidationFailure;
    }

    if (*gmax) {
      nlohmann::json doc;
      if (!config_path.empty()) {
        const LoadedConfig loaded = load_config(config_path);
        const Problem problem = synth_problem(loaded.experiment.problem);
        doc["L"] = problem.smoothness();
        doc["N"] = problem.workers();
        doc["algorithms"] = nlohmann::json::array();
        for (const auto& e : loaded.experiment.algorithms) {
          const ResolvedAlgo r = resolve_algorithm(loaded.experiment, e, problem);
          const int d = problem.dim();
          nlohmann::json j = bounds_json(gamma_bounds(problem.smoothness(), r.config.up.omega(d),
                                                      r.config.dwn.omega(d), problem.workers(),
                                                      r.config.update == UpdateMode::degraded));
          j["algorithm"] = r.label;
          j["omega_up"] = r.config.up.omega(d);
          j["omega_dwn"] = r.config.dwn.omega(d);
          doc["algorithms"].push_back(j);
        }
      } else {
        if (!(L > 0.0)) throw ConfigError("--L", "must be positive (or pass --config)");
        if (workers < 1) throw ConfigError("--workers", "must be at least 1");
        if (omega_up < 0.0 || omega_dwn < 0.0) throw ConfigError("--omega-up", "must be non-negative");
        doc = bounds_json(gamma_bounds(L, omega_up, omega_dwn, workers));
        doc["L"] = L;
        doc["omega_up"] = omega_up;
        doc["omega_dwn"] = omega_dwn;
        doc["N"] = workers;
      }
      if (format == "json") {
        std::cout << doc.dump(2) << "\n";
      } else {
        auto print = [](const nlohmann::json& j) {
          for (const char* key : {"gamma_up", "gamma_dwn", "gamma_upsilon", "gamma_degraded", "gamma_max"}) {
            if (j[key].is_null()) std::printf("%-15s inf\n", key);
            else std::printf("%-15s %.17g\n", key, j[key].get<double>());
          }
        };
        if (doc.contains("algorithms")) {
          for (const auto& j : doc["algorithms"]) {
            std::printf("[%s]\n", j["algorithm"].get<std::string>().c_str());
            print(j);
          }
        } else {
          print(doc);
        }
      }
      return kOk;
    }

    LoadedConfig loaded = load_config(config_path);
    ExperimentConfig& cfg = loaded.experiment;
    if (!output.empty()) cfg.output_dir = output;
    if (!skip_validation) {
      if (run_preflight(preflight_trials, 0) > 0) {
        std::cerr << "aborting; pass --skip-validation to override\n";
        return kValidationFailure;
      }
    }
    const Problem problem = synth_problem(cfg.problem);

    if (*run) {
      const ExperimentResult result = run_experiment(cfg, problem, jobs, seed_offset);
      write_outputs(result, cfg.output_dir, {{"problem", problem_metadata(problem)},
                                             {"iterations", cfg.iterations},
                                             {"seed_offset", seed_offset}});
      for (std::size_t a = 0; a < result.summaries.size(); ++a) {
        const auto& s = result.summaries[a];
        std::printf("%-16s saturation %.4f  final %.4f\n", result.algorithms[a].label.c_str(),
                    s.saturation_level, s.mean_log10.back());
      }
      return result.all_diverged() ? kAllDiverged : kOk;
    }

    SweepSpec spec;
    if (loaded.sweep) spec = *loaded.sweep;
    if (!axis.empty()) spec.axis = parse_sweep_axis(axis);
    if (!values.empty()) spec.values = values;
    if (spec.values.empty()) throw ConfigError("sweep.values", "no sweep values given");
    const auto rows = run_sweep(cfg, problem, spec.axis, spec.values, jobs, seed_offset);
    std::ostringstream csv;
    write_sweep_csv(csv, rows);
    std::filesystem::create_directories(cfg.output_dir);
    write_file_atomic(cfg.output_dir / ("sweep_" + std::string(to_string(spec.axis)) + ".csv"), csv.str());
    std::cout << csv.str();
    bool all_diverged = true;
    for (const auto& r : rows) all_diverged = all_diverged && std::isinf(r.saturation_level);
    return all_diverged ? kAllDiverged : kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
}
