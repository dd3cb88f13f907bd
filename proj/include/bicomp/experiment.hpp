#pragma once

#include "bicomp/metrics.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bicomp {

struct GammaSpec {
  enum class Kind { constant, inverse_L, gamma_max, decaying };
  Kind kind = Kind::inverse_L;
  double value = 1.0;  // the step itself for constant, a multiplier otherwise
};

/// One algorithm of an experiment: a preset plus optional overrides.
struct AlgoEntry {
  std::string label;
  AlgoName name = AlgoName::mcm;
  std::optional<CompressorSpec> up;
  std::optional<CompressorSpec> dwn;
  std::optional<double> alpha_up;
  std::optional<double> alpha_dwn;
  std::optional<GammaSpec> gamma;
  std::optional<MemoryMode> memory;
  std::optional<int> groups;
  std::optional<double> participation;
  std::optional<UpdateMode> update;
};

struct ExperimentConfig {
  SynthOptions problem;
  long iterations = 100;
  BatchSpec batch = BatchSpec::full();
  std::vector<std::uint64_t> seeds{0};
  GammaSpec gamma;
  CompressorSpec up = CompressorSpec::quantize(1);
  CompressorSpec dwn = CompressorSpec::quantize(1);
  double participation = 1.0;
  std::vector<AlgoEntry> algorithms;
  std::filesystem::path output_dir = "out";
};

/// Throws ConfigError naming the offending field.
void validate_experiment(const ExperimentConfig& cfg);

struct ResolvedAlgo {
  std::string label;
  AlgoConfig config;
  double gamma_max = 0.0;
};

ResolvedAlgo resolve_algorithm(const ExperimentConfig& cfg, const AlgoEntry& entry,
                               const Problem& problem);

struct ExperimentResult {
  std::vector<ResolvedAlgo> algorithms;
  std::vector<std::vector<RunTrace>> traces;  // [algorithm][seed]
  std::vector<RunSummary> summaries;

  bool all_diverged() const;
};

/// Runs every (algorithm, seed) pair, at most `jobs` at a time. Results do
/// not depend on `jobs`.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Problem& problem, int jobs = 1,
                                std::uint64_t seed_offset = 0);

/// trace_<label>_seed<seed>.csv, summary_<label>.csv and summary.json, each
/// written to a temporary name and renamed into place.
void write_outputs(const ExperimentResult& result, const std::filesystem::path& dir,
                   const nlohmann::json& metadata = {});

void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

enum class SweepAxis { gamma, alpha_dwn, s, q };
SweepAxis parse_sweep_axis(std::string_view name);
std::string_view to_string(SweepAxis axis);

struct SweepRow {
  SweepAxis axis;
  double value = 0.0;
  std::string algorithm;
  double gamma = 0.0;
  double gamma_max = 0.0;
  double saturation_level = 0.0;
  int diverged_seeds = 0;
  bool past_gamma_max = false;
};

/// One experiment per value with the axis applied to every algorithm.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const Problem& problem, SweepAxis axis,
                                const std::vector<double>& values, int jobs = 1,
                                std::uint64_t seed_offset = 0);

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace bicomp
