#include "bicomp/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace bicomp {

namespace {

std::string field(std::size_t index, const char* key) {
  return "algorithms[" + std::to_string(index) + "]." + key;
}

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

void validate_experiment(const ExperimentConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("iterations", "K must be at least 1");
  if (cfg.seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  if (cfg.algorithms.empty()) throw ConfigError("algorithms", "at least one algorithm is required");
  if (!cfg.batch.full_batch && cfg.batch.size < 1) throw ConfigError("batch", "b must be at least 1");
  if (cfg.problem.dim < 1) throw ConfigError("problem.d", "must be at least 1");
  if (cfg.problem.workers < 1) throw ConfigError("problem.N", "must be at least 1");
  if (!cfg.batch.full_batch && cfg.batch.size > cfg.problem.samples_per_worker)
    throw ConfigError("batch", "b must not exceed n_per_worker");
  if (!(cfg.participation > 0.0 && cfg.participation <= 1.0))
    throw ConfigError("participation", "q must lie in (0, 1]");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < cfg.algorithms.size(); ++i) {
    const auto& a = cfg.algorithms[i];
    if (a.label.empty()) throw ConfigError(field(i, "label"), "must not be empty");
    if (a.label.find_first_of(",/\\ \t\n") != std::string::npos)
      throw ConfigError(field(i, "label"), "must not contain separators or whitespace");
    if (!labels.insert(a.label).second)
      throw ConfigError(field(i, "label"), "duplicate algorithm '" + a.label + "'");
    if (a.participation && !(*a.participation > 0.0 && *a.participation <= 1.0))
      throw ConfigError(field(i, "participation"), "q must lie in (0, 1]");
  }
}

ResolvedAlgo resolve_algorithm(const ExperimentConfig& cfg, const AlgoEntry& e,
                               const Problem& problem) {
  const int d = problem.dim();
  const int n = problem.workers();
  std::size_t index = 0;
  while (index < cfg.algorithms.size() && cfg.algorithms[index].label != e.label) ++index;
  try {
    AlgoConfig a = make_preset(e.name, e.up.value_or(cfg.up), e.dwn.value_or(cfg.dwn), d, n,
                               e.groups.value_or(1));
    // Explicit compressors that the preset replaced are a misconfiguration.
    if (e.up && !(a.up == *e.up)) throw ConfigError("up", "preset requires " + a.up.describe());
    if (e.dwn && !(a.dwn == *e.dwn)) throw ConfigError("dwn", "preset requires " + a.dwn.describe());
    if (e.memory) {
      a.memory = *e.memory;
      if (a.memory.kind == MemoryMode::Kind::grouped && e.groups) a.memory.groups = *e.groups;
    }
    if (e.update) a.update = *e.update;
    if (e.alpha_up) a.alpha_up = *e.alpha_up;
    if (e.alpha_dwn) a.alpha_dwn = *e.alpha_dwn;
    a.participation = e.participation.value_or(cfg.participation);
    a.batch = cfg.batch;
    validate_config(a, n);

    ResolvedAlgo r;
    r.label = e.label;
    r.gamma_max = gamma_max(a, problem);
    const GammaSpec g = e.gamma.value_or(cfg.gamma);
    switch (g.kind) {
      case GammaSpec::Kind::constant:
        a.gamma = GammaPolicy::constant(g.value);
        break;
      case GammaSpec::Kind::inverse_L:
        a.gamma = GammaPolicy::constant(g.value / problem.smoothness());
        break;
      case GammaSpec::Kind::gamma_max:
        a.gamma = GammaPolicy::constant(g.value * r.gamma_max);
        break;
      case GammaSpec::Kind::decaying:
        a.gamma = GammaPolicy::decaying(problem.strong_convexity(), l_tilde(r.gamma_max));
        break;
    }
    if (a.gamma.kind == GammaPolicy::Kind::constant && !(a.gamma.gamma >= 0.0))
      throw ConfigError("gamma", "step size must be non-negative");
    r.config = a;
    return r;
  } catch (const ConfigError& err) {
    if (err.field().rfind("algorithms[", 0) == 0) throw;
    const std::string message = err.what();
    const std::string prefix = err.field() + ": ";
    throw ConfigError(field(index, err.field().c_str()),
                      message.rfind(prefix, 0) == 0 ? message.substr(prefix.size()) : message);
  }
}

bool ExperimentResult::all_diverged() const {
  for (const auto& per_algo : traces)
    for (const auto& t : per_algo)
      if (t.status != TraceStatus::diverged) return false;
  return true;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Problem& problem, int jobs,
                                std::uint64_t seed_offset) {
  validate_experiment(cfg);
  ExperimentResult result;
  for (const auto& e : cfg.algorithms) result.algorithms.push_back(resolve_algorithm(cfg, e, problem));

  const std::size_t n_algo = result.algorithms.size();
  const std::size_t n_seed = cfg.seeds.size();
  result.traces.assign(n_algo, std::vector<RunTrace>(n_seed));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t task = next++; task < n_algo * n_seed; task = next++) {
      const std::size_t a = task / n_seed;
      const std::size_t s = task % n_seed;
      RunOptions opt;
      opt.iterations = cfg.iterations;
      opt.seed = cfg.seeds[s] + seed_offset;
      result.traces[a][s] =
          run_algorithm(result.algorithms[a].config, problem, opt, result.algorithms[a].label);
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(n_algo * n_seed)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& per_algo : result.traces) result.summaries.push_back(aggregate(per_algo));
  return result;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << contents;
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_outputs(const ExperimentResult& result, const std::filesystem::path& dir,
                   const nlohmann::json& metadata) {
  std::filesystem::create_directories(dir);
  nlohmann::json algos = nlohmann::json::array();
  for (std::size_t a = 0; a < result.algorithms.size(); ++a) {
    const auto& r = result.algorithms[a];
    nlohmann::json warnings = nlohmann::json::array();
    for (const auto& t : result.traces[a]) {
      std::ostringstream csv;
      write_trace_csv(csv, t);
      write_file_atomic(dir / ("trace_" + r.label + "_seed" + std::to_string(t.seed) + ".csv"),
                        csv.str());
      for (const auto& w : t.warnings) warnings.push_back(w);
    }
    std::ostringstream csv;
    write_summary_csv(csv, result.summaries[a]);
    write_file_atomic(dir / ("summary_" + r.label + ".csv"), csv.str());
    nlohmann::json j = summary_json(result.summaries[a]);
    j["name"] = std::string(to_string(r.config.name));
    j["gamma_max"] = r.gamma_max;
    j["gamma_policy"] = r.config.gamma.kind == GammaPolicy::Kind::constant ? "constant" : "decaying";
    j["gamma"] = gamma_schedule(r.config.gamma, 0);
    j["alpha_up"] = r.config.alpha_up;
    j["alpha_dwn"] = r.config.alpha_dwn;
    j["up"] = r.config.up.to_json();
    j["dwn"] = r.config.dwn.to_json();
    j["memory"] = std::string(to_string(r.config.memory.kind));
    j["participation"] = r.config.participation;
    j["warnings"] = warnings.size() > 1 ? nlohmann::json::array({warnings.front()}) : warnings;
    algos.push_back(j);
  }
  nlohmann::json doc = {{"schema", std::string(kSummarySchema)}, {"algorithms", algos}};
  if (!metadata.is_null()) doc["metadata"] = metadata;
  write_file_atomic(dir / "summary.json", doc.dump(2) + "\n");
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "gamma") return SweepAxis::gamma;
  if (name == "alpha_dwn") return SweepAxis::alpha_dwn;
  if (name == "s") return SweepAxis::s;
  if (name == "q") return SweepAxis::q;
  throw ConfigError("axis", "unknown sweep axis '" + std::string(name) + "'");
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::gamma: return "gamma";
    case SweepAxis::alpha_dwn: return "alpha_dwn";
    case SweepAxis::s: return "s";
    case SweepAxis::q: return "q";
  }
  return "?";
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const Problem& problem, SweepAxis axis,
                                const std::vector<double>& values, int jobs,
                                std::uint64_t seed_offset) {
  if (values.empty()) throw ConfigError("values", "at least one sweep value is required");
  std::vector<SweepRow> rows;
  for (double v : values) {
    ExperimentConfig cfg = base;
    for (std::size_t i = 0; i < cfg.algorithms.size(); ++i) {
      AlgoEntry& e = cfg.algorithms[i];
      switch (axis) {
        case SweepAxis::gamma:
          e.gamma = GammaSpec{GammaSpec::Kind::constant, v};
          break;
        case SweepAxis::alpha_dwn:
          if (e.name == AlgoName::mcm_alpha0 || e.name == AlgoName::mcm_alpha1 ||
              (e.name != AlgoName::mcm && e.name != AlgoName::rand_mcm &&
               e.name != AlgoName::rand_mcm_g))
            throw ConfigError(field(i, "alpha_dwn"), "axis alpha_dwn needs a tunable downlink memory");
          e.alpha_dwn = v;
          break;
        case SweepAxis::s: {
          if (v < 1 || v != std::floor(v)) throw ConfigError("values", "s must be a positive integer");
          const auto q = CompressorSpec::quantize(static_cast<int>(v));
          cfg.up = cfg.dwn = q;
          e.up.reset();
          e.dwn.reset();
          break;
        }
        case SweepAxis::q:
          e.participation = v;
          break;
      }
    }
    const ExperimentResult res = run_experiment(cfg, problem, jobs, seed_offset);
    for (std::size_t a = 0; a < res.algorithms.size(); ++a) {
      SweepRow row;
      row.axis = axis;
      row.value = v;
      row.algorithm = res.algorithms[a].label;
      row.gamma = gamma_schedule(res.algorithms[a].config.gamma, 0);
      row.gamma_max = res.algorithms[a].gamma_max;
      row.saturation_level = res.summaries[a].saturation_level;
      for (auto st : res.summaries[a].status) row.diverged_seeds += st == SeedStatus::diverged;
      row.past_gamma_max = row.gamma > row.gamma_max;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "# schema: bicomp-sweep/1\n";
  out << "axis,value,algorithm,gamma,gamma_max,saturation_level,diverged_seeds,past_gamma_max\n";
  for (const auto& r : rows)
    out << to_string(r.axis) << ',' << num(r.value) << ',' << r.algorithm << ',' << num(r.gamma) << ','
        << num(r.gamma_max) << ',' << num(r.saturation_level) << ',' << r.diverged_seeds << ','
        << (r.past_gamma_max ? "true" : "false") << '\n';
}

}  // namespace bicomp
