#include "bicomp/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <initializer_list>
#include <sstream>

namespace bicomp {

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void only_keys(const YAML::Node& node, const std::string& path,
               std::initializer_list<std::string_view> allowed) {
  if (!node.IsMap()) throw ConfigError(path.empty() ? "<root>" : path, "expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(join(path, key), "unknown key");
  }
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& path) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(path, "invalid value '" + (node.IsScalar() ? node.Scalar() : std::string("<node>")) + "'");
  }
}

CompressorSpec parse_compressor(const YAML::Node& n, const std::string& path) {
  only_keys(n, path, {"kind", "s", "p"});
  if (!n["kind"]) throw ConfigError(join(path, "kind"), "missing");
  const auto kind = scalar<std::string>(n["kind"], join(path, "kind"));
  try {
    if (kind == "identity") return CompressorSpec::identity();
    if (kind == "quantize") return CompressorSpec::quantize(n["s"] ? scalar<int>(n["s"], join(path, "s")) : 1);
    if (kind == "sparsify") {
      if (!n["p"]) throw ConfigError("p", "missing");
      return CompressorSpec::sparsify(scalar<double>(n["p"], join(path, "p")));
    }
  } catch (const ConfigError& e) {
    if (e.field().find('.') != std::string::npos) throw;
    throw ConfigError(join(path, e.field()), std::string(e.what()).substr(e.field().size() + 2));
  }
  throw ConfigError(join(path, "kind"), "unknown compressor '" + kind + "'");
}

GammaSpec parse_gamma(const YAML::Node& n, const std::string& path) {
  only_keys(n, path, {"policy", "value", "factor"});
  if (!n["policy"]) throw ConfigError(join(path, "policy"), "missing");
  const auto policy = scalar<std::string>(n["policy"], join(path, "policy"));
  GammaSpec g;
  if (policy == "constant") {
    if (!n["value"]) throw ConfigError(join(path, "value"), "missing");
    g.kind = GammaSpec::Kind::constant;
    g.value = scalar<double>(n["value"], join(path, "value"));
  } else if (policy == "inverse_L" || policy == "gamma_max") {
    g.kind = policy == "inverse_L" ? GammaSpec::Kind::inverse_L : GammaSpec::Kind::gamma_max;
    g.value = n["factor"] ? scalar<double>(n["factor"], join(path, "factor")) : 1.0;
  } else if (policy == "decaying") {
    g.kind = GammaSpec::Kind::decaying;
  } else {
    throw ConfigError(join(path, "policy"), "unknown policy '" + policy + "'");
  }
  if (g.kind != GammaSpec::Kind::decaying && !(g.value > 0.0))
    throw ConfigError(join(path, g.kind == GammaSpec::Kind::constant ? "value" : "factor"),
                      "must be positive");
  return g;
}

MemoryMode::Kind parse_memory_kind(const std::string& s, const std::string& path) {
  if (s == "shared") return MemoryMode::Kind::shared;
  if (s == "per_worker") return MemoryMode::Kind::per_worker;
  if (s == "grouped") return MemoryMode::Kind::grouped;
  if (s == "single_averaged") return MemoryMode::Kind::single_averaged;
  throw ConfigError(path, "unknown memory mode '" + s + "'");
}

void parse_problem(const YAML::Node& n, SynthOptions& p) {
  const std::string path = "problem";
  only_keys(n, path,
            {"family", "d", "n_per_worker", "N", "hetero", "seed", "label_noise", "spectrum_decay",
             "response_offset"});
  if (n["family"]) {
    try {
      p.family = parse_family(scalar<std::string>(n["family"], "problem.family"));
    } catch (const std::invalid_argument& e) {
      if (dynamic_cast<const ConfigError*>(&e)) throw;
      throw ConfigError("problem.family", e.what());
    }
  }
  if (n["d"]) p.dim = scalar<int>(n["d"], "problem.d");
  if (n["n_per_worker"]) p.samples_per_worker = scalar<int>(n["n_per_worker"], "problem.n_per_worker");
  if (n["N"]) p.workers = scalar<int>(n["N"], "problem.N");
  if (n["seed"]) p.seed = scalar<std::uint64_t>(n["seed"], "problem.seed");
  if (n["label_noise"]) p.label_noise = scalar<double>(n["label_noise"], "problem.label_noise");
  if (n["spectrum_decay"]) p.spectrum_decay = scalar<double>(n["spectrum_decay"], "problem.spectrum_decay");
  if (n["response_offset"])
    p.response_offset = scalar<double>(n["response_offset"], "problem.response_offset");
  if (const auto h = n["hetero"]) {
    if (h.IsScalar()) {
      if (h.Scalar() != "none") throw ConfigError("problem.hetero", "expected 'none' or a mapping");
      p.hetero = Heterogeneity::none();
    } else {
      only_keys(h, "problem.hetero", {"kind", "delta"});
      const auto kind = h["kind"] ? scalar<std::string>(h["kind"], "problem.hetero.kind") : "";
      if (kind == "none") {
        p.hetero = Heterogeneity::none();
      } else if (kind == "shifted_means") {
        if (!h["delta"]) throw ConfigError("problem.hetero.delta", "missing");
        p.hetero = Heterogeneity::shifted_means(scalar<double>(h["delta"], "problem.hetero.delta"));
      } else {
        throw ConfigError("problem.hetero.kind", "expected none or shifted_means");
      }
    }
  }
  if (p.dim < 1) throw ConfigError("problem.d", "must be at least 1");
  if (p.workers < 1) throw ConfigError("problem.N", "must be at least 1");
  if (p.samples_per_worker < 1) throw ConfigError("problem.n_per_worker", "must be at least 1");
  if (p.family != Family::logistic && p.samples_per_worker < p.dim)
    throw ConfigError("problem.n_per_worker", "must be at least d");
}

AlgoEntry parse_algo_entry(const YAML::Node& n, std::size_t index) {
  const std::string path = "algorithms[" + std::to_string(index) + "]";
  if (n.IsScalar()) {
    AlgoEntry e;
    try {
      e.name = parse_algo(n.Scalar());
    } catch (const ConfigError&) {
      throw ConfigError(join(path, "name"), "unknown algorithm '" + n.Scalar() + "'");
    }
    e.label = n.Scalar();
    return e;
  }
  only_keys(n, path,
            {"name", "label", "up", "dwn", "alpha_up", "alpha_dwn", "gamma", "memory", "groups",
             "reset_every", "participation", "update_mode"});
  if (!n["name"]) throw ConfigError(join(path, "name"), "missing");
  AlgoEntry e;
  const auto name = scalar<std::string>(n["name"], join(path, "name"));
  try {
    e.name = parse_algo(name);
  } catch (const ConfigError& err) {
    throw ConfigError(join(path, "name"), "unknown algorithm '" + name + "'");
  }
  e.label = n["label"] ? scalar<std::string>(n["label"], join(path, "label")) : name;
  if (n["up"]) e.up = parse_compressor(n["up"], join(path, "up"));
  if (n["dwn"]) e.dwn = parse_compressor(n["dwn"], join(path, "dwn"));
  if (n["alpha_up"]) e.alpha_up = scalar<double>(n["alpha_up"], join(path, "alpha_up"));
  if (n["alpha_dwn"]) e.alpha_dwn = scalar<double>(n["alpha_dwn"], join(path, "alpha_dwn"));
  if (n["gamma"]) e.gamma = parse_gamma(n["gamma"], join(path, "gamma"));
  if (n["groups"]) e.groups = scalar<int>(n["groups"], join(path, "groups"));
  if (n["participation"]) e.participation = scalar<double>(n["participation"], join(path, "participation"));
  if (n["memory"]) {
    MemoryMode m;
    m.kind = parse_memory_kind(scalar<std::string>(n["memory"], join(path, "memory")), join(path, "memory"));
    m.groups = e.groups.value_or(1);
    if (n["reset_every"]) m.reset_every = scalar<int>(n["reset_every"], join(path, "reset_every"));
    e.memory = m;
  } else if (n["reset_every"]) {
    throw ConfigError(join(path, "reset_every"), "only valid with memory: single_averaged");
  }
  if (n["update_mode"]) {
    const auto u = scalar<std::string>(n["update_mode"], join(path, "update_mode"));
    if (u == "degraded") e.update = UpdateMode::degraded;
    else if (u == "non_degraded") e.update = UpdateMode::non_degraded;
    else throw ConfigError(join(path, "update_mode"), "expected degraded or non_degraded");
  }
  return e;
}

}  // namespace

LoadedConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("<root>", std::string("YAML parse error: ") + e.what());
  }
  only_keys(root, "",
            {"problem", "iterations", "batch", "seeds", "gamma", "up", "dwn", "participation",
             "algorithms", "output_dir", "sweep"});
  LoadedConfig out;
  ExperimentConfig& c = out.experiment;
  if (root["problem"]) parse_problem(root["problem"], c.problem);
  if (root["iterations"]) c.iterations = scalar<long>(root["iterations"], "iterations");
  if (const auto b = root["batch"]) {
    if (b.IsScalar() && b.Scalar() == "full") c.batch = BatchSpec::full();
    else c.batch = BatchSpec::minibatch(scalar<int>(b, "batch"));
  }
  if (const auto s = root["seeds"]) {
    if (!s.IsSequence()) throw ConfigError("seeds", "expected a list");
    c.seeds.clear();
    for (std::size_t i = 0; i < s.size(); ++i)
      c.seeds.push_back(scalar<std::uint64_t>(s[i], "seeds[" + std::to_string(i) + "]"));
  }
  if (root["gamma"]) c.gamma = parse_gamma(root["gamma"], "gamma");
  if (root["up"]) c.up = parse_compressor(root["up"], "up");
  if (root["dwn"]) c.dwn = parse_compressor(root["dwn"], "dwn");
  if (root["participation"]) c.participation = scalar<double>(root["participation"], "participation");
  if (root["output_dir"]) c.output_dir = scalar<std::string>(root["output_dir"], "output_dir");
  if (const auto a = root["algorithms"]) {
    if (!a.IsSequence()) throw ConfigError("algorithms", "expected a list");
    for (std::size_t i = 0; i < a.size(); ++i) c.algorithms.push_back(parse_algo_entry(a[i], i));
  }
  if (const auto s = root["sweep"]) {
    only_keys(s, "sweep", {"axis", "values"});
    SweepSpec sw;
    if (!s["axis"]) throw ConfigError("sweep.axis", "missing");
    try {
      sw.axis = parse_sweep_axis(scalar<std::string>(s["axis"], "sweep.axis"));
    } catch (const ConfigError&) {
      throw ConfigError("sweep.axis", "expected gamma, alpha_dwn, s or q");
    }
    if (!s["values"] || !s["values"].IsSequence()) throw ConfigError("sweep.values", "expected a list");
    for (std::size_t i = 0; i < s["values"].size(); ++i)
      sw.values.push_back(scalar<double>(s["values"][i], "sweep.values[" + std::to_string(i) + "]"));
    out.sweep = sw;
  }
  validate_experiment(c);
  return out;
}

LoadedConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

}  // namespace bicomp
