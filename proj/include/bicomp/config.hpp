#pragma once

#include "bicomp/experiment.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bicomp {

struct SweepSpec {
  SweepAxis axis = SweepAxis::gamma;
  std::vector<double> values;
};

struct LoadedConfig {
  ExperimentConfig experiment;
  std::optional<SweepSpec> sweep;
};

/// YAML experiment description. Unknown keys raise ConfigError with the key
/// path, e.g. "algorithms[2].alpha_dnw".
LoadedConfig parse_config(const std::string& text);
LoadedConfig load_config(const std::filesystem::path& path);

}  // namespace bicomp
