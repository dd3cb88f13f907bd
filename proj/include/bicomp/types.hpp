#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace bicomp {

/// Dense model-space vector: iterates, gradients and memories.
using ParamVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for invalid experiment or algorithm configuration. `field` names the
/// offending key path, e.g. "algorithms[1].dwn.s".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

inline bool all_finite(const ParamVector& v) { return v.allFinite(); }

inline void require_finite(const ParamVector& v, const char* what) {
  if (!v.allFinite()) throw NonFiniteError(std::string(what) + " has a non-finite entry");
}

inline void require_dim(const ParamVector& v, Eigen::Index d, const char* what) {
  if (v.size() != d) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(d) +
                         ", got " + std::to_string(v.size()));
  }
}

}  // namespace bicomp
