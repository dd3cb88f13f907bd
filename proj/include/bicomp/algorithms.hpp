#pragma once

#include "bicomp/compressor.hpp"
#include "bicomp/problem.hpp"
#include "bicomp/types.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace bicomp {

enum class AlgoName {
  sgd,
  diana,
  artemis,
  artemis_nd,
  ghost,
  mcm,
  rand_mcm,
  rand_mcm_g,
  mcm_alpha0,
  mcm_alpha1,
};

std::string_view to_string(AlgoName name);
AlgoName parse_algo(std::string_view name);

enum class UpdateMode { degraded, non_degraded };

struct MemoryMode {
  enum class Kind { none, shared, per_worker, grouped, single_averaged };
  Kind kind = Kind::shared;
  int groups = 1;
  int reset_every = 0;  // single_averaged only; 0 disables the reset

  static MemoryMode none() { return {Kind::none, 1, 0}; }
  static MemoryMode shared() { return {Kind::shared, 1, 0}; }
  static MemoryMode per_worker() { return {Kind::per_worker, 1, 0}; }
  static MemoryMode grouped(int g) { return {Kind::grouped, g, 0}; }
  static MemoryMode single_averaged(int reset) { return {Kind::single_averaged, 1, reset}; }

  /// Number of distinct downlink messages per round for N workers.
  int group_count(int workers) const;
};

std::string_view to_string(MemoryMode::Kind kind);

struct GammaPolicy {
  enum class Kind { constant, decaying };
  Kind kind = Kind::constant;
  double gamma = 0.0;
  double mu = 0.0;
  double L_tilde = 0.0;

  static GammaPolicy constant(double g) { return {Kind::constant, g, 0.0, 0.0}; }
  static GammaPolicy decaying(double mu, double L_tilde) { return {Kind::decaying, 0.0, mu, L_tilde}; }
};

struct AlgoConfig {
  AlgoName name = AlgoName::mcm;
  CompressorSpec up;
  CompressorSpec dwn;
  double alpha_up = 0.0;
  double alpha_dwn = 0.0;
  GammaPolicy gamma;
  UpdateMode update = UpdateMode::non_degraded;
  MemoryMode memory;
  double participation = 1.0;  // Bernoulli(q) per worker and round
  BatchSpec batch = BatchSpec::full();
};

/// (1/(2(1+omega_up)), 1/(2(1+omega_dwn))).
std::pair<double, double> default_alphas(const CompressorSpec& up, const CompressorSpec& dwn, int d);

/// Preset for a named algorithm: update mode, memory layout and default
/// alphas. SGD forces identity compressors both ways, Diana forces an
/// identity downlink. `groups` is used by rand_mcm_g only.
AlgoConfig make_preset(AlgoName name, const CompressorSpec& up, const CompressorSpec& dwn,
                       int d, int workers, int groups = 1);

/// Throws ConfigError if the preset invariants are broken.
void validate_config(const AlgoConfig& cfg, int workers);

struct GammaBounds {
  double up;
  double dwn;
  double upsilon;
  double degraded;
  double gamma_max;  // the bound that applies to the algorithm
};

/// Step-size bounds. A bound with a zero omega factor in its denominator is
/// +inf. `degraded` selects the degraded-framework bound as gamma_max.
GammaBounds gamma_bounds(double L, double omega_up, double omega_dwn, int workers,
                         bool degraded = false);
double gamma_max(const AlgoConfig& cfg, const Problem& problem);
/// L_tilde with gamma_max = 1 / (2 L_tilde).
inline double l_tilde(double gamma_max) { return 1.0 / (2.0 * gamma_max); }

double gamma_schedule(const GammaPolicy& policy, long k);

/// sum_j lambda_j w_j / sum_j lambda_j with lambda_j = 1 / gamma_j, where
/// gamma_j is the step taken from w_j.
ParamVector polyak_ruppert_weighted(const std::vector<ParamVector>& iterates,
                                    const std::vector<double>& gammas);
ParamVector polyak_ruppert_weighted(const std::vector<ParamVector>& iterates,
                                    const GammaPolicy& policy);

struct AlgoState {
  long k = 0;
  ParamVector w;
  std::vector<ParamVector> h;       // uplink memories h_k^i
  std::vector<ParamVector> H_prev;  // H_{k-1}^i
  std::vector<ParamVector> H;       // H_k^i
  std::vector<ParamVector> w_hat;   // local models
  ParamVector H_bar;                // single_averaged server memory
  std::vector<char> active;         // participation mask of the next round
  std::uint64_t seed = 0;           // gradient, uplink and participation streams
  std::uint64_t downlink_seed = 0;  // downlink streams
  Bits bits_up_cum = 0;
  Bits bits_dwn_cum = 0;
  bool diverged = false;
};

AlgoState init_state(const AlgoConfig& cfg, const Problem& problem, const ParamVector& w0,
                     std::uint64_t seed);

/// One round k -> k+1 with step gamma. Sets `diverged` instead of throwing
/// when the iterate blows up.
void step(const AlgoConfig& cfg, const Problem& problem, AlgoState& state, double gamma);
inline void step(const AlgoConfig& cfg, const Problem& problem, AlgoState& state) {
  step(cfg, problem, state, gamma_schedule(cfg.gamma, state.k));
}

/// Redraws the downlink that produced the current local models: restores
/// H <- H_prev and compresses w - H again with the state's downlink seed.
/// Only meaningful for algorithms with a downlink memory.
void redraw_downlink(const AlgoConfig& cfg, const Problem& problem, AlgoState& state);

bool has_downlink_memory(const AlgoConfig& cfg);

}  // namespace bicomp
