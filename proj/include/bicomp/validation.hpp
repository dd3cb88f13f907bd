#pragma once

#include "bicomp/algorithms.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace bicomp {

enum class CheckStatus { pass, fail, not_applicable };
std::string_view to_string(CheckStatus status);

struct CheckReport {
  std::string check;
  CheckStatus status = CheckStatus::pass;
  double statistic = 0.0;
  double bound = 0.0;
  double std_error = 0.0;
  std::string detail;

  bool passed() const noexcept { return status != CheckStatus::fail; }
  nlohmann::json to_json() const;
};

/// Two-sided z threshold for `tests` simultaneous normal tests at a total
/// false-alarm rate equal to that of a single 4-sigma test, floored at 4.
double family_z_threshold(std::size_t tests);

using CompressFn = std::function<ParamVector(const ParamVector&, Stream&)>;

/// Unbiasedness (per-coordinate z test) and E||C(v) - v||^2 <= 1.02 omega ||v||^2
/// (plus 3 standard errors) on `vectors` random inputs with coordinates of
/// magnitude in [0.5, 1.5).
CheckReport check_compressor_moments(const CompressorSpec& spec, int d, long trials,
                                     std::uint64_t seed, int vectors = 20);
/// Same check for an arbitrary operator claimed to have variance factor omega.
CheckReport check_compressor_moments(const CompressFn& op, double omega, int d, long trials,
                                     std::uint64_t seed, int vectors = 20,
                                     std::string name = "moments");

/// E||g~||^2 <= (1 + omega_up/N) ||grad F(w)||^2 + sigma^2 (1 + omega_up)/(N b),
/// with zero uplink memories, all workers evaluated at w.
CheckReport check_grad_sto_bound(const Problem& problem, const CompressorSpec& up,
                                 const BatchSpec& batch, const ParamVector& w, long trials,
                                 std::uint64_t seed);

/// One-step contraction of Upsilon, replayed from a state at k-1.
CheckReport check_upsilon_contraction(const Problem& problem, const AlgoConfig& cfg,
                                      const AlgoState& state, long trials, std::uint64_t seed);
/// The contraction check at `states` snapshots along a trajectory of `cfg`.
CheckReport check_upsilon_contraction(const Problem& problem, const AlgoConfig& cfg, double gamma,
                                      long iterations, int states, long trials,
                                      std::uint64_t seed);

/// E[grad F(w_hat)] = grad F(w) over downlink draws (quadratic objectives).
CheckReport check_quadratic_unbiased_grad(const Problem& problem, const AlgoConfig& cfg,
                                          const AlgoState& state, long trials, std::uint64_t seed);

/// Recursion of the uplink-memory deviation Xi, replayed from a state at k-1.
CheckReport check_xi_recursion(const Problem& problem, const AlgoConfig& cfg,
                               const AlgoState& state, double gamma, long trials,
                               std::uint64_t seed);
CheckReport check_xi_recursion(const Problem& problem, const AlgoConfig& cfg, double gamma,
                               long iterations, int states, long trials, std::uint64_t seed);

struct SuiteOptions {
  long trials = 10'000;
  std::uint64_t seed = 0;
  std::string only;  // empty runs every check
};

inline constexpr std::string_view kCheckNames[] = {
    "moments", "grad_sto_bound", "upsilon_contraction", "quadratic_unbiased_grad", "xi_recursion"};

/// Full suite on small canonical problems.
std::vector<CheckReport> run_validation_suite(const SuiteOptions& options);

}  // namespace bicomp
