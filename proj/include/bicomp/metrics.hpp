#pragma once

#include "bicomp/algorithms.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace bicomp {

struct IterRecord {
  long k = 0;
  double gamma_k = 0.0;
  double excess_loss = 0.0;
  double grad_norm_sq = 0.0;
  double upsilon = 0.0;
  double xi = 0.0;
  double lyapunov = 0.0;
  Bits bits_up_cum = 0;
  Bits bits_dwn_cum = 0;
};

/// Upsilon = (1/N) sum_i ||w - H_prev^i||^2,
/// Xi = (1/N^2) sum_i ||h^i - grad F_i(w*)||^2,
/// V = ||w - w*||^2 + 32 gamma L omega_dwn^2 Upsilon.
IterRecord record_iteration(const Problem& problem, const AlgoConfig& cfg, const AlgoState& state,
                            double gamma_k);

enum class TraceStatus { ok, diverged };
std::string_view to_string(TraceStatus status);

struct RunTrace {
  std::string algorithm;  // display label, unique within a run
  std::uint64_t seed = 0;
  std::vector<IterRecord> records;  // k = 0..K, truncated after divergence
  TraceStatus status = TraceStatus::ok;
  std::vector<std::string> warnings;
  std::vector<ParamVector> iterates;  // filled only when requested
};

struct RunOptions {
  long iterations = 100;
  std::uint64_t seed = 0;
  ParamVector w0;  // empty means the zero vector
  bool keep_iterates = false;
};

RunTrace run_algorithm(const AlgoConfig& cfg, const Problem& problem, const RunOptions& options,
                       std::string label = {});

enum class PhiVariant { base, ghost, heterog, noncvx, rand_quadratic };
PhiVariant parse_phi_variant(std::string_view name);

struct PhiParams {
  double gamma = 0.0;
  double L = 1.0;
  double omega_up = 0.0;
  double omega_dwn = 0.0;
  int workers = 1;
  int batch = 1;
  double alpha_dwn = 1.0;
  double C = 1.0;  // rand_quadratic: number of independent downlink draws
  double K = 1.0;  // rand_quadratic: iteration horizon
};

/// Variance prefactor of the predicted saturation gamma^2 sigma^2 Phi / (N b).
double phi(PhiVariant variant, const PhiParams& p);
double predicted_saturation(PhiVariant variant, const PhiParams& p, double sigma_sq);

enum class SeedStatus { converged, saturated, diverged };
std::string_view to_string(SeedStatus status);

struct RunSummary {
  std::string algorithm;
  std::vector<std::uint64_t> seeds;
  std::vector<long> k;
  std::vector<double> mean_log10;
  std::vector<double> std_log10;
  double saturation_level = 0.0;  // +inf if every seed diverged
  std::vector<SeedStatus> status;
  std::vector<double> seed_saturation;
  bool padded = false;
};

constexpr double kExcessFloor = 1e-16;

RunSummary aggregate(const std::vector<RunTrace>& traces);

inline constexpr std::string_view kTraceSchema = "bicomp-trace/1";
inline constexpr std::string_view kSummarySchema = "bicomp-summary/1";

void write_trace_csv(std::ostream& out, const RunTrace& trace);
void write_summary_csv(std::ostream& out, const RunSummary& summary);
nlohmann::json summary_json(const RunSummary& summary);

}  // namespace bicomp
