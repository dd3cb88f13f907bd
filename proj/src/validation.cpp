#include "bicomp/validation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace bicomp {

namespace {

constexpr double kRelTiny = 1e-12;

// Running mean and standard error of a scalar sample.
struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
  long n = 0;

  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  double mean() const { return sum / static_cast<double>(n); }
  double std_error() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = std::max(0.0, (sum_sq - n * m * m) / static_cast<double>(n - 1));
    return std::sqrt(var / static_cast<double>(n));
  }
};

std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t salt, long trial) {
  return mix64(mix64(seed ^ (salt * 0x9E3779B97F4A7C15ULL)) + static_cast<std::uint64_t>(trial));
}

std::string fmt(const char* format, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, format, a, b);
  return buf;
}

CheckReport not_applicable(std::string check, std::string why) {
  CheckReport r;
  r.check = std::move(check);
  r.status = CheckStatus::not_applicable;
  r.detail = std::move(why);
  return r;
}

double mean_sample_variance(const Problem& p, const BatchSpec& batch,
                            const std::vector<ParamVector>& points) {
  if (batch.full_batch) return 0.0;
  double s = 0.0;
  for (int i = 0; i < p.workers(); ++i) s += p.sample_grad_variance(i, points[i]);
  return s / p.workers();
}

double xi_of(const Problem& p, const AlgoState& s) {
  const int n = p.workers();
  double xi = 0.0;
  for (int i = 0; i < n; ++i) xi += (s.h[i] - p.grad_at_opt(i)).squaredNorm();
  return xi / (static_cast<double>(n) * n);
}

double upsilon_of(const AlgoState& s) {
  double u = 0.0;
  for (const auto& row : s.H_prev) u += (s.w - row).squaredNorm();
  return u / static_cast<double>(s.H_prev.size());
}

// Snapshots of the engine state at k = 1 .. iterations, `count` of them,
// evenly spaced.
std::vector<AlgoState> trajectory_states(const Problem& problem, const AlgoConfig& cfg, double gamma,
                                         long iterations, int count, std::uint64_t seed) {
  std::vector<long> marks;
  for (int j = 1; j <= count; ++j)
    marks.push_back(std::max<long>(1, static_cast<long>(std::llround(
                                          static_cast<double>(j) * iterations / count))));
  std::vector<AlgoState> out;
  AlgoState s = init_state(cfg, problem, ParamVector::Zero(problem.dim()), seed);
  std::size_t next = 0;
  for (long k = 0; k < iterations && next < marks.size(); ++k) {
    step(cfg, problem, s, gamma);
    if (s.diverged) break;
    while (next < marks.size() && marks[next] == s.k) {
      out.push_back(s);
      ++next;
    }
  }
  return out;
}

CheckReport combine(std::string check, const std::vector<CheckReport>& parts) {
  CheckReport r;
  r.check = std::move(check);
  int passed = 0;
  int applicable = 0;
  double worst_margin = -std::numeric_limits<double>::infinity();
  for (const auto& p : parts) {
    if (p.status == CheckStatus::not_applicable) continue;
    ++applicable;
    if (p.status == CheckStatus::pass) ++passed;
    const double margin = p.statistic - p.bound - 3.0 * p.std_error;
    if (margin > worst_margin) {
      worst_margin = margin;
      r.statistic = p.statistic;
      r.bound = p.bound;
      r.std_error = p.std_error;
    }
  }
  if (applicable == 0) {
    r.status = CheckStatus::not_applicable;
    r.detail = parts.empty() ? "no states" : parts.front().detail;
    return r;
  }
  r.status = passed == applicable ? CheckStatus::pass : CheckStatus::fail;
  r.detail = std::to_string(passed) + "/" + std::to_string(applicable) + " states pass";
  return r;
}

}  // namespace

std::string_view to_string(CheckStatus status) {
  switch (status) {
    case CheckStatus::pass: return "PASS";
    case CheckStatus::fail: return "FAIL";
    case CheckStatus::not_applicable: return "NOT_APPLICABLE";
  }
  return "?";
}

nlohmann::json CheckReport::to_json() const {
  auto finite_or_null = [](double x) -> nlohmann::json {
    if (std::isfinite(x)) return x;
    return nullptr;
  };
  return {{"check", check},
          {"status", std::string(to_string(status))},
          {"statistic", finite_or_null(statistic)},
          {"bound", finite_or_null(bound)},
          {"stderr", finite_or_null(std_error)},
          {"detail", detail}};
}

double family_z_threshold(std::size_t tests) {
  const double single = std::erfc(4.0 / std::sqrt(2.0));
  const double target = single / static_cast<double>(std::max<std::size_t>(1, tests));
  double lo = 4.0;
  double hi = 40.0;
  if (std::erfc(lo / std::sqrt(2.0)) <= target) return lo;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (std::erfc(mid / std::sqrt(2.0)) > target) lo = mid;
    else hi = mid;
  }
  return hi;
}

CheckReport check_compressor_moments(const CompressorSpec& spec, int d, long trials,
                                     std::uint64_t seed, int vectors) {
  const CompressFn op = [spec](const ParamVector& v, Stream& rng) {
    return compress(spec, v, rng).value;
  };
  return check_compressor_moments(op, spec.omega(d), d, trials, seed, vectors,
                                  "moments " + spec.describe() + " d=" + std::to_string(d));
}

CheckReport check_compressor_moments(const CompressFn& op, double omega, int d, long trials,
                                     std::uint64_t seed, int vectors, std::string name) {
  if (trials < 2) throw std::invalid_argument("check_compressor_moments: need at least 2 trials");
  const double z_max = family_z_threshold(static_cast<std::size_t>(vectors) * d);
  Stream input_rng = make_stream(seed, Phase::check, 0, 0);
  double worst_z = 0.0;
  double worst_ratio = 0.0;
  double worst_ratio_se = 0.0;
  bool exact_ok = true;
  const double m = static_cast<double>(trials);

  for (int v_idx = 0; v_idx < vectors; ++v_idx) {
    // Magnitudes in [0.5, 1.5) keep every coordinate's rounding probability
    // large enough for the per-coordinate z test to be resolvable.
    ParamVector v(d);
    for (int j = 0; j < d; ++j) {
      const double sign = input_rng.bernoulli(0.5) ? 1.0 : -1.0;
      v(j) = sign * (0.5 + input_rng.uniform());
    }
    const double norm_sq = v.squaredNorm();
    Eigen::ArrayXd dsum = Eigen::ArrayXd::Zero(d);
    Eigen::ArrayXd dsq = Eigen::ArrayXd::Zero(d);
    Moments ratio;
    double max_dev = 0.0;
    Stream rng = make_stream(seed, Phase::check, static_cast<std::uint64_t>(v_idx) + 1, 1);
    for (long t = 0; t < trials; ++t) {
      const Eigen::ArrayXd diff = (op(v, rng) - v).array();
      dsum += diff;
      dsq += diff.square();
      max_dev = std::max(max_dev, diff.abs().maxCoeff());
      ratio.add(diff.square().sum() / norm_sq);
    }
    for (int j = 0; j < d; ++j) {
      const double mean = dsum(j) / m;
      const double var = std::max(0.0, (dsq(j) - m * mean * mean) / (m - 1.0));
      const double se = std::sqrt(var / m);
      if (var <= 1e-14 * dsq(j) / m || se == 0.0) {
        // A rounding event of probability p went unseen in all m trials,
        // which is plausible only for p below about 10/m.
        const double allowed = std::max(kRelTiny * std::max(1.0, std::abs(v(j))), 10.0 / m * max_dev);
        if (std::abs(mean) > allowed) exact_ok = false;
      } else {
        worst_z = std::max(worst_z, std::abs(mean) / se);
      }
    }
    if (ratio.mean() >= worst_ratio) {
      worst_ratio = ratio.mean();
      worst_ratio_se = ratio.std_error();
    }
  }

  CheckReport r;
  r.check = std::move(name);
  r.statistic = worst_ratio;
  r.bound = 1.02 * omega;
  r.std_error = worst_ratio_se;
  const bool unbiased = exact_ok && worst_z <= z_max;
  const bool variance_ok = worst_ratio <= r.bound + 3.0 * worst_ratio_se + kRelTiny;
  r.status = unbiased && variance_ok ? CheckStatus::pass : CheckStatus::fail;
  r.detail = fmt("max |z| %.3f (threshold %.3f)", worst_z, z_max) +
             (exact_ok ? "" : "; deterministic coordinate off target");
  return r;
}

CheckReport check_grad_sto_bound(const Problem& problem, const CompressorSpec& up,
                                 const BatchSpec& batch, const ParamVector& w, long trials,
                                 std::uint64_t seed) {
  const std::string name = "grad_sto_bound";
  if (problem.hetero_B_sq() > 1e-8 * problem.dim())
    return not_applicable(name, "heterogeneous problem");
  const int n = problem.workers();
  const int d = problem.dim();
  const double omega = up.omega(d);
  const double b = batch.full_batch ? 1.0 : batch.size;
  const std::vector<ParamVector> points(static_cast<std::size_t>(n), w);
  const double sigma_sq = mean_sample_variance(problem, batch, points);
  const double grad_sq = problem.grad_full(w).squaredNorm();

  Moments sample;
  for (long t = 0; t < trials; ++t) {
    ParamVector g = ParamVector::Zero(d);
    for (int i = 0; i < n; ++i) {
      Stream grad_rng = make_stream(trial_seed(seed, 1, t), Phase::gradient, static_cast<std::uint64_t>(i), 0);
      Stream up_rng = make_stream(trial_seed(seed, 1, t), Phase::uplink, static_cast<std::uint64_t>(i), 0);
      g += compress(up, problem.grad_stochastic(i, w, batch, grad_rng), up_rng).value;
    }
    sample.add((g / n).squaredNorm());
  }
  CheckReport r;
  r.check = name;
  r.statistic = sample.mean();
  r.bound = (1.0 + omega / n) * grad_sq + sigma_sq * (1.0 + omega) / (n * b);
  r.std_error = sample.std_error();
  r.status = r.statistic <= r.bound + 3.0 * r.std_error + kRelTiny * r.bound ? CheckStatus::pass
                                                                             : CheckStatus::fail;
  r.detail = fmt("sigma^2 %.6g, |grad F|^2 %.6g", sigma_sq, grad_sq);
  return r;
}

CheckReport check_upsilon_contraction(const Problem& problem, const AlgoConfig& cfg,
                                      const AlgoState& state, long trials, std::uint64_t seed) {
  const std::string name = "upsilon_contraction";
  const int n = problem.workers();
  const int d = problem.dim();
  const double L = problem.smoothness();
  const double omega_dwn = cfg.dwn.omega(d);
  const double omega_up = cfg.up.omega(d);
  const double alpha = cfg.alpha_dwn;
  const double gamma = gamma_schedule(cfg.gamma, state.k);
  if (!has_downlink_memory(cfg) || cfg.memory.kind == MemoryMode::Kind::single_averaged)
    return not_applicable(name, "needs a shared, per-worker or grouped downlink memory");
  if (cfg.participation < 1.0) return not_applicable(name, "needs full participation");
  if (!(alpha > 0.0)) return not_applicable(name, "alpha_dwn = 0");
  if (omega_dwn > 0.0) {
    const double limit = 1.0 / (8.0 * omega_dwn);
    if (gamma > limit / L * (1.0 + kRelTiny) || alpha > limit * (1.0 + kRelTiny))
      return not_applicable(name, "requires gamma <= 1/(8 omega_dwn L) and alpha_dwn <= 1/(8 omega_dwn)");
  }
  const double b = cfg.batch.full_batch ? 1.0 : cfg.batch.size;
  const double sigma_sq = mean_sample_variance(problem, cfg.batch, state.w_hat);
  const double ups_prev = upsilon_of(state);

  Moments diff;
  Moments lhs;
  Moments rhs;
  for (long t = 0; t < trials; ++t) {
    AlgoState s = state;
    s.seed = trial_seed(seed, 2, t);
    s.downlink_seed = trial_seed(seed, 3, t);
    redraw_downlink(cfg, problem, s);
    double grad_sq = 0.0;
    for (const auto& row : s.w_hat) grad_sq += problem.grad_full(row).squaredNorm();
    grad_sq /= n;
    step(cfg, problem, s, gamma);
    const double left = upsilon_of(s);
    const double right = (1.0 - alpha / 2.0) * ups_prev +
                         2.0 * gamma * gamma * (1.0 / alpha + omega_up / n) * grad_sq +
                         2.0 * gamma * gamma * sigma_sq * (1.0 + omega_up) / (n * b);
    lhs.add(left);
    rhs.add(right);
    diff.add(left - right);
  }
  CheckReport r;
  r.check = name;
  r.statistic = lhs.mean();
  r.bound = rhs.mean();
  r.std_error = diff.std_error();
  r.status = diff.mean() <= 3.0 * r.std_error + kRelTiny * std::abs(r.bound) ? CheckStatus::pass
                                                                             : CheckStatus::fail;
  r.detail = "k=" + std::to_string(state.k) + fmt(", Upsilon_{k-1} %.6g", ups_prev);
  return r;
}

CheckReport check_upsilon_contraction(const Problem& problem, const AlgoConfig& cfg, double gamma,
                                      long iterations, int states, long trials,
                                      std::uint64_t seed) {
  AlgoConfig fixed = cfg;
  fixed.gamma = GammaPolicy::constant(gamma);
  std::vector<CheckReport> parts;
  const auto snapshots = trajectory_states(problem, fixed, gamma, iterations, states, seed);
  for (std::size_t j = 0; j < snapshots.size(); ++j)
    parts.push_back(check_upsilon_contraction(problem, fixed, snapshots[j], trials, seed + 1000 + j));
  if (static_cast<int>(snapshots.size()) < states) {
    CheckReport r = combine("upsilon_contraction", parts);
    r.status = CheckStatus::fail;
    r.detail = "trajectory diverged before all states were sampled";
    return r;
  }
  return combine("upsilon_contraction", parts);
}

CheckReport check_quadratic_unbiased_grad(const Problem& problem, const AlgoConfig& cfg,
                                          const AlgoState& state, long trials, std::uint64_t seed) {
  const std::string name = "quadratic_unbiased_grad";
  if (problem.family() == Family::logistic) return not_applicable(name, "quadratic objectives only");
  if (!has_downlink_memory(cfg) || cfg.memory.kind == MemoryMode::Kind::single_averaged)
    return not_applicable(name, "needs a shared, per-worker or grouped downlink memory");
  const int d = problem.dim();
  const ParamVector target = problem.grad_full(state.w);
  Eigen::ArrayXd dsum = Eigen::ArrayXd::Zero(d);
  Eigen::ArrayXd dsq = Eigen::ArrayXd::Zero(d);
  for (long t = 0; t < trials; ++t) {
    AlgoState s = state;
    s.downlink_seed = trial_seed(seed, 4, t);
    redraw_downlink(cfg, problem, s);
    const Eigen::ArrayXd diff = (problem.grad_full(s.w_hat.front()) - target).array();
    dsum += diff;
    dsq += diff.square();
  }
  const double m = static_cast<double>(trials);
  const double z_max = family_z_threshold(static_cast<std::size_t>(d));
  double worst_z = 0.0;
  double worst_se = 0.0;
  bool exact_ok = true;
  for (int j = 0; j < d; ++j) {
    const double mean = dsum(j) / m;
    const double var = std::max(0.0, (dsq(j) - m * mean * mean) / (m - 1.0));
    const double se = std::sqrt(var / m);
    if (se == 0.0) {
      if (std::abs(mean) > kRelTiny * std::max(1.0, std::abs(target(j)))) exact_ok = false;
    } else if (std::abs(mean) / se > worst_z) {
      worst_z = std::abs(mean) / se;
      worst_se = se;
    }
  }
  CheckReport r;
  r.check = name;
  r.statistic = worst_z;
  r.bound = z_max;
  r.std_error = worst_se;
  r.status = exact_ok && worst_z <= z_max ? CheckStatus::pass : CheckStatus::fail;
  r.detail = "statistic is the largest per-coordinate |z|";
  return r;
}

CheckReport check_xi_recursion(const Problem& problem, const AlgoConfig& cfg,
                               const AlgoState& state, double gamma, long trials,
                               std::uint64_t seed) {
  const std::string name = "xi_recursion";
  const int n = problem.workers();
  const int d = problem.dim();
  const double alpha = cfg.alpha_up;
  const double omega_up = cfg.up.omega(d);
  if (alpha * (1.0 + omega_up) > 1.0 + kRelTiny)
    return not_applicable(name, "requires alpha_up (1 + omega_up) <= 1");
  if (cfg.participation < 1.0) return not_applicable(name, "needs full participation");
  if (cfg.name == AlgoName::sgd) return not_applicable(name, "sgd has no uplink memory");
  const double L = std::max(problem.smoothness(), problem.local_smoothness());
  const double b = cfg.batch.full_batch ? 1.0 : cfg.batch.size;
  const double sigma_sq = mean_sample_variance(problem, cfg.batch, state.w_hat);
  double inner = 0.0;
  for (int i = 0; i < n; ++i) {
    const ParamVector& p = state.w_hat[i];
    inner += (problem.grad_worker(i, p) - problem.grad_at_opt(i)).dot(p - problem.w_star());
  }
  inner /= n;
  const double xi_prev = xi_of(problem, state);
  const double bound = (1.0 - alpha) * xi_prev + 2.0 * alpha * L / n * inner +
                       2.0 * sigma_sq * alpha / (n * b);
  Moments xi;
  for (long t = 0; t < trials; ++t) {
    AlgoState s = state;
    s.seed = trial_seed(seed, 5, t);
    s.downlink_seed = trial_seed(seed, 6, t);
    step(cfg, problem, s, gamma);
    xi.add(xi_of(problem, s));
  }
  CheckReport r;
  r.check = name;
  r.statistic = xi.mean();
  r.bound = bound;
  r.std_error = xi.std_error();
  r.status = r.statistic <= bound + 3.0 * r.std_error + kRelTiny * std::abs(bound) ? CheckStatus::pass
                                                                                 : CheckStatus::fail;
  r.detail = "k=" + std::to_string(state.k) + fmt(", Xi_{k-1} %.6g", xi_prev);
  return r;
}

CheckReport check_xi_recursion(const Problem& problem, const AlgoConfig& cfg, double gamma,
                               long iterations, int states, long trials, std::uint64_t seed) {
  std::vector<CheckReport> parts;
  const auto snapshots = trajectory_states(problem, cfg, gamma, iterations, states, seed);
  for (std::size_t j = 0; j < snapshots.size(); ++j)
    parts.push_back(check_xi_recursion(problem, cfg, snapshots[j], gamma, trials, seed + 2000 + j));
  CheckReport r = combine("xi_recursion", parts);
  if (static_cast<int>(snapshots.size()) < states) {
    r.status = CheckStatus::fail;
    r.detail = "trajectory diverged before all states were sampled";
  }
  return r;
}

std::vector<CheckReport> run_validation_suite(const SuiteOptions& o) {
  const bool all = o.only.empty();
  if (!all && std::find(std::begin(kCheckNames), std::end(kCheckNames), o.only) == std::end(kCheckNames))
    throw ConfigError("only", "unknown check '" + o.only + "'");
  auto wanted = [&](std::string_view name) { return all || o.only == name; };
  std::vector<CheckReport> reports;
  const CompressorSpec q1 = CompressorSpec::quantize(1);

  if (wanted("moments")) {
    const std::pair<CompressorSpec, int> grid[] = {
        {CompressorSpec::identity(), 10},
        {q1, 301},
        {CompressorSpec::sparsify(0.1), 69},
        {CompressorSpec::quantize(4), 10},
    };
    std::uint64_t salt = 0;
    for (const auto& [spec, d] : grid)
      reports.push_back(check_compressor_moments(spec, d, o.trials, o.seed + 10 + salt++));
  }

  if (wanted("grad_sto_bound")) {
    SynthOptions so;
    so.dim = 10;
    so.samples_per_worker = 50;
    so.workers = 5;
    so.seed = o.seed + 20;
    const Problem p = synth_problem(so);
    Stream rng = make_stream(o.seed, Phase::check, 21, 0);
    ParamVector w = p.w_star();
    for (int j = 0; j < w.size(); ++j) w(j) += rng.normal();
    reports.push_back(check_grad_sto_bound(p, q1, BatchSpec::minibatch(1), w, o.trials, o.seed + 22));
  }

  if (wanted("upsilon_contraction")) {
    SynthOptions so;
    so.family = Family::quadratic;
    so.dim = 10;
    so.samples_per_worker = 50;
    so.workers = 5;
    so.seed = o.seed + 30;
    const Problem p = synth_problem(so);
    AlgoConfig cfg = make_preset(AlgoName::mcm, q1, q1, p.dim(), p.workers());
    const double omega = q1.omega(p.dim());
    cfg.alpha_dwn = 1.0 / (8.0 * omega);
    const double gamma = 1.0 / (8.0 * omega * p.smoothness());
    reports.push_back(check_upsilon_contraction(p, cfg, gamma, 200, 20, o.trials,
                                                o.seed + 31));
  }

  if (wanted("quadratic_unbiased_grad")) {
    SynthOptions so;
    so.family = Family::quadratic;
    so.dim = 5;
    so.samples_per_worker = 20;
    so.workers = 3;
    so.seed = o.seed + 40;
    const Problem p = synth_problem(so);
    AlgoConfig cfg = make_preset(AlgoName::mcm, q1, q1, p.dim(), p.workers());
    const double gamma = gamma_max(cfg, p);
    AlgoState s = init_state(cfg, p, ParamVector::Zero(p.dim()), o.seed + 41);
    for (int k = 0; k < 10; ++k) step(cfg, p, s, gamma);
    reports.push_back(check_quadratic_unbiased_grad(p, cfg, s, o.trials, o.seed + 42));
  }

  if (wanted("xi_recursion")) {
    SynthOptions so;
    so.dim = 10;
    so.samples_per_worker = 50;
    so.workers = 5;
    so.hetero = Heterogeneity::shifted_means(1.0);
    so.seed = o.seed + 50;
    const Problem p = synth_problem(so);
    const AlgoConfig cfg = make_preset(AlgoName::mcm, q1, q1, p.dim(), p.workers());
    reports.push_back(check_xi_recursion(p, cfg, gamma_max(cfg, p), 100, 5,
                                         o.trials, o.seed + 51));
  }
  return reports;
}

}  // namespace bicomp
