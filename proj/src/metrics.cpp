#include "bicomp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace bicomp {

namespace {

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double log_excess(double excess) {
  if (std::isnan(excess)) return std::numeric_limits<double>::infinity();
  return std::log10(std::max(excess, kExcessFloor));
}

std::vector<double> padded_log_curve(const RunTrace& t, std::size_t length) {
  std::vector<double> curve;
  curve.reserve(length);
  double last = log_excess(t.records.empty() ? kExcessFloor : t.records.front().excess_loss);
  for (std::size_t j = 0; j < length; ++j) {
    if (j < t.records.size()) {
      const double v = log_excess(t.records[j].excess_loss);
      if (std::isfinite(v)) last = v;
    }
    curve.push_back(last);
  }
  return curve;
}

double window_mean(const std::vector<double>& curve, std::size_t begin, std::size_t end) {
  double s = 0.0;
  for (std::size_t j = begin; j < end; ++j) s += curve[j];
  return s / static_cast<double>(end - begin);
}

}  // namespace

IterRecord record_iteration(const Problem& problem, const AlgoConfig& cfg, const AlgoState& state,
                            double gamma_k) {
  const int n = problem.workers();
  const int d = problem.dim();
  IterRecord r;
  r.k = state.k;
  r.gamma_k = gamma_k;
  r.excess_loss = problem.loss(state.w) - problem.f_star();
  r.grad_norm_sq = problem.grad_full(state.w).squaredNorm();
  double ups = 0.0;
  double xi = 0.0;
  for (int i = 0; i < n; ++i) {
    ups += (state.w - state.H_prev[i]).squaredNorm();
    xi += (state.h[i] - problem.grad_at_opt(i)).squaredNorm();
  }
  r.upsilon = ups / n;
  r.xi = xi / (static_cast<double>(n) * n);
  const double omega_dwn = cfg.dwn.omega(d);
  r.lyapunov = (state.w - problem.w_star()).squaredNorm() +
               32.0 * gamma_k * problem.smoothness() * omega_dwn * omega_dwn * r.upsilon;
  r.bits_up_cum = state.bits_up_cum;
  r.bits_dwn_cum = state.bits_dwn_cum;
  return r;
}

std::string_view to_string(TraceStatus status) {
  return status == TraceStatus::ok ? "OK" : "DIVERGED";
}

std::string_view to_string(SeedStatus status) {
  switch (status) {
    case SeedStatus::converged: return "CONVERGED";
    case SeedStatus::saturated: return "SATURATED";
    case SeedStatus::diverged: return "DIVERGED";
  }
  return "?";
}

RunTrace run_algorithm(const AlgoConfig& cfg, const Problem& problem, const RunOptions& options,
                       std::string label) {
  if (options.iterations < 1) throw ConfigError("iterations", "K must be at least 1");
  RunTrace trace;
  trace.algorithm = label.empty() ? std::string(to_string(cfg.name)) : std::move(label);
  trace.seed = options.seed;
  const ParamVector w0 =
      options.w0.size() == 0 ? ParamVector::Zero(problem.dim()) : options.w0;
  AlgoState state = init_state(cfg, problem, w0, options.seed);

  const double bound = gamma_max(cfg, problem);
  if (cfg.gamma.kind == GammaPolicy::Kind::constant && cfg.gamma.gamma > bound) {
    trace.warnings.push_back("constant step " + num(cfg.gamma.gamma) + " exceeds gamma_max " +
                             num(bound));
  }

  trace.records.reserve(static_cast<std::size_t>(options.iterations) + 1);
  if (options.keep_iterates) trace.iterates.push_back(state.w);
  trace.records.push_back(record_iteration(problem, cfg, state, gamma_schedule(cfg.gamma, 0)));
  for (long k = 0; k < options.iterations; ++k) {
    const double gamma = gamma_schedule(cfg.gamma, k);
    step(cfg, problem, state, gamma);
    if (options.keep_iterates) trace.iterates.push_back(state.w);
    if (state.diverged) {
      IterRecord r;
      r.k = state.k;
      r.gamma_k = gamma;
      r.excess_loss = std::numeric_limits<double>::infinity();
      r.grad_norm_sq = std::numeric_limits<double>::infinity();
      r.upsilon = r.xi = r.lyapunov = std::numeric_limits<double>::infinity();
      r.bits_up_cum = state.bits_up_cum;
      r.bits_dwn_cum = state.bits_dwn_cum;
      trace.records.push_back(r);
      trace.status = TraceStatus::diverged;
      break;
    }
    trace.records.push_back(record_iteration(problem, cfg, state, gamma_schedule(cfg.gamma, state.k)));
  }
  return trace;
}

PhiVariant parse_phi_variant(std::string_view name) {
  if (name == "base") return PhiVariant::base;
  if (name == "ghost") return PhiVariant::ghost;
  if (name == "heterog") return PhiVariant::heterog;
  if (name == "noncvx") return PhiVariant::noncvx;
  if (name == "rand_quadratic") return PhiVariant::rand_quadratic;
  throw std::invalid_argument("unknown phi variant '" + std::string(name) + "'");
}

double phi(PhiVariant variant, const PhiParams& p) {
  const double gl = p.gamma * p.L;
  const double wu = p.omega_up;
  const double wd = p.omega_dwn;
  switch (variant) {
    case PhiVariant::base:
      return (1.0 + wu) * (1.0 + 64.0 * gl * wd * wd);
    case PhiVariant::ghost:
      return (1.0 + wu) * (1.0 + 2.0 * gl * wd);
    case PhiVariant::heterog:
      if (!(p.alpha_dwn > 0.0)) throw std::invalid_argument("phi heterog: alpha_dwn must be positive");
      return (1.0 + 8.0 * wu) * (1.0 + 8.0 * gl * wd / p.alpha_dwn);
    case PhiVariant::noncvx:
      return (1.0 + wu) * (1.0 + 32.0 * gl * wd * wd);
    case PhiVariant::rand_quadratic:
      if (!(p.C > 0.0) || !(p.K > 0.0))
        throw std::invalid_argument("phi rand_quadratic: C and K must be positive");
      return (1.0 + wu) * (1.0 + 4.0 * gl * gl * wd / p.K * (1.0 / p.C + wu / p.workers));
  }
  throw std::invalid_argument("unknown phi variant");
}

double predicted_saturation(PhiVariant variant, const PhiParams& p, double sigma_sq) {
  return p.gamma * p.gamma * sigma_sq * phi(variant, p) / (static_cast<double>(p.workers) * p.batch);
}

RunSummary aggregate(const std::vector<RunTrace>& traces) {
  if (traces.empty()) throw std::invalid_argument("aggregate: no traces");
  std::size_t length = 0;
  for (const auto& t : traces) {
    if (t.records.empty()) throw std::invalid_argument("aggregate: empty trace");
    length = std::max(length, t.records.size());
  }
  RunSummary s;
  s.algorithm = traces.front().algorithm;
  for (const auto& t : traces) {
    if (t.status == TraceStatus::ok && t.records.size() != length)
      throw std::invalid_argument("aggregate: traces of different lengths");
    if (t.records.size() != length) s.padded = true;
  }

  std::vector<std::vector<double>> curves;
  curves.reserve(traces.size());
  for (const auto& t : traces) curves.push_back(padded_log_curve(t, length));

  const std::size_t longest =
      std::max_element(traces.begin(), traces.end(), [](const RunTrace& a, const RunTrace& b) {
        return a.records.size() < b.records.size();
      })->records.size();
  s.k.resize(length);
  for (std::size_t j = 0; j < length; ++j) s.k[j] = static_cast<long>(j);
  for (const auto& t : traces)
    if (t.records.size() == longest)
      for (std::size_t j = 0; j < length; ++j) s.k[j] = t.records[j].k;

  const double m = static_cast<double>(traces.size());
  s.mean_log10.assign(length, 0.0);
  s.std_log10.assign(length, 0.0);
  for (std::size_t j = 0; j < length; ++j) {
    double mean = 0.0;
    for (const auto& c : curves) mean += c[j];
    mean /= m;
    double var = 0.0;
    for (const auto& c : curves) var += (c[j] - mean) * (c[j] - mean);
    s.mean_log10[j] = mean;
    s.std_log10[j] = std::sqrt(var / m);
  }

  const std::size_t window = std::max<std::size_t>(1, length / 10);
  double total = 0.0;
  int used = 0;
  for (std::size_t r = 0; r < traces.size(); ++r) {
    s.seeds.push_back(traces[r].seed);
    const double last = window_mean(curves[r], length - window, length);
    s.seed_saturation.push_back(last);
    if (traces[r].status == TraceStatus::diverged) {
      s.status.push_back(SeedStatus::diverged);
      continue;
    }
    const bool has_prev = length >= 2 * window;
    const double prev = has_prev ? window_mean(curves[r], length - 2 * window, length - window) : last;
    // A curve sitting on the floor has converged as far as it can be measured.
    const bool at_floor = last <= std::log10(kExcessFloor);
    s.status.push_back((has_prev && prev - last > 0.5) || at_floor ? SeedStatus::converged
                                                                   : SeedStatus::saturated);
    total += last;
    ++used;
  }
  s.saturation_level = used > 0 ? total / used : std::numeric_limits<double>::infinity();
  return s;
}

void write_trace_csv(std::ostream& out, const RunTrace& t) {
  out << "# schema: " << kTraceSchema << '\n';
  out << "run_id,seed,algorithm,k,gamma_k,excess_loss,grad_norm_sq,upsilon,xi,lyapunov,"
         "bits_up_cum,bits_dwn_cum,status\n";
  const std::string run_id = t.algorithm + "-s" + std::to_string(t.seed);
  for (std::size_t j = 0; j < t.records.size(); ++j) {
    const IterRecord& r = t.records[j];
    const bool last = j + 1 == t.records.size();
    const TraceStatus st = last ? t.status : TraceStatus::ok;
    out << run_id << ',' << t.seed << ',' << t.algorithm << ',' << r.k << ',' << num(r.gamma_k) << ','
        << num(r.excess_loss) << ',' << num(r.grad_norm_sq) << ',' << num(r.upsilon) << ','
        << num(r.xi) << ',' << num(r.lyapunov) << ',' << r.bits_up_cum << ',' << r.bits_dwn_cum << ','
        << to_string(st) << '\n';
  }
}

void write_summary_csv(std::ostream& out, const RunSummary& s) {
  out << "# schema: " << kSummarySchema << '\n';
  out << "# saturation_level: " << num(s.saturation_level) << '\n';
  out << "algorithm,k,mean_log10_excess,std_log10_excess\n";
  for (std::size_t j = 0; j < s.k.size(); ++j)
    out << s.algorithm << ',' << s.k[j] << ',' << num(s.mean_log10[j]) << ',' << num(s.std_log10[j])
        << '\n';
}

nlohmann::json summary_json(const RunSummary& s) {
  nlohmann::json seeds = nlohmann::json::array();
  for (std::size_t r = 0; r < s.seeds.size(); ++r) {
    seeds.push_back({{"seed", s.seeds[r]},
                     {"status", std::string(to_string(s.status[r]))},
                     {"saturation_level", s.seed_saturation[r]}});
  }
  nlohmann::json j = {{"algorithm", s.algorithm},
                      {"iterations", s.k.empty() ? 0 : s.k.back()},
                      {"padded", s.padded},
                      {"seeds", seeds}};
  if (std::isfinite(s.saturation_level)) {
    j["saturation_level"] = s.saturation_level;
  } else {
    j["saturation_level"] = nullptr;
  }
  j["final_mean_log10"] = s.mean_log10.empty() ? 0.0 : s.mean_log10.back();
  return j;
}

}  // namespace bicomp
