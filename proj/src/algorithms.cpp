#include "bicomp/algorithms.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace bicomp {

namespace {

constexpr double kDivergenceNorm = 1e100;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct NameEntry {
  AlgoName name;
  std::string_view text;
};

constexpr NameEntry kNames[] = {
    {AlgoName::sgd, "sgd"},
    {AlgoName::diana, "diana"},
    {AlgoName::artemis, "artemis"},
    {AlgoName::artemis_nd, "artemis_nd"},
    {AlgoName::ghost, "ghost"},
    {AlgoName::mcm, "mcm"},
    {AlgoName::rand_mcm, "rand_mcm"},
    {AlgoName::rand_mcm_g, "rand_mcm_g"},
    {AlgoName::mcm_alpha0, "mcm_alpha0"},
    {AlgoName::mcm_alpha1, "mcm_alpha1"},
};

bool is_mcm_family(AlgoName n) {
  return n == AlgoName::mcm || n == AlgoName::rand_mcm || n == AlgoName::rand_mcm_g ||
         n == AlgoName::mcm_alpha0 || n == AlgoName::mcm_alpha1;
}

void draw_participation(const AlgoConfig& cfg, AlgoState& state, long round) {
  const std::size_t n = state.active.size();
  if (cfg.participation >= 1.0) {
    std::fill(state.active.begin(), state.active.end(), 1);
    return;
  }
  Stream rng = make_stream(state.seed, Phase::participation, 0, static_cast<std::uint64_t>(round));
  for (std::size_t i = 0; i < n; ++i) state.active[i] = rng.bernoulli(cfg.participation) ? 1 : 0;
}

// Group-based downlink for shared / per_worker / grouped memories. The group
// of worker i is i mod G and group g compresses with its own stream.
void grouped_downlink(const AlgoConfig& cfg, AlgoState& state, const std::vector<char>& receive,
                      long iteration, bool charge) {
  const int n = static_cast<int>(state.w_hat.size());
  const int groups = cfg.memory.group_count(n);
  const int d = static_cast<int>(state.w.size());
  for (int g = 0; g < groups; ++g) {
    bool any = false;
    for (int i = g; i < n; i += groups) {
      state.H_prev[i] = state.H[i];
      any = any || receive[i];
    }
    if (!any) continue;
    if (cfg.dwn.is_identity()) {
      // Lossless downlink: the local model is w itself and the memory is
      // pinned to it, so Upsilon stays zero.
      for (int i = g; i < n; i += groups) state.w_hat[i] = state.H_prev[i] = state.H[i] = state.w;
      if (charge) state.bits_dwn_cum += bit_cost(cfg.dwn, d);
      continue;
    }
    Stream rng = make_stream(state.downlink_seed, Phase::downlink, static_cast<std::uint64_t>(g),
                             static_cast<std::uint64_t>(iteration));
    const Compressed c = compress(cfg.dwn, state.w - state.H[g], rng);
    const ParamVector local = state.H[g] + c.value;
    const ParamVector next = state.H[g] + cfg.alpha_dwn * c.value;
    for (int i = g; i < n; i += groups) {
      state.w_hat[i] = local;
      state.H[i] = next;
    }
    if (charge) state.bits_dwn_cum += c.bits;
  }
}

void averaged_downlink(const AlgoConfig& cfg, AlgoState& state, const std::vector<char>& receive,
                       long iteration) {
  const int n = static_cast<int>(state.w_hat.size());
  const int d = static_cast<int>(state.w.size());
  const ParamVector omega = state.w - state.H_bar;
  ParamVector total = ParamVector::Zero(d);
  for (int i = 0; i < n; ++i) {
    state.H_prev[i] = state.H[i];
    if (!receive[i]) continue;
    ParamVector c;
    if (cfg.dwn.is_identity()) {
      c = omega;
      state.bits_dwn_cum += bit_cost(cfg.dwn, d);
    } else {
      Stream rng = make_stream(state.downlink_seed, Phase::downlink, static_cast<std::uint64_t>(i),
                               static_cast<std::uint64_t>(iteration));
      Compressed out = compress(cfg.dwn, omega, rng);
      state.bits_dwn_cum += out.bits;
      c = std::move(out.value);
    }
    state.w_hat[i] = state.H[i] + c;
    state.H[i] += cfg.alpha_dwn * c;
    total += c;
  }
  state.H_bar += (cfg.alpha_dwn / n) * total;
  const int every = cfg.memory.reset_every;
  if (every > 0 && iteration % every == 0) {
    for (auto& row : state.H) row = state.H_bar;
    state.bits_dwn_cum += 32ULL * static_cast<Bits>(d);
  }
}

bool blew_up(const ParamVector& w) {
  return !w.allFinite() || w.norm() > kDivergenceNorm;
}

}  // namespace

std::string_view to_string(AlgoName name) {
  for (const auto& e : kNames)
    if (e.name == name) return e.text;
  return "?";
}

AlgoName parse_algo(std::string_view name) {
  for (const auto& e : kNames)
    if (e.text == name) return e.name;
  throw ConfigError("name", "unknown algorithm '" + std::string(name) + "'");
}

std::string_view to_string(MemoryMode::Kind kind) {
  switch (kind) {
    case MemoryMode::Kind::none: return "none";
    case MemoryMode::Kind::shared: return "shared";
    case MemoryMode::Kind::per_worker: return "per_worker";
    case MemoryMode::Kind::grouped: return "grouped";
    case MemoryMode::Kind::single_averaged: return "single_averaged";
  }
  return "?";
}

int MemoryMode::group_count(int workers) const {
  switch (kind) {
    case Kind::per_worker:
    case Kind::single_averaged:
      return workers;
    case Kind::grouped:
      return groups;
    default:
      return 1;
  }
}

std::pair<double, double> default_alphas(const CompressorSpec& up, const CompressorSpec& dwn,
                                         int d) {
  return {1.0 / (2.0 * (1.0 + up.omega(d))), 1.0 / (2.0 * (1.0 + dwn.omega(d)))};
}

AlgoConfig make_preset(AlgoName name, const CompressorSpec& up, const CompressorSpec& dwn,
                       int d, int workers, int groups) {
  AlgoConfig cfg;
  cfg.name = name;
  cfg.up = up;
  cfg.dwn = dwn;
  switch (name) {
    case AlgoName::sgd:
      cfg.up = cfg.dwn = CompressorSpec::identity();
      cfg.memory = MemoryMode::none();
      break;
    case AlgoName::diana:
      cfg.dwn = CompressorSpec::identity();
      cfg.memory = MemoryMode::none();
      break;
    case AlgoName::artemis:
      cfg.update = UpdateMode::degraded;
      cfg.memory = MemoryMode::none();
      break;
    case AlgoName::artemis_nd:
    case AlgoName::ghost:
      cfg.memory = MemoryMode::none();
      break;
    case AlgoName::mcm:
    case AlgoName::mcm_alpha0:
    case AlgoName::mcm_alpha1:
      cfg.memory = MemoryMode::shared();
      break;
    case AlgoName::rand_mcm:
      cfg.memory = MemoryMode::per_worker();
      break;
    case AlgoName::rand_mcm_g:
      cfg.memory = MemoryMode::grouped(groups);
      break;
  }
  std::tie(cfg.alpha_up, cfg.alpha_dwn) = default_alphas(cfg.up, cfg.dwn, d);
  if (name == AlgoName::sgd) cfg.alpha_up = 0.0;
  if (cfg.memory.kind == MemoryMode::Kind::none) cfg.alpha_dwn = 0.0;
  if (name == AlgoName::mcm_alpha0) cfg.alpha_dwn = 0.0;
  if (name == AlgoName::mcm_alpha1) cfg.alpha_dwn = 1.0;
  validate_config(cfg, workers);
  return cfg;
}

void validate_config(const AlgoConfig& cfg, int workers) {
  auto in_unit = [](double a) { return a >= 0.0 && a <= 1.0; };
  if (!in_unit(cfg.alpha_up)) throw ConfigError("alpha_up", "must lie in [0, 1]");
  if (!in_unit(cfg.alpha_dwn)) throw ConfigError("alpha_dwn", "must lie in [0, 1]");
  if (!(cfg.participation > 0.0)) throw ConfigError("participation", "q must be positive");
  if (!cfg.batch.full_batch && cfg.batch.size < 1) throw ConfigError("batch", "b must be at least 1");
  const auto kind = cfg.memory.kind;
  if (cfg.memory.kind == MemoryMode::Kind::grouped &&
      (cfg.memory.groups < 1 || cfg.memory.groups > workers))
    throw ConfigError("groups", "G must lie in [1, N]");
  if (cfg.memory.reset_every < 0) throw ConfigError("reset_every", "must be non-negative");
  switch (cfg.name) {
    case AlgoName::artemis:
      if (cfg.update != UpdateMode::degraded) throw ConfigError("update_mode", "artemis is degraded");
      break;
    case AlgoName::sgd:
      if (!cfg.up.is_identity() || !cfg.dwn.is_identity())
        throw ConfigError("up", "sgd uses identity compressors");
      break;
    case AlgoName::diana:
      if (!cfg.dwn.is_identity()) throw ConfigError("dwn", "diana has an uncompressed downlink");
      break;
    default:
      if (cfg.update != UpdateMode::non_degraded)
        throw ConfigError("update_mode", std::string(to_string(cfg.name)) + " is non-degraded");
      break;
  }
  if (is_mcm_family(cfg.name)) {
    if (kind == MemoryMode::Kind::none)
      throw ConfigError("memory", "MCM variants need a downlink memory");
    if (cfg.name == AlgoName::mcm && kind != MemoryMode::Kind::shared &&
        kind != MemoryMode::Kind::single_averaged)
      throw ConfigError("memory", "mcm uses a shared memory");
    if (cfg.name == AlgoName::rand_mcm && kind != MemoryMode::Kind::per_worker &&
        kind != MemoryMode::Kind::single_averaged)
      throw ConfigError("memory", "rand_mcm uses per-worker memories");
    if (cfg.name == AlgoName::rand_mcm_g && kind != MemoryMode::Kind::grouped)
      throw ConfigError("memory", "rand_mcm_g uses grouped memories");
    if (cfg.name == AlgoName::mcm_alpha0 && cfg.alpha_dwn != 0.0)
      throw ConfigError("alpha_dwn", "mcm_alpha0 requires alpha_dwn = 0");
    if (cfg.name == AlgoName::mcm_alpha1 && cfg.alpha_dwn != 1.0)
      throw ConfigError("alpha_dwn", "mcm_alpha1 requires alpha_dwn = 1");
  } else if (kind != MemoryMode::Kind::none) {
    throw ConfigError("memory", std::string(to_string(cfg.name)) + " has no downlink memory");
  }
}

bool has_downlink_memory(const AlgoConfig& cfg) {
  return cfg.memory.kind != MemoryMode::Kind::none;
}

GammaBounds gamma_bounds(double L, double omega_up, double omega_dwn, int workers, bool degraded) {
  if (!(L > 0.0)) throw std::invalid_argument("gamma_bounds: L must be positive");
  if (workers < 1) throw std::invalid_argument("gamma_bounds: N must be at least 1");
  const double n = workers;
  GammaBounds b{};
  b.up = 1.0 / (2.0 * L * (1.0 + omega_up / n));
  b.dwn = omega_dwn > 0.0 ? 1.0 / (8.0 * L * omega_dwn) : kInf;
  const double inner = 8.0 * omega_dwn + omega_up / n;
  b.upsilon = omega_dwn > 0.0 && inner > 0.0
                  ? 1.0 / (8.0 * std::sqrt(2.0) * L * omega_dwn * std::sqrt(inner))
                  : kInf;
  b.degraded = 1.0 / (8.0 * L * (1.0 + omega_dwn) * (1.0 + omega_up / n));
  b.gamma_max = degraded ? b.degraded : std::min({b.up, b.dwn, b.upsilon});
  return b;
}

double gamma_max(const AlgoConfig& cfg, const Problem& problem) {
  const int d = problem.dim();
  return gamma_bounds(problem.smoothness(), cfg.up.omega(d), cfg.dwn.omega(d), problem.workers(),
                      cfg.update == UpdateMode::degraded)
      .gamma_max;
}

double gamma_schedule(const GammaPolicy& policy, long k) {
  if (k < 0) throw std::invalid_argument("gamma_schedule: k must be non-negative");
  if (policy.kind == GammaPolicy::Kind::constant) return policy.gamma;
  return 2.0 / (policy.mu * static_cast<double>(k + 1) + policy.L_tilde);
}

ParamVector polyak_ruppert_weighted(const std::vector<ParamVector>& iterates,
                                    const std::vector<double>& gammas) {
  if (iterates.empty()) throw std::invalid_argument("polyak_ruppert_weighted: empty trace");
  if (gammas.size() != iterates.size())
    throw std::invalid_argument("polyak_ruppert_weighted: one step size per iterate");
  ParamVector sum = ParamVector::Zero(iterates.front().size());
  double total = 0.0;
  for (std::size_t j = 0; j < iterates.size(); ++j) {
    const double lambda = 1.0 / gammas[j];
    sum += lambda * iterates[j];
    total += lambda;
  }
  return sum / total;
}

ParamVector polyak_ruppert_weighted(const std::vector<ParamVector>& iterates,
                                    const GammaPolicy& policy) {
  std::vector<double> gammas(iterates.size());
  for (std::size_t j = 0; j < gammas.size(); ++j)
    gammas[j] = gamma_schedule(policy, static_cast<long>(j));
  return polyak_ruppert_weighted(iterates, gammas);
}

AlgoState init_state(const AlgoConfig& cfg, const Problem& problem, const ParamVector& w0,
                     std::uint64_t seed) {
  validate_config(cfg, problem.workers());
  require_dim(w0, problem.dim(), "w0");
  require_finite(w0, "w0");
  const int n = problem.workers();
  AlgoState s;
  s.seed = seed;
  s.downlink_seed = seed;
  s.w = w0;
  s.H_prev.assign(n, w0);
  s.H.assign(n, w0);
  s.w_hat.assign(n, w0);
  s.H_bar = w0;
  s.h.reserve(n);
  for (int i = 0; i < n; ++i) {
    Stream rng = make_stream(seed, Phase::gradient, static_cast<std::uint64_t>(i), 0);
    s.h.push_back(problem.grad_stochastic(i, w0, cfg.batch, rng));
  }
  s.active.assign(n, 1);
  draw_participation(cfg, s, 0);
  return s;
}

void step(const AlgoConfig& cfg, const Problem& problem, AlgoState& s, double gamma) {
  if (s.diverged) return;
  const int n = problem.workers();
  const int d = problem.dim();
  const long next = s.k + 1;
  const auto it = static_cast<std::uint64_t>(next);

  try {
    // Uplink and aggregation, summed in ascending worker order.
    int count = 0;
    ParamVector g_hat = ParamVector::Zero(d);
    for (int i = 0; i < n; ++i) {
      if (!s.active[i]) continue;
      ++count;
      Stream grad_rng = make_stream(s.seed, Phase::gradient, static_cast<std::uint64_t>(i), it);
      const ParamVector g = problem.grad_stochastic(i, s.w_hat[i], cfg.batch, grad_rng);
      if (cfg.name == AlgoName::sgd || cfg.up.is_identity()) {
        // The compressed difference is exact, so the memory cancels out.
        g_hat += g;
        s.h[i] += cfg.alpha_up * (g - s.h[i]);
        s.bits_up_cum += bit_cost(cfg.up, d);
      } else {
        Stream up_rng = make_stream(s.seed, Phase::uplink, static_cast<std::uint64_t>(i), it);
        Compressed c = compress(cfg.up, g - s.h[i], up_rng);
        g_hat += c.value + s.h[i];
        s.h[i] += cfg.alpha_up * c.value;
        s.bits_up_cum += c.bits;
      }
    }
    const bool empty = count == 0;
    if (!empty) g_hat /= count;

    const ParamVector w_old = s.w;
    std::vector<char> receive;
    if (!empty) {
      switch (cfg.name) {
        case AlgoName::artemis: {
          Stream rng = make_stream(s.downlink_seed, Phase::downlink, 0, it);
          Compressed c = compress(cfg.dwn, g_hat, rng);
          s.w -= gamma * c.value;
          for (auto& row : s.w_hat) row = s.w;
          s.bits_dwn_cum += c.bits;
          break;
        }
        case AlgoName::ghost:
        case AlgoName::artemis_nd: {
          s.w -= gamma * g_hat;
          if (cfg.dwn.is_identity()) {
            for (auto& row : s.w_hat) row = s.w;
            s.bits_dwn_cum += bit_cost(cfg.dwn, d);
            break;
          }
          Stream rng = make_stream(s.downlink_seed, Phase::downlink, 0, it);
          Compressed c = compress(cfg.dwn, g_hat, rng);
          if (cfg.name == AlgoName::ghost) {
            const ParamVector local = w_old - gamma * c.value;
            for (auto& row : s.w_hat) row = local;
          } else {
            for (auto& row : s.w_hat) row -= gamma * c.value;
          }
          s.bits_dwn_cum += c.bits;
          break;
        }
        default:
          s.w -= gamma * g_hat;
          break;
      }
    }

    draw_participation(cfg, s, next);
    receive = s.active;

    switch (cfg.memory.kind) {
      case MemoryMode::Kind::none:
        if (cfg.name == AlgoName::sgd || cfg.name == AlgoName::diana) {
          if (!empty) {
            for (auto& row : s.w_hat) row = s.w;
            s.bits_dwn_cum += bit_cost(cfg.dwn, d);
          }
        }
        for (int i = 0; i < n; ++i) s.H_prev[i] = s.H[i] = s.w;
        break;
      case MemoryMode::Kind::single_averaged:
        averaged_downlink(cfg, s, receive, next);
        break;
      default:
        grouped_downlink(cfg, s, receive, next, true);
        break;
    }
  } catch (const NonFiniteError&) {
    s.diverged = true;
  }
  s.k = next;
  if (!s.diverged && blew_up(s.w)) s.diverged = true;
}

void redraw_downlink(const AlgoConfig& cfg, const Problem& problem, AlgoState& s) {
  if (cfg.memory.kind == MemoryMode::Kind::none || cfg.memory.kind == MemoryMode::Kind::single_averaged)
    throw std::invalid_argument("redraw_downlink: needs a shared, per-worker or grouped memory");
  const std::vector<char> all(static_cast<std::size_t>(problem.workers()), 1);
  s.H = s.H_prev;
  grouped_downlink(cfg, s, all, s.k, false);
}

}  // namespace bicomp
