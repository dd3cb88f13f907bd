#include "bicomp/problem.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bicomp {

namespace {

// log(1 + exp(-z)) without overflow.
double log1p_exp_neg(double z) {
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_worker(const Problem& p, int worker) {
  if (worker < 0 || worker >= p.workers()) {
    throw std::out_of_range("worker index " + std::to_string(worker) + " out of range [0, " +
                            std::to_string(p.workers()) + ")");
  }
}

Matrix random_orthogonal(int d, Stream& rng) {
  Matrix g(d, d);
  for (int c = 0; c < d; ++c)
    for (int r = 0; r < d; ++r) g(r, c) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  // Fix column signs so the factorisation is unique.
  const Matrix rr = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int c = 0; c < d; ++c)
    if (rr(c, c) < 0) q.col(c) = -q.col(c);
  return q;
}

ParamVector spectrum(int d, double decay) {
  ParamVector lambda(d);
  for (int j = 0; j < d; ++j) lambda(j) = std::pow(static_cast<double>(j + 1), -decay);
  return lambda;
}

// Offset of worker i's feature mean (or quadratic centre) along 1/sqrt(d),
// centred so that the offsets average to zero across workers.
double worker_offset(const Heterogeneity& h, int worker, int workers) {
  if (h.kind == Heterogeneity::Kind::none) return 0.0;
  return (static_cast<double>(worker) - 0.5 * (workers - 1)) * h.delta;
}

std::vector<Shard> synth_shards(const SynthOptions& o, std::uint64_t seed) {
  const int d = o.dim;
  const int n = o.samples_per_worker;
  Stream setup = make_stream(seed, Phase::data, 0, 0);
  const Matrix rotation = random_orthogonal(d, setup);
  const ParamVector lambda = spectrum(d, o.spectrum_decay);
  ParamVector w_true(d);
  for (int j = 0; j < d; ++j) w_true(j) = setup.normal();
  const ParamVector direction = ParamVector::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
  // Rows are x = mean + rotation * diag(sqrt(lambda)) * z.
  const Matrix mixing = rotation * lambda.cwiseSqrt().asDiagonal();

  const bool homogeneous = o.hetero.kind == Heterogeneity::Kind::none;
  const int distinct = homogeneous ? 1 : o.workers;
  std::vector<Shard> shards;
  shards.reserve(static_cast<std::size_t>(o.workers));

  for (int i = 0; i < distinct; ++i) {
    Stream rng = make_stream(seed, Phase::data, static_cast<std::uint64_t>(i) + 1, 0);
    const double offset = worker_offset(o.hetero, i, o.workers);
    Matrix z(n, d);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d; ++c) z(r, c) = rng.normal();
    Shard s;
    switch (o.family) {
      case Family::lsr: {
        s.features = z * mixing.transpose();
        s.features.rowwise() += (offset * direction).transpose();
        s.targets = s.features * w_true;
        for (int r = 0; r < n; ++r)
          s.targets(r) += o.response_offset + o.label_noise * rng.normal();
        break;
      }
      case Family::logistic: {
        s.features = z * mixing.transpose();
        s.features.rowwise() += (offset * direction).transpose();
        const ParamVector margin = s.features * w_true;
        s.targets.resize(n);
        for (int r = 0; r < n; ++r)
          s.targets(r) = rng.uniform() < sigmoid(margin(r) + o.response_offset) ? 1.0 : -1.0;
        break;
      }
      case Family::quadratic: {
        // Whiten the Gaussian rows so that A^T A / n equals Q = U diag(lambda) U^T exactly.
        const Matrix gram = z.transpose() * z / static_cast<double>(n);
        Eigen::LLT<Matrix> llt(gram);
        if (llt.info() != Eigen::Success) throw std::runtime_error("quadratic synth: singular draw");
        const Matrix upper = llt.matrixU();
        const Matrix white =
            upper.transpose().triangularView<Eigen::Lower>().solve(z.transpose()).transpose();
        s.features = white * mixing.transpose();
        const ParamVector center = w_true + offset * direction;
        s.targets = s.features * center;
        break;
      }
    }
    shards.push_back(std::move(s));
  }
  while (static_cast<int>(shards.size()) < o.workers) shards.push_back(shards.front());
  return shards;
}

}  // namespace

std::string_view to_string(Family family) {
  switch (family) {
    case Family::lsr: return "lsr";
    case Family::logistic: return "logistic";
    case Family::quadratic: return "quadratic";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  if (name == "lsr") return Family::lsr;
  if (name == "logistic") return Family::logistic;
  if (name == "quadratic") return Family::quadratic;
  throw std::invalid_argument("unknown problem family '" + std::string(name) + "'");
}

double largest_eigenvalue(const Matrix& sym, double tol) {
  const Eigen::Index d = sym.rows();
  ParamVector v(d);
  for (Eigen::Index j = 0; j < d; ++j) v(j) = 1.0 + 0.01 * static_cast<double>(j);
  v.normalize();
  double rho = 0.0;
  for (int it = 0; it < 1'000'000; ++it) {
    ParamVector hv = sym * v;
    rho = v.dot(hv);
    const double norm = hv.norm();
    if (norm == 0.0) return 0.0;
    if ((hv - rho * v).norm() <= tol * std::abs(rho)) return rho;
    v = hv / norm;
  }
  return rho;
}

double smallest_eigenvalue(const Matrix& sym, double tol) {
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() != Eigen::Success) return 0.0;
  const Eigen::Index d = sym.rows();
  ParamVector v(d);
  for (Eigen::Index j = 0; j < d; ++j) v(j) = 1.0 - 0.01 * static_cast<double>(j);
  v.normalize();
  // Power iteration on the inverse; the Rayleigh quotient on `sym` itself is
  // the eigenvalue estimate.
  double rho = 0.0;
  for (int it = 0; it < 1'000'000; ++it) {
    ParamVector next = llt.solve(v);
    next.normalize();
    const ParamVector hv = sym * next;
    rho = next.dot(hv);
    if ((hv - rho * next).norm() <= tol * std::abs(rho)) return rho;
    v = next;
  }
  return rho;
}

Problem Problem::from_shards(Family family, std::vector<Shard> shards,
                             std::optional<ParamVector> known_optimum, double tol) {
  if (shards.empty()) throw std::invalid_argument("problem needs at least one worker shard");
  Problem p;
  p.family_ = family;
  p.dim_ = static_cast<int>(shards.front().features.cols());
  if (p.dim_ < 1) throw DimensionError("problem dimension must be at least 1");
  for (const auto& s : shards) {
    if (s.features.cols() != p.dim_ || s.features.rows() != s.targets.size())
      throw DimensionError("inconsistent shard shapes");
    if (s.targets.size() == 0) throw std::invalid_argument("empty shard");
  }
  p.shards_ = std::move(shards);
  p.compute_constants(std::move(known_optimum), tol);
  return p;
}

Problem Problem::quadratic(const Matrix& hessian, const ParamVector& center) {
  const Eigen::Index d = hessian.rows();
  if (hessian.cols() != d) throw DimensionError("quadratic: Hessian must be square");
  require_dim(center, d, "quadratic centre");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(hessian);
  const ParamVector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Shard s;
  // (1/d) A^T A = U diag(lambda) U^T for A = sqrt(d) diag(sqrt(lambda)) U^T.
  s.features = std::sqrt(static_cast<double>(d)) * root.asDiagonal() *
               eig.eigenvectors().transpose();
  s.targets = s.features * center;
  std::vector<Shard> shards;
  shards.push_back(std::move(s));
  return from_shards(Family::quadratic, std::move(shards), center);
}

void Problem::compute_constants(std::optional<ParamVector> known_optimum, double tol) {
  auto [L, mu] = smoothness_constants(*this);
  L_ = L;
  mu_ = mu;
  L_local_ = 0.0;
  for (int i = 0; i < workers(); ++i) {
    double li = largest_eigenvalue(worker_hessian(i));
    if (family_ == Family::logistic) li /= 4.0;
    L_local_ = std::max(L_local_, li);
  }
  if (known_optimum) {
    require_dim(*known_optimum, dim_, "known optimum");
    w_star_ = std::move(*known_optimum);
    f_star_ = loss(w_star_);
  } else {
    std::tie(w_star_, f_star_) = solve_optimum(*this, tol);
  }
  grads_at_opt_.clear();
  hetero_B_sq_ = 0.0;
  sigma_sq_at_opt_ = 0.0;
  for (int i = 0; i < workers(); ++i) {
    grads_at_opt_.push_back(grad_worker(i, w_star_));
    hetero_B_sq_ += grads_at_opt_.back().squaredNorm();
    sigma_sq_at_opt_ += sample_grad_variance(i, w_star_);
  }
  hetero_B_sq_ /= workers();
  sigma_sq_at_opt_ /= workers();
}

double Problem::worker_loss(int worker, const ParamVector& w) const {
  check_worker(*this, worker);
  require_dim(w, dim_, "worker_loss");
  const Shard& s = shard(worker);
  const double n = static_cast<double>(s.targets.size());
  if (family_ == Family::logistic) {
    const ParamVector margin = (s.features * w).cwiseProduct(s.targets);
    double total = 0.0;
    for (Eigen::Index r = 0; r < margin.size(); ++r) total += log1p_exp_neg(margin(r));
    return total / n;
  }
  const ParamVector residual = s.features * w - s.targets;
  return 0.5 * residual.squaredNorm() / n;
}

double Problem::loss(const ParamVector& w) const {
  double total = 0.0;
  for (int i = 0; i < workers(); ++i) total += worker_loss(i, w);
  return total / workers();
}

ParamVector Problem::grad_worker(int worker, const ParamVector& w) const {
  check_worker(*this, worker);
  require_dim(w, dim_, "grad_worker");
  const Shard& s = shard(worker);
  const double n = static_cast<double>(s.targets.size());
  if (family_ == Family::logistic) {
    const ParamVector margin = (s.features * w).cwiseProduct(s.targets);
    ParamVector weights(margin.size());
    for (Eigen::Index r = 0; r < margin.size(); ++r)
      weights(r) = -s.targets(r) * sigmoid(-margin(r));
    return s.features.transpose() * weights / n;
  }
  const ParamVector residual = s.features * w - s.targets;
  return s.features.transpose() * residual / n;
}

ParamVector Problem::grad_full(const ParamVector& w) const {
  require_dim(w, dim_, "grad_full");
  ParamVector g = ParamVector::Zero(dim_);
  for (int i = 0; i < workers(); ++i) g += grad_worker(i, w);
  return g / workers();
}

ParamVector Problem::sample_grad(int worker, int sample, const ParamVector& w) const {
  check_worker(*this, worker);
  const Shard& s = shard(worker);
  const auto row = s.features.row(sample);
  const double z = row.dot(w);
  if (family_ == Family::logistic) {
    const double y = s.targets(sample);
    return (-y * sigmoid(-y * z)) * row.transpose();
  }
  return (z - s.targets(sample)) * row.transpose();
}

ParamVector Problem::grad_stochastic(int worker, const ParamVector& w, const BatchSpec& batch,
                                     Stream& rng) const {
  check_worker(*this, worker);
  require_dim(w, dim_, "grad_stochastic");
  if (batch.full_batch) return grad_worker(worker, w);
  const int n = samples(worker);
  if (n == 0) throw std::invalid_argument("grad_stochastic: empty shard");
  if (batch.size < 1 || batch.size > n)
    throw std::invalid_argument("grad_stochastic: batch size must lie in [1, n_i]");
  ParamVector g = ParamVector::Zero(dim_);
  for (int b = 0; b < batch.size; ++b) {
    const int j = static_cast<int>(rng.below(static_cast<std::size_t>(n)));
    g += sample_grad(worker, j, w);
  }
  return g / batch.size;
}

double Problem::sample_grad_variance(int worker, const ParamVector& w) const {
  const ParamVector mean = grad_worker(worker, w);
  const int n = samples(worker);
  double total = 0.0;
  for (int j = 0; j < n; ++j) total += (sample_grad(worker, j, w) - mean).squaredNorm();
  return total / n;
}

Matrix Problem::worker_hessian(int worker) const {
  check_worker(*this, worker);
  const Shard& s = shard(worker);
  return s.features.transpose() * s.features / static_cast<double>(s.targets.size());
}

Matrix Problem::hessian() const {
  Matrix h = Matrix::Zero(dim_, dim_);
  for (int i = 0; i < workers(); ++i) h += worker_hessian(i);
  return h / workers();
}

std::pair<double, double> smoothness_constants(const Problem& problem) {
  const Matrix h = problem.hessian();
  const double top = largest_eigenvalue(h);
  if (problem.family() == Family::logistic) return {top / 4.0, 0.0};
  return {top, smallest_eigenvalue(h)};
}

std::pair<ParamVector, double> solve_optimum(const Problem& problem, double tol) {
  const int d = problem.dim();
  if (problem.family() != Family::logistic) {
    // Normal equations: (1/N) sum_i A_i^T A_i / n_i w = (1/N) sum_i A_i^T y_i / n_i.
    Matrix h = Matrix::Zero(d, d);
    ParamVector rhs = ParamVector::Zero(d);
    for (int i = 0; i < problem.workers(); ++i) {
      const Shard& s = problem.shard(i);
      const double n = static_cast<double>(s.targets.size());
      h += s.features.transpose() * s.features / n;
      rhs += s.features.transpose() * s.targets / n;
    }
    Eigen::LDLT<Matrix> ldlt(h);
    ParamVector w = ldlt.solve(rhs);
    // One step of iterative refinement.
    w += ldlt.solve(rhs - h * w);
    return {w, problem.loss(w)};
  }
  const double L = smoothness_constants(problem).first;
  if (!(L > 0)) throw std::runtime_error("solve_optimum: logistic problem has zero smoothness");
  ParamVector w = ParamVector::Zero(d);
  for (long it = 0; it < 10'000'000; ++it) {
    const ParamVector g = problem.grad_full(w);
    if (g.norm() <= tol) return {w, problem.loss(w)};
    w -= g / L;
  }
  throw std::runtime_error("solve_optimum: gradient descent did not reach tolerance in 1e7 iterations");
}

Problem synth_problem(const SynthOptions& o) {
  if (o.dim < 1) throw ConfigError("problem.d", "must be at least 1");
  if (o.workers < 1) throw ConfigError("problem.workers", "must be at least 1");
  if (o.family != Family::logistic && o.samples_per_worker < o.dim)
    throw ConfigError("problem.n_per_worker", "must be at least d");
  if (o.samples_per_worker < 1) throw ConfigError("problem.n_per_worker", "must be at least 1");

  std::uint64_t seed = o.seed;
  for (int attempt = 0; attempt < 5; ++attempt) {
    std::vector<Shard> shards = synth_shards(o, seed);
    std::optional<ParamVector> optimum;
    if (o.family == Family::quadratic && o.hetero.kind == Heterogeneity::Kind::none) {
      // Every worker holds the same centred quadratic; its centre is exact.
      const Shard& s = shards.front();
      optimum = s.features.colPivHouseholderQr().solve(s.targets);
      // Rebuild targets from the returned centre so grad F(w*) vanishes exactly.
      for (auto& sh : shards) sh.targets = sh.features * *optimum;
    }
    if (o.family == Family::lsr) {
      Matrix h = Matrix::Zero(o.dim, o.dim);
      for (const auto& s : shards)
        h += s.features.transpose() * s.features / static_cast<double>(s.targets.size());
      Eigen::FullPivLU<Matrix> lu(h);
      lu.setThreshold(1e-12);
      if (lu.rank() < o.dim) {
        seed = mix64(seed + 0x632BE59BD9B4E019ULL + static_cast<std::uint64_t>(attempt));
        continue;
      }
    }
    return Problem::from_shards(o.family, std::move(shards), std::move(optimum));
  }
  throw std::runtime_error("synth_problem: degenerate design after 5 attempts");
}

nlohmann::json Problem::to_json() const {
  using nlohmann::json;
  auto vec = [](const ParamVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json shards = json::array();
  for (const auto& s : shards_) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < s.features.rows(); ++r)
      rows.push_back(vec(s.features.row(r).transpose()));
    shards.push_back({{"features", rows}, {"targets", vec(s.targets)}});
  }
  json grads = json::array();
  for (const auto& g : grads_at_opt_) grads.push_back(vec(g));
  return {{"format", "bicomp-problem/1"},
          {"family", std::string(to_string(family_))},
          {"dim", dim_},
          {"shards", shards},
          {"L", L_},
          {"mu", mu_},
          {"L_local", L_local_},
          {"w_star", vec(w_star_)},
          {"f_star", f_star_},
          {"sigma_sq_at_opt", sigma_sq_at_opt_},
          {"hetero_B_sq", hetero_B_sq_},
          {"grads_at_opt", grads}};
}

Problem Problem::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "bicomp-problem/1")
    throw std::invalid_argument("not a bicomp-problem/1 snapshot");
  auto vec = [](const nlohmann::json& a) {
    const auto values = a.get<std::vector<double>>();
    return ParamVector(Eigen::Map<const ParamVector>(values.data(), static_cast<Eigen::Index>(values.size())));
  };
  Problem p;
  p.family_ = parse_family(j.at("family").get<std::string>());
  p.dim_ = j.at("dim").get<int>();
  for (const auto& sj : j.at("shards")) {
    Shard s;
    const auto& rows = sj.at("features");
    s.features.resize(static_cast<Eigen::Index>(rows.size()), p.dim_);
    for (std::size_t r = 0; r < rows.size(); ++r)
      s.features.row(static_cast<Eigen::Index>(r)) = vec(rows[r]).transpose();
    s.targets = vec(sj.at("targets"));
    p.shards_.push_back(std::move(s));
  }
  p.L_ = j.at("L").get<double>();
  p.mu_ = j.at("mu").get<double>();
  p.L_local_ = j.at("L_local").get<double>();
  p.w_star_ = vec(j.at("w_star"));
  p.f_star_ = j.at("f_star").get<double>();
  p.sigma_sq_at_opt_ = j.at("sigma_sq_at_opt").get<double>();
  p.hetero_B_sq_ = j.at("hetero_B_sq").get<double>();
  for (const auto& g : j.at("grads_at_opt")) p.grads_at_opt_.push_back(vec(g));
  return p;
}

}  // namespace bicomp
