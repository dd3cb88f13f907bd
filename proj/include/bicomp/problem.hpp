#pragma once

#include "bicomp/rng.hpp"
#include "bicomp/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bicomp {

enum class Family { lsr, logistic, quadratic };

std::string_view to_string(Family family);
Family parse_family(std::string_view name);

/// One worker's local dataset. For logistic regression targets are +1/-1.
struct Shard {
  Matrix features;
  ParamVector targets;
};

struct BatchSpec {
  int size = 1;
  bool full_batch = false;

  static BatchSpec full() { return {1, true}; }
  static BatchSpec minibatch(int b) { return {b, false}; }
};

struct Heterogeneity {
  enum class Kind { none, shifted_means };
  Kind kind = Kind::none;
  double delta = 0.0;

  static Heterogeneity none() { return {}; }
  static Heterogeneity shifted_means(double delta) { return {Kind::shifted_means, delta}; }
};

struct SynthOptions {
  Family family = Family::lsr;
  int dim = 20;
  int samples_per_worker = 200;
  int workers = 20;
  Heterogeneity hetero;
  std::uint64_t seed = 0;
  /// Standard deviation of the additive label noise (LSR only).
  double label_noise = 0.5;
  /// Feature covariance eigenvalues are (j + 1)^(-spectrum_decay), j = 0..d-1.
  double spectrum_decay = 0.0;
  /// Constant added to every linear response. The model has no intercept, so
  /// with shifted feature means each worker ends up with a different optimum.
  double response_offset = 1.0;
};

/// Finite-sum objective F = (1/N) sum_i F_i over N worker shards.
///
/// LSR and quadratic: F_i(w) = 1/(2 n_i) ||A_i w - y_i||^2.
/// Logistic:          F_i(w) = 1/n_i sum_j log(1 + exp(-y_j a_j^T w)).
///
/// Immutable once built; all constants (L, mu, w*, F*, ...) are computed at
/// construction and cached.
class Problem {
 public:
  /// Builds a problem and solves for its optimum. When `known_optimum` is
  /// given it is taken as w* verbatim (used for closed-form quadratics).
  static Problem from_shards(Family family, std::vector<Shard> shards,
                             std::optional<ParamVector> known_optimum = std::nullopt,
                             double tol = 1e-12);

  /// Single-worker quadratic 1/2 (w - c)^T Q (w - c) for symmetric positive
  /// semi-definite Q, realised as a d-row least-squares shard.
  static Problem quadratic(const Matrix& hessian, const ParamVector& center);

  Family family() const noexcept { return family_; }
  int dim() const noexcept { return dim_; }
  int workers() const noexcept { return static_cast<int>(shards_.size()); }
  const Shard& shard(int worker) const { return shards_.at(static_cast<std::size_t>(worker)); }
  int samples(int worker) const { return static_cast<int>(shard(worker).targets.size()); }

  double loss(const ParamVector& w) const;
  double worker_loss(int worker, const ParamVector& w) const;

  /// Exact average of the worker gradients, summed in ascending worker order.
  ParamVector grad_full(const ParamVector& w) const;
  ParamVector grad_worker(int worker, const ParamVector& w) const;
  /// Gradient of a single data point of a worker's shard.
  ParamVector sample_grad(int worker, int sample, const ParamVector& w) const;
  /// Mini-batch gradient, points drawn uniformly with replacement.
  ParamVector grad_stochastic(int worker, const ParamVector& w, const BatchSpec& batch,
                              Stream& rng) const;
  /// E || g_1 - grad F_i(w) ||^2 for a single uniformly drawn sample, computed
  /// exactly over the shard.
  double sample_grad_variance(int worker, const ParamVector& w) const;

  /// Hessian of F (LSR and quadratic), or the data second-moment matrix
  /// (1/N) sum_i A_i^T A_i / n_i for logistic.
  Matrix hessian() const;
  Matrix worker_hessian(int worker) const;

  double smoothness() const noexcept { return L_; }
  double strong_convexity() const noexcept { return mu_; }
  /// max_i of the smoothness constant of F_i.
  double local_smoothness() const noexcept { return L_local_; }
  const ParamVector& w_star() const noexcept { return w_star_; }
  double f_star() const noexcept { return f_star_; }
  /// Mean over workers of the single-sample gradient variance at w*.
  double sigma_sq_at_opt() const noexcept { return sigma_sq_at_opt_; }
  /// (1/N) sum_i || grad F_i(w*) ||^2.
  double hetero_B_sq() const noexcept { return hetero_B_sq_; }
  const ParamVector& grad_at_opt(int worker) const {
    return grads_at_opt_.at(static_cast<std::size_t>(worker));
  }

  nlohmann::json to_json() const;
  static Problem from_json(const nlohmann::json& j);

 private:
  Problem() = default;
  void compute_constants(std::optional<ParamVector> known_optimum, double tol);

  Family family_ = Family::lsr;
  int dim_ = 0;
  std::vector<Shard> shards_;
  double L_ = 0.0;
  double mu_ = 0.0;
  double L_local_ = 0.0;
  ParamVector w_star_;
  double f_star_ = 0.0;
  double sigma_sq_at_opt_ = 0.0;
  double hetero_B_sq_ = 0.0;
  std::vector<ParamVector> grads_at_opt_;
};

/// Deterministic synthetic problem. Regenerates with a perturbed seed (at
/// most 5 attempts) if the LSR design is rank deficient.
Problem synth_problem(const SynthOptions& options);

/// Largest and smallest Hessian eigenvalue for LSR/quadratic (power and
/// inverse power iteration); for logistic L = lambda_max(A^T A / n) / 4, mu = 0.
std::pair<double, double> smoothness_constants(const Problem& problem);

/// Minimiser and minimum of F. LSR/quadratic by a linear solve; logistic by
/// gradient descent with step 1/L until ||grad F|| <= tol.
std::pair<ParamVector, double> solve_optimum(const Problem& problem, double tol = 1e-12);

/// Extreme eigenvalues of a symmetric PSD matrix by power iteration, relative
/// residual tolerance `tol`.
double largest_eigenvalue(const Matrix& sym, double tol = 1e-10);
double smallest_eigenvalue(const Matrix& sym, double tol = 1e-10);

}  // namespace bicomp
