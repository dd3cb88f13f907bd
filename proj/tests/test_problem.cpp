#include "bicomp/problem.hpp"

#include "test_util.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <cmath>

using namespace bicomp;
using bicomp::testing::Moments;

namespace {

Problem lsr(int d, int n, int N, double delta, std::uint64_t seed) {
  SynthOptions o;
  o.family = Family::lsr;
  o.dim = d;
  o.samples_per_worker = n;
  o.workers = N;
  o.seed = seed;
  if (delta > 0) o.hetero = Heterogeneity::shifted_means(delta);
  return synth_problem(o);
}

Problem logistic_toy() {
  // Both labels at every feature vector, so the data is not separable.
  Matrix a(10, 2);
  a << 1, 0, 1, 0, 0, 1, 0, 1, 1, 1, 1, 1, 2, -1, 2, -1, 0.5, 0.3, -1, 0.4;
  ParamVector y(10);
  y << 1, -1, 1, -1, 1, -1, 1, -1, 1, -1;
  return Problem::from_shards(Family::logistic, {Shard{a, y}});
}

double fd_grad_err(const Problem& p, const ParamVector& w) {
  const ParamVector g = p.grad_full(w);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    const double h = 1e-6;
    ParamVector wp = w, wm = w;
    wp[j] += h;
    wm[j] -= h;
    const double fd = (p.loss(wp) - p.loss(wm)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g[j]) / std::max(1.0, std::abs(g[j])));
  }
  return worst;
}

}  // namespace

TEST(Problem, QuadraticIdentityGradient) {
  const Problem p = Problem::quadratic(Matrix::Identity(2, 2), ParamVector::Zero(2));
  const ParamVector g = p.grad_full(ParamVector::Ones(2));
  EXPECT_NEAR(g[0], 1.0, 1e-14);
  EXPECT_NEAR(g[1], 1.0, 1e-14);
  EXPECT_NEAR(p.loss(ParamVector::Ones(2)), 1.0, 1e-14);
}

TEST(Problem, LsrIdentityDesignOptimum) {
  ParamVector y(2);
  y << 3, 4;
  const Problem p = Problem::from_shards(Family::lsr, {Shard{Matrix::Identity(2, 2), y}});
  EXPECT_NEAR(p.w_star()[0], 3.0, 1e-12);
  EXPECT_NEAR(p.w_star()[1], 4.0, 1e-12);
  EXPECT_NEAR(p.f_star(), 0.0, 1e-20);
}

TEST(Problem, DiagonalQuadraticConstants) {
  Matrix q = Matrix::Zero(2, 2);
  q.diagonal() << 1, 4;
  const Problem p = Problem::quadratic(q, ParamVector::Zero(2));
  EXPECT_NEAR(p.smoothness(), 4.0, 1e-9);
  EXPECT_NEAR(p.strong_convexity(), 1.0, 1e-9);
  EXPECT_NEAR(p.w_star().norm(), 0.0, 1e-12);
  EXPECT_NEAR(p.f_star(), 0.0, 1e-20);
}

TEST(Problem, IdentityHessianConstants) {
  const Problem p = Problem::quadratic(Matrix::Identity(2, 2), ParamVector::Zero(2));
  EXPECT_NEAR(p.smoothness(), 1.0, 1e-9);
  EXPECT_NEAR(p.strong_convexity(), 1.0, 1e-9);
}

TEST(Problem, EigenvaluesMatchDenseSolver) {
  Stream rng(17);
  Matrix b(10, 10);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
  const Matrix spd = b.transpose() * b + 0.1 * Matrix::Identity(10, 10);
  const Eigen::SelfAdjointEigenSolver<Matrix> es(spd);
  const double hi = es.eigenvalues().maxCoeff();
  const double lo = es.eigenvalues().minCoeff();
  EXPECT_NEAR(largest_eigenvalue(spd), hi, 1e-8 * hi);
  EXPECT_NEAR(smallest_eigenvalue(spd), lo, 1e-8 * lo);
}

TEST(Problem, SmoothnessMatchesDenseSolverOnSynthetic) {
  const Problem p = lsr(8, 40, 3, 0.3, 4);
  const Eigen::SelfAdjointEigenSolver<Matrix> es(p.hessian());
  EXPECT_NEAR(p.smoothness(), es.eigenvalues().maxCoeff(), 1e-8 * p.smoothness());
  EXPECT_NEAR(p.strong_convexity(), es.eigenvalues().minCoeff(), 1e-8 * p.smoothness());
}

TEST(Problem, LogisticGradientMatchesFiniteDifferences) {
  Matrix a(5, 2);
  a << 1, 2, -0.5, 1, 0.3, -0.7, 1, 2, 0.3, -0.7;
  ParamVector y(5);
  y << 1, -1, 1, -1, -1;
  const Problem p = Problem::from_shards(Family::logistic, {Shard{a, y}});
  ParamVector w(2);
  w << 0.4, -0.9;
  EXPECT_LT(fd_grad_err(p, w), 1e-6);
}

TEST(Problem, LsrGradientMatchesFiniteDifferences) {
  const Problem p = lsr(5, 20, 3, 0.5, 2);
  Stream rng(1);
  ParamVector w(5);
  for (auto& x : w) x = rng.normal();
  EXPECT_LT(fd_grad_err(p, w), 1e-6);
}

TEST(Problem, LogisticOptimumIsStationary) {
  const Problem p = logistic_toy();
  EXPECT_LE(p.grad_full(p.w_star()).norm(), 1e-12);
}

TEST(Problem, HomogeneousLsrHasNoHeterogeneity) {
  SynthOptions o;
  o.dim = 2;
  o.samples_per_worker = 100;
  o.workers = 1;
  o.seed = 3;
  EXPECT_LE(synth_problem(o).hetero_B_sq(), 2e-8);
}

TEST(Problem, ShiftedMeansHeterogeneityMatchesDirectComputation) {
  const Problem p = lsr(20, 200, 20, 0.5, 1);
  EXPECT_GT(p.hetero_B_sq(), 0.0);
  // Independent optimum: QR on the stacked, per-worker-weighted system.
  Eigen::Index rows = 0;
  for (int i = 0; i < p.workers(); ++i) rows += p.samples(i);
  Matrix a(rows, p.dim());
  ParamVector y(rows);
  Eigen::Index r = 0;
  for (int i = 0; i < p.workers(); ++i) {
    const double wgt = 1.0 / std::sqrt(static_cast<double>(p.samples(i)));
    a.middleRows(r, p.samples(i)) = wgt * p.shard(i).features;
    y.segment(r, p.samples(i)) = wgt * p.shard(i).targets;
    r += p.samples(i);
  }
  const ParamVector w = a.colPivHouseholderQr().solve(y);
  EXPECT_LT((w - p.w_star()).norm(), 1e-9 * (1.0 + w.norm()));
  double b2 = 0.0;
  for (int i = 0; i < p.workers(); ++i) {
    const auto& s = p.shard(i);
    b2 += (s.features.transpose() * (s.features * w - s.targets) / p.samples(i)).squaredNorm();
  }
  b2 /= p.workers();
  EXPECT_NEAR(p.hetero_B_sq(), b2, 1e-8 * b2);
}

TEST(Problem, SyntheticQuadraticHasExactOptimum) {
  SynthOptions o;
  o.family = Family::quadratic;
  o.dim = 5;
  o.workers = 3;
  o.samples_per_worker = 20;
  const Problem p = synth_problem(o);
  EXPECT_EQ(p.grad_full(p.w_star()).squaredNorm(), 0.0);
  EXPECT_EQ(p.sigma_sq_at_opt(), 0.0);
}

TEST(Problem, FullBatchIsExactGradient) {
  const Problem p = lsr(4, 10, 2, 0.0, 5);
  Stream rng(0);
  const ParamVector w = ParamVector::Constant(4, 0.3);
  EXPECT_EQ(p.grad_stochastic(1, w, BatchSpec::full(), rng), p.grad_worker(1, w));
  EXPECT_EQ(rng.draws(), 0u);
}

TEST(Problem, SinglePointShardIsDeterministic) {
  Matrix a(1, 2);
  a << 1, 2;
  ParamVector y(1);
  y << 1;
  const Problem p = Problem::from_shards(Family::lsr, {Shard{a, y}});
  Stream r1(1), r2(2);
  const ParamVector w = ParamVector::Ones(2);
  EXPECT_EQ(p.grad_stochastic(0, w, BatchSpec::minibatch(1), r1),
            p.grad_stochastic(0, w, BatchSpec::minibatch(1), r2));
}

TEST(Problem, StochasticGradientIsUnbiased) {
  const Problem p = lsr(4, 10, 2, 0.3, 8);
  const ParamVector w = ParamVector::Constant(4, -0.2);
  for (int worker = 0; worker < 2; ++worker) {
    Moments m(4);
    for (int t = 0; t < 100'000; ++t) {
      Stream rng = make_stream(t, Phase::gradient, worker, 1);
      m.add(p.grad_stochastic(worker, w, BatchSpec::minibatch(10), rng));
    }
    EXPECT_LT(m.max_z(p.grad_worker(worker, w)), 4.5);
  }
}

TEST(Problem, SampleVarianceMatchesEnumeration) {
  const Problem p = lsr(3, 15, 1, 0.0, 6);
  const ParamVector w = ParamVector::Constant(3, 0.7);
  const ParamVector g = p.grad_worker(0, w);
  double v = 0.0;
  for (int j = 0; j < p.samples(0); ++j) v += (p.sample_grad(0, j, w) - g).squaredNorm();
  v /= p.samples(0);
  EXPECT_NEAR(p.sample_grad_variance(0, w), v, 1e-12 * v);
}

TEST(Problem, SmoothnessInequalityOnRandomPairs) {
  const Problem p = lsr(6, 30, 4, 0.4, 10);
  Stream rng(99);
  for (int t = 0; t < 100; ++t) {
    ParamVector a(6), b(6);
    for (auto& x : a) x = 3 * rng.normal();
    for (auto& x : b) x = 3 * rng.normal();
    EXPECT_LE((p.grad_full(a) - p.grad_full(b)).norm(),
              p.smoothness() * (a - b).norm() * (1 + 1e-9));
  }
}

TEST(Problem, OptimumIsLocalMinimum) {
  const Problem p = lsr(6, 30, 4, 0.4, 11);
  Stream rng(5);
  for (int t = 0; t < 100; ++t) {
    ParamVector u(6);
    for (auto& x : u) x = rng.normal();
    u.normalize();
    EXPECT_GE(p.loss(p.w_star() + 1e-3 * u), p.f_star());
  }
}

TEST(Problem, SynthesisIsDeterministic) {
  SynthOptions o;
  o.seed = 21;
  o.hetero = Heterogeneity::shifted_means(0.2);
  EXPECT_EQ(synth_problem(o).to_json().dump(), synth_problem(o).to_json().dump());
  o.seed = 22;
  EXPECT_NE(synth_problem(o).to_json().dump(), lsr(20, 200, 20, 0.2, 21).to_json().dump());
}

TEST(Problem, JsonRoundTrip) {
  const Problem p = lsr(4, 10, 3, 0.2, 12);
  const Problem q = Problem::from_json(p.to_json());
  EXPECT_EQ(q.to_json().dump(), p.to_json().dump());
  EXPECT_EQ(q.w_star(), p.w_star());
}

TEST(Problem, DimensionMismatchThrows) {
  const Problem p = lsr(4, 10, 2, 0.0, 1);
  EXPECT_THROW(p.grad_full(ParamVector::Zero(3)), DimensionError);
  EXPECT_THROW(p.loss(ParamVector::Zero(5)), DimensionError);
}

TEST(Problem, BadInputsThrow) {
  EXPECT_THROW(Problem::from_shards(Family::lsr, {Shard{Matrix(0, 2), ParamVector(0)}}),
               std::invalid_argument);
  const Problem p = lsr(4, 10, 2, 0.0, 1);
  Stream rng(1);
  EXPECT_THROW(p.grad_stochastic(0, ParamVector::Zero(4), BatchSpec::minibatch(11), rng),
               std::invalid_argument);
  SynthOptions o;
  o.workers = 0;
  EXPECT_THROW(synth_problem(o), ConfigError);
}
