#include "bicomp/validation.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bicomp;

namespace {

Problem lsr(int d, int N, double delta, bool noiseless = false, std::uint64_t seed = 1) {
  SynthOptions o;
  o.dim = d;
  o.samples_per_worker = 50;
  o.workers = N;
  o.seed = seed;
  if (delta > 0) o.hetero = Heterogeneity::shifted_means(delta);
  if (noiseless) {
    o.label_noise = 0.0;
    o.response_offset = 0.0;
  }
  return synth_problem(o);
}

Problem quadratic(int d, int N) {
  SynthOptions o;
  o.family = Family::quadratic;
  o.dim = d;
  o.workers = N;
  o.samples_per_worker = 4 * d;
  o.seed = 2;
  return synth_problem(o);
}

AlgoState advanced(const AlgoConfig& cfg, const Problem& p, int steps, double gamma) {
  AlgoState s = init_state(cfg, p, ParamVector::Zero(p.dim()), 3);
  for (int k = 0; k < steps; ++k) step(cfg, p, s, gamma);
  return s;
}

}  // namespace

TEST(Moments, IdentityPasses) {
  const auto r = check_compressor_moments(CompressorSpec::identity(), 10, 1000, 1);
  EXPECT_EQ(r.status, CheckStatus::pass);
  EXPECT_EQ(r.statistic, 0.0);
}

TEST(Moments, QuantizationHighDimension) {
  const auto r = check_compressor_moments(CompressorSpec::quantize(1), 301, 10'000, 2);
  EXPECT_EQ(r.status, CheckStatus::pass) << r.detail;
  EXPECT_LE(r.statistic, 17.7);
}

TEST(Moments, Sparsification) {
  const auto r = check_compressor_moments(CompressorSpec::sparsify(0.1), 69, 10'000, 3);
  EXPECT_EQ(r.status, CheckStatus::pass) << r.detail;
  EXPECT_LE(r.statistic, 9.18);
}

TEST(Moments, BiasedOperatorFails) {
  const CompressFn biased = [](const ParamVector& v, Stream& rng) {
    return ParamVector(quantize_s(v, 1, rng) * 1.1);
  };
  const auto r = check_compressor_moments(biased, CompressorSpec::quantize(1).omega(20), 20, 10'000, 4);
  EXPECT_EQ(r.status, CheckStatus::fail);
}

TEST(Moments, UnderstatedOmegaFails) {
  const CompressFn op = [](const ParamVector& v, Stream& rng) { return quantize_s(v, 1, rng); };
  const auto r = check_compressor_moments(op, 0.5 * CompressorSpec::quantize(1).omega(20), 20, 10'000, 4);
  EXPECT_EQ(r.status, CheckStatus::fail);
}

TEST(Moments, DeterministicGivenSeed) {
  const auto a = check_compressor_moments(CompressorSpec::quantize(2), 20, 2000, 9);
  const auto b = check_compressor_moments(CompressorSpec::quantize(2), 20, 2000, 9);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(GradStoBound, UncompressedFullBatchIsTight) {
  const Problem p = lsr(5, 4, 0.0);
  const auto r = check_grad_sto_bound(p, CompressorSpec::identity(), BatchSpec::full(),
                                      ParamVector::Ones(5), 100, 1);
  EXPECT_EQ(r.status, CheckStatus::pass);
  EXPECT_NEAR(r.statistic, r.bound, 1e-12 * r.bound);
}

TEST(GradStoBound, QuantizedStochasticPasses) {
  const Problem p = lsr(10, 5, 0.0);
  const auto r = check_grad_sto_bound(p, CompressorSpec::quantize(1), BatchSpec::minibatch(1),
                                      ParamVector::Ones(10), 10'000, 2);
  EXPECT_EQ(r.status, CheckStatus::pass) << r.detail;
}

TEST(GradStoBound, CompressionExcessShrinksWithWorkers) {
  // Identical shards: the compression excess over ||grad F||^2 scales as omega/N.
  const Problem p20 = lsr(10, 20, 0.0, true);
  const Problem p1 = Problem::from_shards(Family::lsr, {p20.shard(0)});
  const ParamVector w = ParamVector::Ones(10);
  const double g2 = p20.grad_full(w).squaredNorm();
  const auto q = CompressorSpec::quantize(1);
  const auto r1 = check_grad_sto_bound(p1, q, BatchSpec::full(), w, 20'000, 3);
  const auto r20 = check_grad_sto_bound(p20, q, BatchSpec::full(), w, 20'000, 3);
  const double ratio = (r1.statistic - g2) / (r20.statistic - g2);
  EXPECT_NEAR(ratio, 20.0, 0.15 * 20.0);
}

TEST(GradStoBound, HeterogeneousIsNotApplicable) {
  const Problem p = lsr(5, 4, 1.0);
  const auto r = check_grad_sto_bound(p, CompressorSpec::quantize(1), BatchSpec::full(),
                                      ParamVector::Zero(5), 100, 1);
  EXPECT_EQ(r.status, CheckStatus::not_applicable);
}

TEST(UpsilonContraction, NoiselessQuadraticPasses) {
  const Problem p = quadratic(10, 5);
  const auto q = CompressorSpec::quantize(1);
  AlgoConfig cfg = make_preset(AlgoName::mcm, q, q, 10, 5);
  const double om = q.omega(10);
  cfg.alpha_dwn = 1.0 / (8.0 * om);
  const double gamma = 1.0 / (8.0 * om * p.smoothness());
  const auto r = check_upsilon_contraction(p, cfg, gamma, 200, 5, 2000, 1);
  EXPECT_EQ(r.status, CheckStatus::pass) << r.detail;
}

TEST(UpsilonContraction, PerWorkerMemoryPasses) {
  const Problem p = quadratic(10, 5);
  const auto q = CompressorSpec::quantize(1);
  AlgoConfig cfg = make_preset(AlgoName::rand_mcm, q, q, 10, 5);
  const double om = q.omega(10);
  cfg.alpha_dwn = 1.0 / (8.0 * om);
  const double gamma = 1.0 / (8.0 * om * p.smoothness());
  cfg.gamma = GammaPolicy::constant(gamma);
  const auto r = check_upsilon_contraction(p, cfg, advanced(cfg, p, 20, gamma), 5000, 2);
  EXPECT_EQ(r.status, CheckStatus::pass) << r.detail;
}

TEST(UpsilonContraction, OutsidePreconditionsIsNotApplicable) {
  const Problem p = quadratic(10, 5);
  const auto q = CompressorSpec::quantize(1);
  const AlgoConfig alpha1 = make_preset(AlgoName::mcm_alpha1, q, q, 10, 5);
  const auto r = check_upsilon_contraction(p, alpha1, 0.001, 10, 2, 100, 1);
  EXPECT_EQ(r.status, CheckStatus::not_applicable);
  const AlgoConfig diana = make_preset(AlgoName::diana, q, q, 10, 5);
  EXPECT_EQ(check_upsilon_contraction(p, diana, 0.001, 10, 2, 100, 1).status,
            CheckStatus::not_applicable);
}

TEST(QuadraticUnbiasedGrad, IdentityDownlinkIsExact) {
  const Problem p = quadratic(5, 3);
  const auto q = CompressorSpec::quantize(1);
  const AlgoConfig cfg = make_preset(AlgoName::mcm, q, CompressorSpec::identity(), 5, 3);
  const auto r = check_quadratic_unbiased_grad(p, cfg, advanced(cfg, p, 10, 0.05), 200, 1);
  EXPECT_EQ(r.status, CheckStatus::pass) << r.detail;
}

TEST(QuadraticUnbiasedGrad, QuantizedDownlinkPasses) {
  const Problem p = quadratic(5, 3);
  const auto q = CompressorSpec::quantize(1);
  const AlgoConfig cfg = make_preset(AlgoName::rand_mcm, q, q, 5, 3);
  const auto r = check_quadratic_unbiased_grad(p, cfg, advanced(cfg, p, 10, 0.05), 10'000, 2);
  EXPECT_EQ(r.status, CheckStatus::pass) << r.detail;
}

TEST(QuadraticUnbiasedGrad, LogisticIsNotApplicable) {
  SynthOptions o;
  o.family = Family::logistic;
  o.dim = 3;
  o.workers = 2;
  o.samples_per_worker = 30;
  const Problem p = synth_problem(o);
  const auto q = CompressorSpec::quantize(1);
  const AlgoConfig cfg = make_preset(AlgoName::mcm, q, q, 3, 2);
  const AlgoState s = init_state(cfg, p, ParamVector::Zero(3), 1);
  EXPECT_EQ(check_quadratic_unbiased_grad(p, cfg, s, 10, 1).status, CheckStatus::not_applicable);
}

TEST(XiRecursion, FrozenMemoryKeepsXi) {
  const Problem p = lsr(6, 5, 1.0, true);
  const auto q = CompressorSpec::quantize(1);
  AlgoConfig cfg = make_preset(AlgoName::mcm, q, q, 6, 5);
  cfg.alpha_up = 0.0;
  const AlgoState s = advanced(cfg, p, 5, 0.01);
  const auto r = check_xi_recursion(p, cfg, s, 0.01, 100, 1);
  EXPECT_EQ(r.status, CheckStatus::pass) << r.detail;
}

TEST(XiRecursion, HeterogeneousNoiselessPasses) {
  const Problem p = lsr(6, 5, 1.0, true);
  const auto q = CompressorSpec::quantize(1);
  AlgoConfig cfg = make_preset(AlgoName::mcm, q, q, 6, 5);
  const double gamma = gamma_max(cfg, p);
  const auto r = check_xi_recursion(p, cfg, gamma, 100, 5, 2000, 2);
  EXPECT_EQ(r.status, CheckStatus::pass) << r.detail;
}

TEST(XiRecursion, OversizedAlphaIsNotApplicable) {
  const Problem p = lsr(6, 5, 1.0, true);
  const auto q = CompressorSpec::quantize(1);
  AlgoConfig cfg = make_preset(AlgoName::mcm, q, q, 6, 5);
  cfg.alpha_up = 0.9;
  const AlgoState s = init_state(cfg, p, ParamVector::Zero(6), 1);
  EXPECT_EQ(check_xi_recursion(p, cfg, s, 0.01, 10, 1).status, CheckStatus::not_applicable);
}

TEST(Suite, OnlySelectsOneCheck) {
  SuiteOptions o;
  o.trials = 500;
  o.only = "quadratic_unbiased_grad";
  const auto reports = run_validation_suite(o);
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_EQ(reports[0].check, "quadratic_unbiased_grad");
  o.only = "nope";
  EXPECT_THROW(run_validation_suite(o), ConfigError);
}

TEST(Suite, FullSuitePasses) {
  SuiteOptions o;
  o.trials = 2000;
  for (const auto& r : run_validation_suite(o)) EXPECT_TRUE(r.passed()) << r.check << ": " << r.detail;
}

TEST(Report, JsonKeys) {
  CheckReport r;
  r.check = "x";
  r.statistic = INFINITY;
  const auto j = r.to_json();
  for (const char* key : {"check", "status", "statistic", "bound", "stderr", "detail"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_TRUE(j["statistic"].is_null());
  EXPECT_EQ(j["status"], "PASS");
}
