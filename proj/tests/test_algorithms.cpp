#include "bicomp/algorithms.hpp"
#include "bicomp/metrics.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bicomp;
using bicomp::testing::Moments;
using bicomp::testing::rel_diff;

namespace {

Problem small_lsr(int d = 6, int N = 4, double delta = 0.0, std::uint64_t seed = 3) {
  SynthOptions o;
  o.dim = d;
  o.samples_per_worker = 30;
  o.workers = N;
  o.seed = seed;
  if (delta > 0) o.hetero = Heterogeneity::shifted_means(delta);
  return synth_problem(o);
}

AlgoConfig preset(AlgoName name, const Problem& p, CompressorSpec c = CompressorSpec::quantize(1),
                  int groups = 1) {
  AlgoConfig cfg = make_preset(name, c, c, p.dim(), p.workers(), groups);
  cfg.gamma = GammaPolicy::constant(0.5 / p.smoothness());
  return cfg;
}

std::vector<ParamVector> trajectory(const AlgoConfig& cfg, const Problem& p, long k,
                                    std::uint64_t seed, std::vector<ParamVector>* w_hat0 = nullptr) {
  AlgoState s = init_state(cfg, p, ParamVector::Zero(p.dim()), seed);
  std::vector<ParamVector> out{s.w};
  for (long i = 0; i < k; ++i) {
    step(cfg, p, s);
    out.push_back(s.w);
    if (w_hat0) w_hat0->push_back(s.w_hat[0]);
  }
  return out;
}

constexpr AlgoName kAll[] = {AlgoName::sgd,        AlgoName::diana,      AlgoName::artemis,
                             AlgoName::artemis_nd, AlgoName::ghost,      AlgoName::mcm,
                             AlgoName::rand_mcm,   AlgoName::rand_mcm_g, AlgoName::mcm_alpha0,
                             AlgoName::mcm_alpha1};

}  // namespace

TEST(GammaBounds, HandEvaluatedExample) {
  const GammaBounds b = gamma_bounds(1.0, 1.0, 1.0, 20);
  EXPECT_NEAR(b.up, 1.0 / (2.0 * 1.05), 1e-15);
  EXPECT_NEAR(b.dwn, 0.125, 1e-15);
  EXPECT_NEAR(b.upsilon, 1.0 / (8.0 * std::sqrt(2.0) * std::sqrt(8.05)), 1e-15);
  EXPECT_NEAR(b.gamma_max, 0.031152799142451674, 1e-15);
}

TEST(GammaBounds, NoCompressionDegeneratesToHalfInverseL) {
  const GammaBounds b = gamma_bounds(2.0, 0.0, 0.0, 5);
  EXPECT_TRUE(std::isinf(b.dwn));
  EXPECT_TRUE(std::isinf(b.upsilon));
  EXPECT_DOUBLE_EQ(b.gamma_max, 0.25);
}

TEST(GammaBounds, ThreeHalvesPowerAsymptotics) {
  for (double w : {64.0, 256.0}) {
    const double r = gamma_bounds(1, w * 4, w * 4, 10).gamma_max / gamma_bounds(1, w, w, 10).gamma_max;
    EXPECT_NEAR(r, 1.0 / 8.0, 0.1 / 8.0);
  }
}

TEST(GammaBounds, DegradedBound) {
  const GammaBounds b = gamma_bounds(1.0, 1.0, 1.0, 20, true);
  EXPECT_NEAR(b.degraded, 1.0 / (8.0 * 2.0 * 1.05), 1e-15);
  EXPECT_EQ(b.gamma_max, b.degraded);
}

TEST(GammaSchedule, DecayingValuesAndMonotonicity) {
  const auto pol = GammaPolicy::decaying(1.0, 1.0);
  EXPECT_DOUBLE_EQ(gamma_schedule(pol, 0), 1.0);
  EXPECT_DOUBLE_EQ(gamma_schedule(pol, 1), 2.0 / 3.0);
  double prev = gamma_schedule(pol, 0);
  for (long k = 1; k <= 1'000'000; ++k) {
    const double g = gamma_schedule(pol, k);
    ASSERT_LE(g, prev);
    prev = g;
  }
  EXPECT_DOUBLE_EQ(gamma_schedule(GammaPolicy::constant(0.3), 999), 0.3);
}

TEST(PolyakRuppert, WeightedAverages) {
  const std::vector<ParamVector> two{ParamVector::Constant(1, 0.0), ParamVector::Constant(1, 2.0)};
  EXPECT_DOUBLE_EQ(polyak_ruppert_weighted(two, std::vector<double>{0.5, 0.5})[0], 1.0);
  const std::vector<ParamVector> one{ParamVector::Constant(2, 3.0)};
  EXPECT_EQ(polyak_ruppert_weighted(one, std::vector<double>{0.1}), one[0]);
  // Weights 1/gamma_0 = 1 and 1/gamma_1 = 1.5.
  EXPECT_DOUBLE_EQ(polyak_ruppert_weighted(two, GammaPolicy::decaying(1.0, 1.0))[0], 3.0 / 2.5);
}

TEST(Presets, DefaultAlphas) {
  const auto [up, dwn] = default_alphas(CompressorSpec::sparsify(0.5), CompressorSpec::identity(), 10);
  EXPECT_DOUBLE_EQ(up, 0.25);
  EXPECT_DOUBLE_EQ(dwn, 0.5);
  const auto q = default_alphas(CompressorSpec::quantize(1), CompressorSpec::quantize(1), 301);
  EXPECT_NEAR(q.first, 1.0 / (2.0 * (1.0 + std::sqrt(301.0))), 1e-15);
  EXPECT_NEAR(q.first, 0.02725, 1e-5);
}

TEST(Presets, InvariantsAreEnforced) {
  const auto q = CompressorSpec::quantize(1);
  auto sgd = make_preset(AlgoName::sgd, q, q, 10, 4);
  EXPECT_TRUE(sgd.up.is_identity());
  EXPECT_TRUE(sgd.dwn.is_identity());
  EXPECT_TRUE(make_preset(AlgoName::diana, q, q, 10, 4).dwn.is_identity());
  EXPECT_EQ(make_preset(AlgoName::artemis, q, q, 10, 4).update, UpdateMode::degraded);
  EXPECT_EQ(make_preset(AlgoName::mcm_alpha0, q, q, 10, 4).alpha_dwn, 0.0);
  EXPECT_EQ(make_preset(AlgoName::mcm_alpha1, q, q, 10, 4).alpha_dwn, 1.0);
  EXPECT_EQ(make_preset(AlgoName::rand_mcm, q, q, 10, 4).memory.kind, MemoryMode::Kind::per_worker);

  auto bad = make_preset(AlgoName::mcm, q, q, 10, 4);
  bad.memory = MemoryMode::per_worker();
  EXPECT_THROW(validate_config(bad, 4), ConfigError);
  auto groups = make_preset(AlgoName::rand_mcm_g, q, q, 10, 4, 2);
  groups.memory.groups = 5;
  EXPECT_THROW(validate_config(groups, 4), ConfigError);
}

TEST(State, InitialState) {
  const Problem p = small_lsr();
  const AlgoConfig cfg = preset(AlgoName::mcm, p);
  const AlgoState a = init_state(cfg, p, ParamVector::Zero(p.dim()), 1);
  const AlgoState b = init_state(cfg, p, ParamVector::Zero(p.dim()), 1);
  EXPECT_EQ(record_iteration(p, cfg, a, 0.1).upsilon, 0.0);
  for (int i = 0; i < p.workers(); ++i) {
    EXPECT_EQ(a.h[i], b.h[i]);
    EXPECT_EQ(a.w_hat[i], a.w);
  }
}

TEST(Framework, IdentityCompressorsCollapseToSgd) {
  SynthOptions o;
  o.dim = 8;
  o.workers = 5;
  o.samples_per_worker = 40;
  o.seed = 2;
  const Problem p = synth_problem(o);
  const auto id = CompressorSpec::identity();
  AlgoConfig sgd = make_preset(AlgoName::sgd, id, id, p.dim(), p.workers());
  sgd.gamma = GammaPolicy::constant(0.5 / p.smoothness());
  sgd.batch = BatchSpec::minibatch(5);
  const auto ref = trajectory(sgd, p, 200, 4);
  for (AlgoName name : kAll) {
    AlgoConfig cfg = make_preset(name, id, id, p.dim(), p.workers(), 2);
    cfg.gamma = sgd.gamma;
    cfg.batch = sgd.batch;
    const auto traj = trajectory(cfg, p, 200, 4);
    double worst = 0.0;
    for (std::size_t k = 0; k < traj.size(); ++k)
      worst = std::max(worst, (traj[k] - ref[k]).cwiseAbs().maxCoeff() /
                                  std::max(ref[k].cwiseAbs().maxCoeff(), 1e-300));
    EXPECT_LE(worst, 1e-12) << to_string(name);
  }
}

TEST(Framework, ZeroStepLeavesModelAndMemoriesUntouched) {
  const Problem p = small_lsr(6, 4, 0.3);
  for (AlgoName name : kAll) {
    AlgoConfig cfg = preset(name, p, CompressorSpec::quantize(1), 2);
    AlgoState s = init_state(cfg, p, ParamVector::Constant(p.dim(), 0.2), 5);
    const AlgoState before = s;
    step(cfg, p, s, 0.0);
    EXPECT_EQ(s.k, 1);
    EXPECT_EQ(s.w, before.w) << to_string(name);
    for (int i = 0; i < p.workers(); ++i) EXPECT_EQ(s.h[i], before.h[i]) << to_string(name);
  }
}

TEST(Downlink, NonDegradedModelIgnoresDownlinkDraw) {
  const Problem p = small_lsr(6, 4, 0.3);
  for (AlgoName name : {AlgoName::mcm, AlgoName::rand_mcm, AlgoName::ghost, AlgoName::artemis_nd,
                        AlgoName::diana}) {
    const AlgoConfig cfg = preset(name, p);
    AlgoState s = init_state(cfg, p, ParamVector::Zero(p.dim()), 1);
    for (int k = 0; k < 5; ++k) step(cfg, p, s);
    AlgoState a = s, b = s;
    b.downlink_seed = 12345;
    step(cfg, p, a);
    step(cfg, p, b);
    EXPECT_EQ(a.w, b.w) << to_string(name);
  }
}

TEST(Downlink, DegradedModelDependsOnDownlinkDraw) {
  const Problem p = small_lsr();
  const AlgoConfig cfg = preset(AlgoName::artemis, p);
  AlgoState a = init_state(cfg, p, ParamVector::Zero(p.dim()), 1), b = a;
  b.downlink_seed = 999;
  step(cfg, p, a);
  step(cfg, p, b);
  EXPECT_NE(a.w, b.w);
}

TEST(Downlink, LocalModelIsUnbiased) {
  const Problem p = small_lsr(6, 4, 0.3);
  for (AlgoName name : {AlgoName::mcm, AlgoName::rand_mcm, AlgoName::ghost}) {
    const AlgoConfig cfg = preset(name, p);
    AlgoState s = init_state(cfg, p, ParamVector::Zero(p.dim()), 2);
    for (int k = 0; k < 3; ++k) step(cfg, p, s);
    Moments m(p.dim());
    ParamVector w_next;
    for (long t = 0; t < 10'000; ++t) {
      AlgoState c = s;
      c.downlink_seed = 1000 + t;
      step(cfg, p, c);
      m.add(c.w_hat[1]);
      w_next = c.w;
    }
    // Ghost: w_k - gamma C(g) is unbiased for w_{k+1} as well.
    EXPECT_LT(m.max_z(w_next), 4.5) << to_string(name);
  }
}

TEST(Downlink, SharedMemoryGivesIdenticalLocalModels) {
  const Problem p = small_lsr();
  const AlgoConfig cfg = preset(AlgoName::mcm, p);
  AlgoState s = init_state(cfg, p, ParamVector::Zero(p.dim()), 3);
  for (int k = 0; k < 100; ++k) {
    step(cfg, p, s);
    for (int i = 1; i < p.workers(); ++i) ASSERT_EQ(s.w_hat[i], s.w_hat[0]);
  }
}

TEST(Downlink, PerWorkerModelsDiffer) {
  const Problem p = small_lsr();
  const AlgoConfig cfg = preset(AlgoName::rand_mcm, p);
  AlgoState s = init_state(cfg, p, ParamVector::Zero(p.dim()), 3);
  for (int k = 0; k < 3; ++k) step(cfg, p, s);
  EXPECT_NE(s.w_hat[0], s.w_hat[1]);
}

TEST(Downlink, GroupedExtremesMatchMcmAndRandMcm) {
  const Problem p = small_lsr(6, 4, 0.2);
  const auto q = CompressorSpec::quantize(1);
  for (auto [groups, ref_name] : {std::pair{1, AlgoName::mcm}, std::pair{4, AlgoName::rand_mcm}}) {
    AlgoConfig g = make_preset(AlgoName::rand_mcm_g, q, q, p.dim(), p.workers(), groups);
    AlgoConfig r = make_preset(ref_name, q, q, p.dim(), p.workers());
    g.gamma = r.gamma = GammaPolicy::constant(0.3 / p.smoothness());
    std::vector<ParamVector> gh, rh;
    EXPECT_EQ(trajectory(g, p, 100, 8, &gh), trajectory(r, p, 100, 8, &rh));
    EXPECT_EQ(gh, rh);
  }
}

TEST(Participation, FullParticipationMatchesDefault) {
  const Problem p = small_lsr();
  AlgoConfig a = preset(AlgoName::rand_mcm, p);
  AlgoConfig b = a;
  b.participation = 1.0;
  EXPECT_EQ(trajectory(a, p, 50, 1), trajectory(b, p, 50, 1));
}

TEST(Participation, InactiveWorkersKeepTheirUplinkMemory) {
  const Problem p = small_lsr(6, 8, 0.3);
  AlgoConfig cfg = preset(AlgoName::mcm, p);
  cfg.participation = 0.5;
  AlgoState s = init_state(cfg, p, ParamVector::Zero(p.dim()), 2);
  int frozen = 0;
  for (int k = 0; k < 20; ++k) {
    const AlgoState before = s;
    step(cfg, p, s);
    for (int i = 0; i < p.workers(); ++i) {
      if (!before.active[i]) {
        ASSERT_EQ(s.h[i], before.h[i]);
        ++frozen;
      }
    }
  }
  EXPECT_GT(frozen, 0);
}

TEST(Participation, EmptyRoundLeavesModelUnchanged) {
  const Problem p = small_lsr(6, 2);
  AlgoConfig cfg = preset(AlgoName::mcm, p);
  cfg.participation = 0.05;
  AlgoState s = init_state(cfg, p, ParamVector::Zero(p.dim()), 4);
  int empty = 0;
  for (int k = 0; k < 50; ++k) {
    const AlgoState before = s;
    step(cfg, p, s);
    bool any = false;
    for (char a : before.active) any = any || a;
    if (!any) {
      ASSERT_EQ(s.w, before.w);
      ++empty;
    }
  }
  EXPECT_GT(empty, 0);
}

TEST(SingleAveraged, ServerMemoryIsMeanAndResetSynchronises) {
  const Problem p = small_lsr(6, 4);
  AlgoConfig cfg = preset(AlgoName::rand_mcm, p);
  cfg.memory = MemoryMode::single_averaged(5);
  cfg.participation = 0.5;
  validate_config(cfg, p.workers());
  AlgoState s = init_state(cfg, p, ParamVector::Zero(p.dim()), 6);
  for (int k = 0; k < 20; ++k) {
    step(cfg, p, s);
    if (s.k % 5 == 0)
      for (int i = 0; i < p.workers(); ++i) EXPECT_EQ(s.H[i], s.H_bar) << "k=" << s.k;
  }
}

TEST(Bits, FullParticipationUplinkCounter) {
  const Problem p = small_lsr(10, 4);
  const AlgoConfig cfg = preset(AlgoName::mcm, p);
  AlgoState s = init_state(cfg, p, ParamVector::Zero(p.dim()), 1);
  for (int k = 0; k < 10; ++k) step(cfg, p, s);
  // Full batch with h_0 = grad F_i(w_0): the first uplink messages are zero.
  EXPECT_EQ(s.bits_up_cum, 4u * zero_message_cost(cfg.up, 10) + 9u * 4u * bit_cost(cfg.up, 10));
  EXPECT_EQ(s.bits_dwn_cum, 10u * bit_cost(cfg.dwn, 10));
}

TEST(Divergence, HugeStepIsFlaggedAndTracePreserved) {
  const Problem p = small_lsr();
  AlgoConfig cfg = preset(AlgoName::mcm_alpha1, p);
  cfg.gamma = GammaPolicy::constant(50.0 / p.smoothness());
  RunOptions o;
  o.iterations = 2000;
  const RunTrace t = run_algorithm(cfg, p, o);
  EXPECT_EQ(t.status, TraceStatus::diverged);
  EXPECT_GT(t.records.size(), 1u);
  EXPECT_TRUE(std::isfinite(t.records.front().excess_loss));
}
