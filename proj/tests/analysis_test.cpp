#include <gtest/gtest.h>

#include "aqsgd/analysis.hpp"
#include "aqsgd/verify.hpp"

using namespace aqsgd;

// The decomposition must reconstruct the applied update exactly: the
// parameter change the engine makes equals -gamma * (g + Delta) term sum.
TEST(Decomposition, ReconstructsAppliedUpdate) {
  const std::uint64_t seed = 4;
  Dataset data = make_dataset("regression-mlp", 16, seed);
  TrainConfig cfg;
  cfg.mode = Mode::AQSGD;
  cfg.fw = QuantizerSpec::uniform(3);
  cfg.bw = QuantizerSpec::uniform(5);
  cfg.gamma = 0.25;
  cfg.seed = seed;
  cfg.steps = 100;
  cfg.analysis = true;

  PipelineModel structure = build_regression_mlp(4, seed);
  TrainingEngine engine(structure, &data, cfg);
  RngStream srng(seed, stream_id::kSampling);
  SampleSchedule schedule(Sampling::EpochShuffle, data.size(), &srng);

  double worst = 0.0;
  for (long t = 0; t < 100; ++t) {
    const int sample = schedule.next(t);
    StepSnapshot snap;
    std::vector<Vec> before;
    for (const auto& st : engine.model().stages) before.push_back(st.params);
    engine.step(t, sample, &snap);
    const ErrorBreakdown eb = error_decomposition(structure, snap, data, cfg);
    for (int i = 0; i < 4; ++i) {
      Vec recon = eb.g_true[i];
      if (i < 3) {
        recon = add(recon, add(eb.grad_q[i], eb.grad_fwd[i]));
      } else {
        recon = add(recon, eb.grad_last);
      }
      const Vec& after = engine.model().stages[i].params;
      for (std::size_t c = 0; c < recon.size(); ++c) {
        const double applied_change = after[c] - before[i][c];
        worst = std::max(worst, std::abs(applied_change + cfg.gamma * recon[c]));
      }
    }
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(Decomposition, IdentityQuantizersGiveExactZeros) {
  const std::uint64_t seed = 5;
  Dataset data = make_dataset("regression-mlp", 8, seed);
  TrainConfig cfg;
  cfg.mode = Mode::AQSGD;
  cfg.fw = QuantizerSpec::identity();
  cfg.bw = QuantizerSpec::identity();
  cfg.gamma = 0.2;
  cfg.seed = seed;
  cfg.steps = 30;
  cfg.analysis = true;

  PipelineModel structure = build_regression_mlp(3, seed);
  TrainingEngine engine(structure, &data, cfg);
  RngStream srng(seed, stream_id::kSampling);
  SampleSchedule schedule(Sampling::EpochShuffle, data.size(), &srng);
  for (long t = 0; t < 30; ++t) {
    const int sample = schedule.next(t);
    StepSnapshot snap;
    engine.step(t, sample, &snap);
    const ErrorBreakdown eb = error_decomposition(structure, snap, data, cfg);
    ASSERT_EQ(eb.delta_norm(), 0.0);
    ASSERT_EQ(eb.delta_q_norm(), 0.0);
    ASSERT_EQ(eb.delta_tilde_norm(), 0.0);
  }
}

// First visit with full-precision buffers: the only error is backward
// quantization.
TEST(Decomposition, FirstVisitHasOnlyBackwardError) {
  const std::uint64_t seed = 6;
  Dataset data = make_dataset("regression-mlp", 8, seed);
  TrainConfig cfg;
  cfg.mode = Mode::AQSGD;
  cfg.fw = QuantizerSpec::uniform(4);
  cfg.bw = QuantizerSpec::uniform(4);
  cfg.gamma = 0.2;
  cfg.seed = seed;
  cfg.steps = 8;
  cfg.analysis = true;

  PipelineModel structure = build_regression_mlp(2, seed);
  TrainingEngine engine(structure, &data, cfg);
  RngStream srng(seed, stream_id::kSampling);
  SampleSchedule schedule(Sampling::EpochShuffle, data.size(), &srng);
  for (long t = 0; t < 8; ++t) {  // one epoch: every visit is a first visit
    const int sample = schedule.next(t);
    StepSnapshot snap;
    engine.step(t, sample, &snap);
    const ErrorBreakdown eb = error_decomposition(structure, snap, data, cfg);
    ASSERT_TRUE(eb.first_visit);
    ASSERT_EQ(eb.delta_norm(), 0.0);
    ASSERT_EQ(eb.delta_tilde_norm(), 0.0);
    ASSERT_GT(eb.delta_q_norm(), 0.0);
  }
}

TEST(Constants, ArithmeticCriterion) {
  const CheckResult r = check_constants_arithmetic();
  EXPECT_TRUE(r.pass) << r.detail;
}

// K>2 constant pack against hand-evaluated formulas for a small input.
TEST(Constants, KStageFormulas) {
  ConstantsInput in;
  in.k = 4;
  in.l_f = 2.0;
  in.l_a = {1.0, 2.0, 3.0, 4.0};
  in.c_a = {1.5, 2.5, 3.5, 4.5};
  in.l_tail = {0.5, 1.5, 2.5};
  in.c_tail = {5.0, 6.0, 7.0};
  in.sigma = 0.0;
  in.cq = 0.2;
  in.n_samples = 10;
  in.t_steps = 10000;
  const TheoremConstants tc = compute_theorem_constants(in);

  // c_tilde = sqrt(sum c_a[i]^2 c_tail[i]^2), i over the three boundaries.
  const double ct = std::sqrt(1.5 * 1.5 * 25.0 + 2.5 * 2.5 * 36.0 + 3.5 * 3.5 * 49.0);
  EXPECT_NEAR(tc.c_tilde, ct, 1e-12 * ct);

  // c_one: max of the last-boundary term and the printed i-indexed terms
  // with the fixed C_{a_{K-2}} factor.
  const double term_last = (1.0 + 2.0 * 3.5 * 3.5) * 2.5 * 2.5;
  const double term1 = 2.5 * 2.5 * 0.5 * 0.5 + 36.0 * 2.0 * 2.0;  // i = 1
  const double term2 = 2.5 * 2.5 * 1.5 * 1.5 + 49.0 * 3.0 * 3.0;  // i = 2
  const double c1 = std::max({term_last, term1, term2});
  EXPECT_NEAR(tc.c_one, c1, 1e-12 * c1);

  const double la_sq = 1.0 + 4.0 + 9.0 + 16.0;
  const double cp = 4.0 * 36.0 * 0.04 * la_sq * 100.0 * c1 / (1.0 - 0.08);
  EXPECT_NEAR(tc.c_prime, cp, 1e-12 * cp);
  EXPECT_GT(tc.gamma_theorem, 0.0);
}

TEST(Audit, NegativeControlFlagsFabricatedViolation) {
  const CheckResult r = check_lemma1_negative_control();
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Trend, RequiresThreeEpochs) {
  std::vector<StepMetrics> ms;
  for (int t = 0; t < 10; ++t) {
    StepMetrics m;
    m.step = t;
    m.epoch = t / 5;
    m.delta_norm = {0.1};
    ms.push_back(m);
  }
  EXPECT_THROW(stability_trend(ms, 5), std::runtime_error);
}

TEST(Trend, Fp32SeriesIsUndefinedByContract) {
  const std::uint64_t seed = 7;
  Dataset data = make_dataset("regression-mlp", 8, seed);
  TrainConfig cfg;
  cfg.mode = Mode::FP32;
  cfg.gamma = 0.2;
  cfg.epochs = 4;
  cfg.seed = seed;
  RunResult res = run_training(build_regression_mlp(2, seed), data, cfg);
  const TrendReport r = stability_trend(res.metrics, 8);
  EXPECT_FALSE(r.defined);
}

TEST(Trend, ConvergedRunShrinksDeltas) {
  const std::uint64_t seed = 8;
  Dataset data = make_dataset("regression-mlp", 64, seed);
  TrainConfig cfg;
  cfg.mode = Mode::AQSGD;
  cfg.fw = QuantizerSpec::uniform(4);
  cfg.bw = QuantizerSpec::uniform(8);
  cfg.gamma = 0.1;
  cfg.epochs = 10;
  cfg.seed = seed;
  RunResult res = run_training(build_regression_mlp(2, seed), data, cfg);
  ASSERT_FALSE(res.diverged);
  const TrendReport r = stability_trend(res.metrics, 64);
  ASSERT_TRUE(r.defined);
  EXPECT_LT(r.last_epoch_delta, r.second_epoch_delta);
}

// Scaling probe: quadrupling T halves the stated rate bound. The realized
// mean gradient-square ratio is reported alongside, not asserted.
TEST(Audit, RateBoundHalvesWithFourTimesSteps) {
  const ToyAuditOutcome a1 = run_toy_audit(/*t_steps=*/1000, /*seed=*/5, /*n_samples=*/8,
                                           /*bits=*/3);
  const ToyAuditOutcome a4 = run_toy_audit(/*t_steps=*/4000, /*seed=*/5, /*n_samples=*/8,
                                           /*bits=*/3);
  const double rhs_ratio = a4.rate_rhs / a1.rate_rhs;
  EXPECT_NEAR(rhs_ratio, 0.5, 0.05);
  std::printf("rate probe: rhs(4T)/rhs(T) = %.4f, realized lhs ratio = %.4f\n", rhs_ratio,
              a4.rate_lhs / a1.rate_lhs);
}

// Small certified audit end to end (the full-size one runs in acceptance).
TEST(Audit, ToyRunCleanAtTheoremRate) {
  const ToyAuditOutcome a = run_toy_audit(/*t_steps=*/2000, /*seed=*/3, /*n_samples=*/8,
                                          /*bits=*/3);
  EXPECT_TRUE(a.in_box);
  EXPECT_EQ(a.quant_bound.violations, 0);
  EXPECT_EQ(a.tilde_bound.violations, 0);
  EXPECT_LE(a.lemma2_lhs, a.lemma2_rhs);
}
