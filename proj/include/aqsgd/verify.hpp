#pragma once

// Named verification suites. Both the acceptance test binary and the CLI
// `verify` subcommand run these; each check returns a pass flag plus a
// one-line detail string.

#include <cstdarg>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "aqsgd/analysis.hpp"
#include "aqsgd/finite_diff.hpp"
#include "aqsgd/runner.hpp"
#include "aqsgd/simnet.hpp"
#include "aqsgd/workers.hpp"

namespace aqsgd {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SuiteResult {
  std::string suite;
  std::vector<CheckResult> checks;
  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

namespace verify_detail {

inline std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

}  // namespace verify_detail

// ---------------------------------------------------------------------------
// Identity-quantizer oracle: the protocol with Identity quantizers and
// full-precision buffers must equal textbook SGD on the composed model,
// bit for bit.
// ---------------------------------------------------------------------------

inline CheckResult check_identity_oracle(int k, long steps = 1000) {
  const std::uint64_t seed = 11;
  const double gamma = 0.2;
  Dataset data = make_dataset("regression-mlp", 64, seed);

  TrainConfig cfg;
  cfg.mode = Mode::AQSGD;
  cfg.fw = QuantizerSpec::identity();
  cfg.bw = QuantizerSpec::identity();
  cfg.buffer_bits = 0;
  cfg.gamma = gamma;
  cfg.steps = steps;
  cfg.seed = seed;
  RunResult aq = run_training(build_regression_mlp(k, seed), data, cfg);

  cfg.mode = Mode::FP32;
  RunResult fp = run_training(build_regression_mlp(k, seed), data, cfg);

  RunResult plain = run_plain_sgd(build_regression_mlp(k, seed), data, gamma, steps,
                                  Sampling::EpochShuffle, seed);

  CheckResult r;
  r.name = "identity_oracle_k" + std::to_string(k);
  const bool aq_eq = aq.final_params == plain.final_params;
  const bool fp_eq = fp.final_params == plain.final_params;
  r.pass = aq_eq && fp_eq;
  r.detail = verify_detail::fmt(
      "K=%d, %ld steps: aqsgd(identity)==sgd %s, fp32==sgd %s (bitwise)", k, steps,
      aq_eq ? "yes" : "NO", fp_eq ? "yes" : "NO");
  return r;
}

// ---------------------------------------------------------------------------
// Quantizer checks
// ---------------------------------------------------------------------------

using QuantizeFn = std::function<Vec(const QuantizerSpec&, const Vec&, RngStream&)>;

inline Vec real_quantize_fn(const QuantizerSpec& spec, const Vec& x, RngStream& rng) {
  return quantize_decode(spec, x, rng);
}

// Monte-Carlo unbiasedness: per-coordinate sample mean within 4 standard
// errors of x. Exposed with an injectable quantize function so the test
// suite can prove the check rejects a biased double.
inline CheckResult check_unbiasedness(const QuantizeFn& fn = real_quantize_fn,
                                      int draws = 100000, int vectors = 20) {
  const std::size_t d = 32;
  CheckResult r;
  r.name = "quantizer_unbiasedness";
  long worst_coord_fails = 0;
  double worst_sigmas = 0.0;
  RngStream gen(2024, 7);
  for (Scheme scheme : {Scheme::L2StochasticRound, Scheme::RangeUniformStochastic}) {
    for (int bits : {2, 4, 8}) {
      const QuantizerSpec spec{scheme, bits};
      for (int v = 0; v < vectors; ++v) {
        Vec x(d);
        for (auto& c : x) c = gen.next_gaussian();
        RngStream draw_rng(4096 + v, 11);
        // Kahan-compensated mean so summation roundoff cannot masquerade
        // as quantizer bias on deterministic coordinates.
        Vec sum(d, 0.0), comp(d, 0.0), sumsq(d, 0.0);
        for (int t = 0; t < draws; ++t) {
          const Vec q = fn(spec, x, draw_rng);
          for (std::size_t i = 0; i < d; ++i) {
            const double y = q[i] - comp[i];
            const double s = sum[i] + y;
            comp[i] = (s - sum[i]) - y;
            sum[i] = s;
            sumsq[i] += q[i] * q[i];
          }
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double mean = sum[i] / draws;
          const double var =
              std::max(0.0, sumsq[i] / draws - mean * mean) * draws / (draws - 1.0);
          const double se = std::sqrt(var / draws);
          const double err = std::abs(mean - x[i]);
          if (se == 0.0) {
            // Deterministic coordinate (exactly on a code point): only
            // decode roundoff is allowed.
            if (err > 1e-12 * std::abs(x[i])) ++worst_coord_fails;
            continue;
          }
          worst_sigmas = std::max(worst_sigmas, err / se);
          if (err > 4.0 * se) ++worst_coord_fails;
        }
      }
    }
  }
  r.pass = worst_coord_fails == 0;
  r.detail = verify_detail::fmt(
      "b in {2,4,8}, d=32, %d vectors x %d draws, both schemes: %ld coords beyond 4 SE "
      "(worst %.2f SE)",
      vectors, draws, worst_coord_fails, worst_sigmas);
  return r;
}

// Deterministic relative-error bound of the L2 scheme, zero tolerated
// violations.
inline CheckResult check_cq_bound(int trials = 10000) {
  CheckResult r;
  r.name = "quantizer_cq_bound";
  RngStream gen(99, 3);
  RngStream draw(99, 4);
  long violations = 0;
  double max_ratio = 0.0;
  for (int t = 0; t < trials; ++t) {
    const std::size_t d = 1 + static_cast<std::size_t>(gen.next_below(64));
    const int bits = 1 + static_cast<int>(gen.next_below(8));
    const QuantizerSpec spec = QuantizerSpec::l2sr(bits);
    Vec x(d);
    const double scale = std::exp(gen.next_uniform(-3.0, 3.0));
    for (auto& c : x) c = scale * gen.next_gaussian();
    const double nx = l2_norm(x);
    if (nx == 0.0) continue;
    const Vec q = quantize_decode(spec, x, draw);
    const double err = l2_norm(sub(x, q));
    const double bound = certified_cq(spec, d) * nx;
    max_ratio = std::max(max_ratio, bound > 0 ? err / bound : 0.0);
    if (err > bound) ++violations;
  }
  r.pass = violations == 0;
  r.detail = verify_detail::fmt(
      "%d random (x, draw) pairs: %ld violations of ||x-Q(x)|| <= (sqrt(d)/2^b)||x|| "
      "(max err/bound %.4f)",
      trials, violations, max_ratio);
  return r;
}

// ---------------------------------------------------------------------------
// First-visit exactness and buffer mirroring (K-worker mode)
// ---------------------------------------------------------------------------

inline CheckResult check_first_visit_and_mirror() {
  CheckResult r;
  r.name = "first_visit_and_buffer_mirror";
  const std::uint64_t seed = 5;
  Dataset data = make_dataset("regression-mlp", 256, seed);
  TrainConfig cfg;
  cfg.mode = Mode::AQSGD;
  cfg.fw = QuantizerSpec::uniform(4);
  cfg.bw = QuantizerSpec::uniform(8);
  cfg.gamma = 0.2;
  cfg.epochs = 5;
  cfg.seed = seed;

  RunResult ref = run_training(build_regression_mlp(4, seed), data, cfg);

  long first_visit_nonzero = 0;
  std::vector<bool> seen(data.samples.size(), false);
  for (const auto& m : ref.metrics) {
    if (!seen[m.sample]) {
      seen[m.sample] = true;
      for (double dn : m.delta_norm)
        if (dn != 0.0) ++first_visit_nonzero;
    }
  }

  // The worker engine checks sender/receiver digests after every step and
  // throws on the first mismatch.
  bool worker_ok = true;
  bool bitwise_equal = false;
  std::string worker_err;
  try {
    KWorkerEngine engine(build_regression_mlp(4, seed), &data, cfg);
    RunResult wk = engine.run();
    bitwise_equal = wk.final_params == ref.final_params;
  } catch (const std::exception& e) {
    worker_ok = false;
    worker_err = e.what();
  }

  r.pass = first_visit_nonzero == 0 && worker_ok && bitwise_equal;
  r.detail = verify_detail::fmt(
      "N=256, 5 epochs, K=4: first-visit deltas nonzero at %ld boundaries; worker digests %s; "
      "worker==reference bitwise %s%s",
      first_visit_nonzero, worker_ok ? "matched every step" : "MISMATCH",
      bitwise_equal ? "yes" : "NO", worker_err.empty() ? "" : (" (" + worker_err + ")").c_str());
  return r;
}

// ---------------------------------------------------------------------------
// Certified toy audits (message-error inequalities)
// ---------------------------------------------------------------------------

struct ToyAuditOutcome {
  bool ran = false;
  bool in_box = true;
  long steps = 0;
  InequalityStat quant_bound;
  InequalityStat tilde_bound;
  double lemma2_lhs = 0.0;
  double lemma2_rhs = 0.0;
  double lemma2_slack_ratio = 0.0;
  double gamma = 0.0;
  double cq = 0.0;
  double rate_lhs = 0.0, rate_rhs = 0.0, rate_ratio = 0.0;
};

inline ToyAuditOutcome run_toy_audit(long t_steps = 10000, std::uint64_t seed = 3,
                                     int n_samples = 16, int bits = 3) {
  ToyAuditOutcome out;
  Dataset data = make_dataset("toy-lq", n_samples, seed);

  TrainConfig cfg;
  cfg.mode = Mode::AQSGD;
  cfg.fw = QuantizerSpec::l2sr(bits);
  cfg.bw = QuantizerSpec::l2sr(bits);
  cfg.steps = t_steps;
  cfg.seed = seed;
  cfg.analysis = true;
  cfg.sampling = Sampling::EpochShuffle;

  const double cq = certified_cq(cfg.fw, dataset_dims::kToyHidden);
  out.cq = cq;
  const ToyLQ toy = make_toy_lq(data, cq);
  const ToyConstants tc = exact_constants(toy, data);
  auto cin = ConstantsInput::for_k2(tc.l_f, tc.l_a, tc.c_a, tc.l_fb, tc.c_fb, 0.0, cq,
                                    data.size(), t_steps, Provenance::Certified);
  const TheoremConstants th = compute_theorem_constants(cin);
  cfg.gamma = th.gamma_theorem;
  out.gamma = cfg.gamma;

  PipelineModel model = build_toy_lq_model(toy, seed);
  const PipelineModel structure = model;
  Lemma1Audit lemma1(cq, tc.c_a, tc.l_fb, tc.c_fb);
  Lemma2Audit lemma2(structure, &data);

  TrainingEngine engine(std::move(model), &data, cfg);
  bool in_box = toy_in_box(toy, engine.model());
  StepObserver observer = [&](const StepSnapshot& snap, const StepMetrics&) {
    const ErrorBreakdown eb = error_decomposition(structure, snap, data, cfg);
    lemma1.add(eb);
    lemma2.add(snap, eb, t_steps);
    in_box = in_box && toy_in_box(toy, engine.model());
    // The certificate also needs every buffered message inside the h-ball.
    if (engine.buffers()[0].visited(snap.sample))
      in_box = in_box && l2_norm(engine.buffers()[0].message(snap.sample)) <= toy.h_box;
  };
  engine.run(observer);

  out.ran = true;
  out.in_box = in_box;
  out.steps = lemma2.steps();
  out.quant_bound = lemma1.quant_bound();
  out.tilde_bound = lemma1.tilde_bound();

  auto cin2 = ConstantsInput::for_k2(tc.l_f, tc.l_a, tc.c_a, tc.l_fb, tc.c_fb,
                                     std::sqrt(lemma2.sigma_sq()), cq, data.size(), t_steps,
                                     Provenance::Certified);
  const TheoremConstants th2 = compute_theorem_constants(cin2);
  const InequalityStat lem2 = lemma2.finalize(th2, cfg.gamma);
  out.lemma2_lhs = lemma2.mean_delta_sq();
  out.lemma2_rhs = out.lemma2_lhs + lem2.min_slack;
  out.lemma2_slack_ratio = lem2.max_ratio;

  const auto rate = lemma2.rate_report(th2, toy_lq_f_star(toy, data));
  out.rate_lhs = rate.lhs;
  out.rate_rhs = rate.rhs;
  out.rate_ratio = rate.ratio;
  return out;
}

inline CheckResult check_lemma1(const ToyAuditOutcome& a) {
  CheckResult r;
  r.name = "lemma1_certified_audit";
  r.pass = a.ran && a.in_box && a.quant_bound.clean() && a.tilde_bound.clean();
  r.detail = verify_detail::fmt(
      "toy, %ld audited steps, cq=%.3f: quant-bound violations %ld (max ratio %.3f), "
      "tilde-bound violations %ld (max ratio %.3f), in box %s",
      a.steps, a.cq, a.quant_bound.violations, a.quant_bound.max_ratio,
      a.tilde_bound.violations, a.tilde_bound.max_ratio, a.in_box ? "yes" : "NO");
  return r;
}

inline CheckResult check_lemma2(const ToyAuditOutcome& a) {
  CheckResult r;
  r.name = "lemma2_aggregate_audit";
  r.pass = a.ran && a.in_box && a.lemma2_lhs <= a.lemma2_rhs && a.cq <= 0.25;
  r.detail = verify_detail::fmt(
      "toy, T=%ld, gamma=%.3e, cq=%.3f: mean||delta||^2 = %.3e <= rhs %.3e (slack ratio "
      "%.3e); rate report lhs/rhs = %.3f",
      a.steps, a.gamma, a.cq, a.lemma2_lhs, a.lemma2_rhs, a.lemma2_slack_ratio, a.rate_ratio);
  return r;
}

// Negative control: the auditor must flag a fabricated violation.
inline CheckResult check_lemma1_negative_control() {
  CheckResult r;
  r.name = "lemma1_auditor_negative_control";
  Lemma1Audit audit(/*cq=*/0.1, /*c_a=*/1.0, /*l_fb=*/1.0, /*c_fb=*/1.0);
  ErrorBreakdown fake;
  fake.delta = {Vec{0.0, 0.0}};         // delta = 0 ...
  fake.grad_fwd = {Vec{1.0, 0.0}};      // ... but a nonzero forward-bias term
  fake.grad_last = Vec{0.0};
  fake.grad_q = {Vec{0.0, 0.0}};
  audit.add(fake);
  r.pass = audit.tilde_bound().violations == 1 && audit.quant_bound().violations == 0;
  r.detail = verify_detail::fmt("fabricated delta=0 with ||delta_tilde||=1 flagged: %s",
                                r.pass ? "yes" : "NO");
  return r;
}

// ---------------------------------------------------------------------------
// Theorem-constants arithmetic
// ---------------------------------------------------------------------------

inline CheckResult check_constants_arithmetic() {
  CheckResult r;
  r.name = "theorem_constants_arithmetic";
  bool ok = true;
  std::string why;

  // Hand-computed reference: 4*0.1*1*(1+1)*1*10 / sqrt(1-0.02).
  auto in = ConstantsInput::for_k2(/*l_f=*/1.0, /*l_a=*/1.0, /*c_a=*/1.0, /*l_fb=*/1.0,
                                   /*c_fb=*/1.0, /*sigma=*/0.0, /*cq=*/0.1, /*n=*/10,
                                   /*t=*/100);
  const TheoremConstants tc = compute_theorem_constants(in);
  const double expect_c = 8.081220356417685;
  if (std::abs(tc.c - expect_c) > 1e-12 * expect_c) {
    ok = false;
    why += verify_detail::fmt("C=%.17g != %.17g; ", tc.c, expect_c);
  }

  // Purity: equal inputs give bit-equal outputs.
  const TheoremConstants tc2 = compute_theorem_constants(in);
  if (double_bits(tc2.c) != double_bits(tc.c) ||
      double_bits(tc2.gamma_theorem) != double_bits(tc.gamma_theorem)) {
    ok = false;
    why += "not pure; ";
  }

  // No-compression limit: C = 0 and gamma = 1/(9 L_f sqrt(T)).
  auto in0 = in;
  in0.cq = 0.0;
  in0.l_f = 2.0;
  in0.t_steps = 400;
  const TheoremConstants t0 = compute_theorem_constants(in0);
  const double expect_gamma = 1.0 / (9.0 * 2.0 * 20.0);
  if (t0.c != 0.0 || t0.c_prime != 0.0 ||
      std::abs(t0.gamma_theorem - expect_gamma) > 1e-15) {
    ok = false;
    why += verify_detail::fmt("cq=0 limit wrong (C=%g, gamma=%.17g); ", t0.c, t0.gamma_theorem);
  }

  // Inadmissible quantizer rejected.
  bool threw = false;
  try {
    auto bad = in;
    bad.cq = 0.8;
    compute_theorem_constants(bad);
  } catch (const std::exception&) {
    threw = true;
  }
  if (!threw) {
    ok = false;
    why += "cq=0.8 accepted; ";
  }

  r.pass = ok;
  r.detail = ok ? verify_detail::fmt("C=%.12f matches hand value, cq=0 limit and rejection ok",
                                     tc.c)
                : why;
  return r;
}

// ---------------------------------------------------------------------------
// Convergence-quality study (desk-scale analog of the headline comparison)
// ---------------------------------------------------------------------------

struct ConvergenceRun {
  double final_loss = 0.0;  // full-batch loss at the final parameters
  bool diverged = false;
  TrendReport trend;
};

inline ConvergenceRun convergence_run(Mode mode, int k, int fw_bits, int bw_bits,
                                      int buffer_bits, std::uint64_t seed, int epochs = 10,
                                      int n = 256, double gamma = 0.1) {
  Dataset data = make_dataset("regression-mlp", n, seed);
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.fw = QuantizerSpec::uniform(fw_bits);
  cfg.bw = QuantizerSpec::uniform(bw_bits);
  cfg.buffer_bits = buffer_bits;
  cfg.gamma = gamma;
  cfg.epochs = epochs;
  cfg.seed = seed;
  RunResult res = run_training(build_regression_mlp(k, seed), data, cfg);
  ConvergenceRun out;
  out.diverged = res.diverged;
  out.final_loss =
      final_full_batch_loss(build_regression_mlp(k, seed), res.final_params, data);
  if (!res.diverged && mode != Mode::FP32) out.trend = stability_trend(res.metrics, n);
  return out;
}

struct ConvergenceStudy {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double fp32 = 0.0;
  double aq_fw4bw8_k2 = 0.0;
  double aq_fw2bw4_k2 = 0.0;
  double dq_fw2bw4_k2 = 0.0;
  double aq_fw2bw4_k4 = 0.0;
  double dq_fw2bw4_k4 = 0.0;
  double aq_fw4bw8_z8 = 0.0;
  std::vector<ConvergenceRun> aq_runs;  // all AQ runs (criterion-9 trend source)
  bool any_diverged = false;
};

inline ConvergenceStudy run_convergence_study() {
  ConvergenceStudy s;
  auto mean_over_seeds = [&](Mode mode, int k, int fwb, int bwb, int z,
                             bool collect) {
    double sum = 0.0;
    for (auto seed : s.seeds) {
      ConvergenceRun r = convergence_run(mode, k, fwb, bwb, z, seed);
      s.any_diverged = s.any_diverged || r.diverged;
      sum += r.final_loss;
      if (collect && mode == Mode::AQSGD) s.aq_runs.push_back(std::move(r));
    }
    return sum / static_cast<double>(s.seeds.size());
  };
  s.fp32 = mean_over_seeds(Mode::FP32, 2, 0, 0, 0, false);
  s.aq_fw4bw8_k2 = mean_over_seeds(Mode::AQSGD, 2, 4, 8, 0, true);
  s.aq_fw2bw4_k2 = mean_over_seeds(Mode::AQSGD, 2, 2, 4, 0, true);
  s.dq_fw2bw4_k2 = mean_over_seeds(Mode::DirectQ, 2, 2, 4, 0, false);
  s.aq_fw2bw4_k4 = mean_over_seeds(Mode::AQSGD, 4, 2, 4, 0, true);
  s.dq_fw2bw4_k4 = mean_over_seeds(Mode::DirectQ, 4, 2, 4, 0, false);
  s.aq_fw4bw8_z8 = mean_over_seeds(Mode::AQSGD, 2, 4, 8, 8, false);
  return s;
}

inline CheckResult check_convergence_quality(const ConvergenceStudy& s) {
  CheckResult r;
  r.name = "convergence_quality";
  const bool aq48_close = s.aq_fw4bw8_k2 <= 1.05 * s.fp32;
  const bool aq24_beats_dq = s.aq_fw2bw4_k2 <= s.dq_fw2bw4_k2;
  const bool dq_degrades_k4 = s.dq_fw2bw4_k4 > s.dq_fw2bw4_k2;
  const bool aq_k4_close = s.aq_fw2bw4_k4 <= 1.10 * s.fp32;
  r.pass = !s.any_diverged && aq48_close && aq24_beats_dq && dq_degrades_k4 && aq_k4_close;
  r.detail = verify_detail::fmt(
      "fp32 %.4g | aq fw4bw8 %.4g (<=1.05x: %s) | aq fw2bw4 %.4g <= dq %.4g: %s | "
      "K4: dq %.4g > dq-K2 %.4g: %s, aq %.4g <= 1.1x fp32: %s",
      s.fp32, s.aq_fw4bw8_k2, aq48_close ? "yes" : "NO", s.aq_fw2bw4_k2, s.dq_fw2bw4_k2,
      aq24_beats_dq ? "yes" : "NO", s.dq_fw2bw4_k4, s.dq_fw2bw4_k2,
      dq_degrades_k4 ? "yes" : "NO", s.aq_fw2bw4_k4, aq_k4_close ? "yes" : "NO");
  return r;
}

inline CheckResult check_delta_shrinks(const ConvergenceStudy& s) {
  CheckResult r;
  r.name = "self_enforcing_trend";
  long bad = 0;
  for (const auto& run : s.aq_runs) {
    if (run.diverged || !run.trend.defined) {
      ++bad;
      continue;
    }
    if (!(run.trend.last_epoch_delta < run.trend.second_epoch_delta)) ++bad;
  }
  r.pass = bad == 0 && !s.aq_runs.empty();
  r.detail = verify_detail::fmt(
      "%zu converged delta-buffered runs: %ld with last-epoch mean||delta|| >= epoch-2 mean",
      s.aq_runs.size(), bad);
  return r;
}

// Frozen parameters: with gamma = 0 the residual is the previous delta, so
// every compressed visit contracts ||delta|| by at least the certified cq.
inline CheckResult check_frozen_decay() {
  CheckResult r;
  r.name = "frozen_gamma_decay";
  const std::uint64_t seed = 17;
  const int n = 32;
  Dataset data = make_dataset("regression-mlp", n, seed);
  TrainConfig cfg;
  cfg.mode = Mode::AQSGD;
  cfg.fw = QuantizerSpec::l2sr(4);
  cfg.bw = QuantizerSpec::l2sr(4);
  cfg.gamma = 0.0;
  cfg.epochs = 5;
  cfg.seed = seed;
  PipelineModel model = build_regression_mlp(2, seed);
  const double cq = certified_cq(cfg.fw, model.boundary_dims()[0]);
  RunResult res = run_training(std::move(model), data, cfg);

  std::vector<double> prev(n, -1.0);
  long checks = 0, violations = 0;
  for (const auto& m : res.metrics) {
    const double dn = m.delta_norm[0];
    if (prev[m.sample] >= 0.0) {
      ++checks;
      if (dn > cq * prev[m.sample] + 1e-12) ++violations;
    }
    prev[m.sample] = dn;
  }
  r.pass = violations == 0 && checks > 0;
  r.detail = verify_detail::fmt(
      "gamma=0, cq=%.4f: %ld revisits, %ld violations of ||delta_next|| <= cq*||delta_prev||",
      cq, checks, violations);
  return r;
}

inline CheckResult check_low_bit_buffer(const ConvergenceStudy& s) {
  CheckResult r;
  r.name = "low_bit_buffer";
  const bool close = s.aq_fw4bw8_z8 <= 1.10 * s.aq_fw4bw8_k2;
  r.pass = close && !s.any_diverged;
  r.detail = verify_detail::fmt("z=8 loss %.4g vs full-precision buffer %.4g (<=1.10x: %s)",
                                s.aq_fw4bw8_z8, s.aq_fw4bw8_k2, close ? "yes" : "NO");
  return r;
}

// ---------------------------------------------------------------------------
// Simnet bands and monotonicity
// ---------------------------------------------------------------------------

inline CheckResult check_simnet_bands() {
  CheckResult r;
  r.name = "simnet_ratio_bands";
  const PipelinePreset p = gpt2xl_8stage_preset();
  const LinkSpec fast{1e10, 0.0}, slow{1e8, 0.0};

  const double raw_fast =
      epoch_time(p, fast, SimCompression::raw(), SimCompression::raw(), false).samples_per_sec;
  const double raw_slow =
      epoch_time(p, slow, SimCompression::raw(), SimCompression::raw(), false).samples_per_sec;
  const double q4_fast = epoch_time(p, fast, SimCompression::quantized(4),
                                    SimCompression::quantized(4), true).samples_per_sec;
  const double q4_slow = epoch_time(p, slow, SimCompression::quantized(4),
                                    SimCompression::quantized(4), true).samples_per_sec;

  const double raw_ratio = raw_fast / raw_slow;
  const double q4_degradation = 1.0 - q4_slow / q4_fast;
  const bool band_raw = raw_ratio >= 5.0;
  const bool band_q4 = q4_degradation <= 0.25;

  // 100-point sweep: throughput nondecreasing in bandwidth, nonincreasing
  // in payload size.
  bool monotone = true;
  std::vector<double> bandwidths;
  for (int i = 0; i < 100; ++i)
    bandwidths.push_back(1e7 * std::pow(10.0, 4.0 * i / 99.0));
  double prev_raw = 0.0, prev_q4 = 0.0;
  for (double bw : bandwidths) {
    const LinkSpec link{bw, 0.0};
    const double traw =
        epoch_time(p, link, SimCompression::raw(), SimCompression::raw(), false).samples_per_sec;
    const double tq8 = epoch_time(p, link, SimCompression::quantized(8),
                                  SimCompression::quantized(8), true).samples_per_sec;
    const double tq4 = epoch_time(p, link, SimCompression::quantized(4),
                                  SimCompression::quantized(4), true).samples_per_sec;
    if (traw < prev_raw || tq4 < prev_q4) monotone = false;  // in bandwidth
    if (tq4 < tq8 || tq8 < traw) monotone = false;           // in payload size
    prev_raw = traw;
    prev_q4 = tq4;
  }

  r.pass = band_raw && band_q4 && monotone;
  r.detail = verify_detail::fmt(
      "raw32 10Gbps/100Mbps = %.2fx (>=5: %s); 4-bit degradation %.1f%% (<=25%%: %s); "
      "monotone on 100-point sweep: %s",
      raw_ratio, band_raw ? "yes" : "NO", 100.0 * q4_degradation, band_q4 ? "yes" : "NO",
      monotone ? "yes" : "NO");
  return r;
}

// ---------------------------------------------------------------------------
// Gradient correctness against central differences
// ---------------------------------------------------------------------------

inline CheckResult check_gradients(int instances = 100) {
  CheckResult r;
  r.name = "gradient_correctness";
  RngStream gen(7, 21);
  long fails = 0;
  double worst = 0.0;

  auto check_stage = [&](Stage st, const Vec& input, const Vec& target, const Vec& upstream) {
    const StageTrace tr = stage_forward(st, input, target);
    const StageGrads g = stage_backward(st, tr, upstream, target);
    // Parameter gradient of <upstream, stage(params)>.
    ScalarField field_p = [&](const Vec& p) {
      Stage s2 = st;
      s2.params = p;
      return dot(upstream, stage_forward(s2, input, target).output());
    };
    const Vec fd_p = finite_diff_grad(field_p, st.params, 1e-5);
    // Input gradient of the same scalar.
    ScalarField field_x = [&](const Vec& x) {
      return dot(upstream, stage_forward(st, x, target).output());
    };
    const Vec fd_x = finite_diff_grad(field_x, input, 1e-5);
    const double scale_p = std::max(l2_norm(fd_p), 1e-8);
    const double scale_x = std::max(l2_norm(fd_x), 1e-8);
    const double rel_p = st.params.empty() ? 0.0 : l2_norm(sub(fd_p, g.param_grad)) / scale_p;
    const double rel_x = l2_norm(sub(fd_x, g.input_grad)) / scale_x;
    worst = std::max({worst, rel_p, rel_x});
    if (rel_p > 1e-6 || rel_x > 1e-6) ++fails;
  };

  for (int t = 0; t < instances; ++t) {
    const int in = 2 + static_cast<int>(gen.next_below(6));
    const int out = 2 + static_cast<int>(gen.next_below(6));
    auto rand_vec = [&](int n, double s) {
      Vec v(n);
      for (auto& c : v) c = s * gen.next_gaussian();
      return v;
    };
    // DenseTanh
    {
      Stage st;
      st.layers = {dense_tanh(in, out)};
      st.params = rand_vec(static_cast<int>(st.param_count()), 0.7);
      check_stage(st, rand_vec(in, 1.0), {}, rand_vec(out, 1.0));
    }
    // DenseLinear (alternating bias)
    {
      Stage st;
      st.layers = {dense_linear(in, out, t % 2 == 0)};
      st.params = rand_vec(static_cast<int>(st.param_count()), 0.7);
      check_stage(st, rand_vec(in, 1.0), {}, rand_vec(out, 1.0));
    }
    // DiagLinear
    {
      Stage st;
      st.layers = {diag_linear(in)};
      st.params = rand_vec(in, 0.9);
      check_stage(st, rand_vec(in, 1.0), {}, rand_vec(in, 1.0));
    }
    // Loss-head stage (tanh + head + loss), scalar output
    {
      Stage st;
      st.layers = {dense_tanh(in, out), dense_linear(out, in), squared_loss_head(in)};
      st.params = rand_vec(static_cast<int>(st.param_count()), 0.7);
      check_stage(st, rand_vec(in, 1.0), rand_vec(in, 0.8), Vec{1.0});
    }
  }
  r.pass = fails == 0;
  r.detail = verify_detail::fmt(
      "%d random instances per stage kind vs central differences: %ld beyond 1e-6 relative "
      "(worst %.2e)",
      instances, fails, worst);
  return r;
}

// K>2 accumulates more compression error than K=2 on the same composed
// model; compared over one epoch of matched steps.
inline CheckResult check_kstage_delta_growth() {
  CheckResult r;
  r.name = "kstage_delta_growth";
  const std::uint64_t seed = 23;
  const int n = 64;
  Dataset data = make_dataset("regression-mlp", n, seed);
  TrainConfig cfg;
  cfg.mode = Mode::AQSGD;
  cfg.fw = QuantizerSpec::uniform(2);
  cfg.bw = QuantizerSpec::uniform(4);
  cfg.gamma = 0.3;
  cfg.epochs = 4;
  cfg.seed = seed;
  auto total_delta = [&](int k) {
    RunResult res = run_training(build_regression_mlp(k, seed), data, cfg);
    double sum = 0.0;
    long count = 0;
    for (const auto& m : res.metrics) {
      if (m.epoch == 0) continue;  // warm-up epoch is exact by construction
      double sq = 0.0;
      for (double v : m.delta_norm) sq += v * v;
      sum += std::sqrt(sq);
      ++count;
    }
    return sum / static_cast<double>(count);
  };
  const double d2 = total_delta(2);
  const double d4 = total_delta(4);
  r.pass = d4 >= d2;
  r.detail = verify_detail::fmt("mean total ||delta||: K=4 %.4g >= K=2 %.4g: %s", d4, d2,
                                r.pass ? "yes" : "NO");
  return r;
}

// ---------------------------------------------------------------------------
// Suite dispatcher (CLI `verify <suite>`)
// ---------------------------------------------------------------------------

inline SuiteResult run_suite(const std::string& name) {
  SuiteResult s;
  s.suite = name;
  if (name == "quantizer") {
    s.checks.push_back(check_unbiasedness());
    s.checks.push_back(check_cq_bound());
  } else if (name == "oracle") {
    s.checks.push_back(check_identity_oracle(2));
    s.checks.push_back(check_identity_oracle(4));
  } else if (name == "lemma1") {
    const ToyAuditOutcome a = run_toy_audit();
    s.checks.push_back(check_lemma1(a));
    s.checks.push_back(check_lemma1_negative_control());
  } else if (name == "lemma2") {
    const ToyAuditOutcome a = run_toy_audit();
    s.checks.push_back(check_lemma2(a));
    s.checks.push_back(check_constants_arithmetic());
  } else if (name == "trend") {
    const ConvergenceStudy study = run_convergence_study();
    s.checks.push_back(check_delta_shrinks(study));
    s.checks.push_back(check_frozen_decay());
  } else if (name == "kstage") {
    s.checks.push_back(check_first_visit_and_mirror());
    s.checks.push_back(check_identity_oracle(3, 300));
    s.checks.push_back(check_kstage_delta_growth());
  } else if (name == "simnet") {
    s.checks.push_back(check_simnet_bands());
  } else {
    throw std::runtime_error("unknown verify suite '" + name + "'");
  }
  return s;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"quantizer", "oracle", "lemma1", "lemma2",
                                              "trend",     "kstage", "simnet"};
  return names;
}

}  // namespace aqsgd
