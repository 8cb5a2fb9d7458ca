#include <gtest/gtest.h>

#include "aqsgd/runner.hpp"

using namespace aqsgd;

TEST(Config, ParsesFlatKeyValueText) {
  const std::string text =
      "# comment line\n"
      "mode = aqsgd\n"
      "stages = 4\n"
      "dataset = regression-mlp\n"
      "dataset_n = 64\n"
      "epochs = 3\n"
      "gamma = 0.25\n"
      "fw_scheme = uniform\n"
      "fw_bits = 2   # inline comment\n"
      "bw_bits = 4\n"
      "buffer_bits = 8\n"
      "sampling = shuffle\n"
      "seed = 9\n";
  const RunSpec spec = parse_config_text(text);
  EXPECT_EQ(spec.train.mode, Mode::AQSGD);
  EXPECT_EQ(spec.stages, 4);
  EXPECT_EQ(spec.dataset_n, 64);
  EXPECT_EQ(spec.train.epochs, 3);
  EXPECT_DOUBLE_EQ(spec.train.gamma, 0.25);
  EXPECT_EQ(spec.train.fw.bits, 2);
  EXPECT_EQ(spec.train.bw.bits, 4);
  EXPECT_EQ(spec.train.buffer_bits, 8);
  EXPECT_EQ(spec.train.seed, 9u);
}

TEST(Config, RejectsUnknownKeysAndValues) {
  EXPECT_THROW(parse_config_text("no_such_key = 1\n"), std::runtime_error);
  EXPECT_THROW(parse_config_text("mode = turbo\n"), std::runtime_error);
  EXPECT_THROW(parse_config_text("this line has no equals\n"), std::runtime_error);
}

TEST(Config, GammaTheoremFlag) {
  const RunSpec spec = parse_config_text("gamma = theorem\n");
  EXPECT_TRUE(spec.gamma_theorem);
}

// Identical manifests yield byte-identical outputs.
TEST(Runner, ManifestDeterminism) {
  RunSpec spec;
  spec.dataset = "regression-mlp";
  spec.dataset_n = 32;
  spec.stages = 2;
  spec.train.mode = Mode::AQSGD;
  spec.train.fw = QuantizerSpec::uniform(4);
  spec.train.bw = QuantizerSpec::uniform(8);
  spec.train.gamma = 0.3;
  spec.train.epochs = 3;
  spec.train.seed = 2;
  const RunArtifacts a = execute_run(spec);
  const RunArtifacts b = execute_run(spec);
  EXPECT_EQ(a.metrics_csv, b.metrics_csv);
  EXPECT_EQ(a.summary.dump(), b.summary.dump());
  EXPECT_EQ(a.manifest.dump(), b.manifest.dump());
  // One metrics row per executed step.
  EXPECT_EQ(a.result.metrics.size(), static_cast<std::size_t>(a.result.steps_run));
  EXPECT_EQ(a.result.steps_run, 3l * 32);
}

TEST(Runner, CsvSchemaIsStable) {
  EXPECT_STREQ(kMetricsSchemaVersion, "metrics-v1");
  EXPECT_EQ(metrics_csv_header(1),
            "step,epoch,sample_id,loss,grad_norm,delta_norm_total,delta_norm_b1,bytes_fw,"
            "bytes_bw");
  EXPECT_EQ(metrics_csv_header(3),
            "step,epoch,sample_id,loss,grad_norm,delta_norm_total,delta_norm_b1,delta_norm_b2,"
            "delta_norm_b3,bytes_fw,bytes_bw");
}

TEST(Runner, WorkerEngineMatchesReferenceThroughRunSpec) {
  RunSpec spec;
  spec.dataset = "regression-mlp";
  spec.dataset_n = 16;
  spec.stages = 4;
  spec.train.mode = Mode::AQSGD;
  spec.train.fw = QuantizerSpec::uniform(4);
  spec.train.bw = QuantizerSpec::uniform(8);
  spec.train.gamma = 0.25;
  spec.train.epochs = 4;
  spec.train.seed = 3;
  const RunArtifacts ref = execute_run(spec);
  RunSpec workers = spec;
  workers.engine = "workers";
  const RunArtifacts wk = execute_run(workers);
  EXPECT_EQ(ref.result.final_params, wk.result.final_params);
  EXPECT_FALSE(ref.result.diverged);
}

TEST(Runner, GammaTheoremResolvesOnToy) {
  RunSpec spec;
  spec.dataset = "toy-lq";
  spec.dataset_n = 8;
  spec.stages = 2;
  spec.train.mode = Mode::AQSGD;
  spec.train.fw = QuantizerSpec::l2sr(3);
  spec.train.bw = QuantizerSpec::l2sr(3);
  spec.gamma_theorem = true;
  spec.train.steps = 50;
  spec.train.seed = 4;
  const RunArtifacts art = execute_run(spec);
  EXPECT_GT(art.resolved_gamma, 0.0);
  EXPECT_LT(art.resolved_gamma, 1e-2);
  EXPECT_FALSE(art.result.diverged);
}

TEST(Runner, AuditJsonOnCertifiedToyRun) {
  RunSpec spec;
  spec.dataset = "toy-lq";
  spec.dataset_n = 8;
  spec.stages = 2;
  spec.train.mode = Mode::AQSGD;
  spec.train.fw = QuantizerSpec::l2sr(3);
  spec.train.bw = QuantizerSpec::l2sr(3);
  spec.gamma_theorem = true;
  spec.train.steps = 400;
  spec.train.seed = 5;
  spec.train.analysis = true;
  const RunArtifacts art = execute_run(spec);
  ASSERT_FALSE(art.audit.is_null());
  for (const auto& ineq : art.audit["lemma1"]["inequalities"]) {
    EXPECT_EQ(ineq["violations"].get<long>(), 0);
    EXPECT_TRUE(ineq["pass"].get<bool>());
    EXPECT_LE(ineq["lhs"].get<double>(), ineq["rhs"].get<double>());
  }
  EXPECT_EQ(art.audit["decomposition"]["failures_beyond_1e-10"].get<long>(), 0);
  EXPECT_EQ(art.audit["lemma2"]["violations"].get<long>(), 0);
  EXPECT_TRUE(art.audit["lemma2"]["pass"].get<bool>());
  EXPECT_GT(art.audit["rate"]["stated_rhs"].get<double>(), 0.0);
}

// Soft report for runs without a certificate: observed suprema plus the
// measured relative-error constant of the uncertified scheme.
TEST(Runner, EmpiricalAuditOnUncertifiedRun) {
  RunSpec spec;
  spec.dataset = "regression-mlp";
  spec.dataset_n = 16;
  spec.stages = 2;
  spec.train.mode = Mode::AQSGD;
  spec.train.fw = QuantizerSpec::uniform(4);
  spec.train.bw = QuantizerSpec::uniform(8);
  spec.train.gamma = 0.1;
  spec.train.epochs = 3;
  spec.train.seed = 7;
  spec.train.analysis = true;
  const RunArtifacts art = execute_run(spec);
  ASSERT_FALSE(art.audit.is_null());
  EXPECT_EQ(art.audit["empirical"]["provenance"].get<std::string>(), "empirical");
  EXPECT_GT(art.audit["empirical"]["empirical_cq_fw"].get<double>(), 0.0);
  EXPECT_LT(art.audit["empirical"]["empirical_cq_fw"].get<double>(), 1.0);
  EXPECT_GT(art.audit["empirical"]["sup_delta_norm"].get<double>(), 0.0);
  EXPECT_EQ(art.audit["decomposition"]["failures_beyond_1e-10"].get<long>(), 0);
}

// Alg-1-literal line ordering: available behind a flag, deviates from the
// simultaneous reading, still trains.
TEST(Runner, SequentialUpdateOrderFlag) {
  RunSpec spec;
  spec.dataset = "regression-mlp";
  spec.dataset_n = 16;
  spec.stages = 2;
  spec.train.mode = Mode::AQSGD;
  spec.train.fw = QuantizerSpec::uniform(4);
  spec.train.bw = QuantizerSpec::uniform(8);
  spec.train.gamma = 0.1;
  spec.train.epochs = 3;
  spec.train.seed = 8;
  const RunArtifacts sim = execute_run(spec);
  RunSpec seq_spec = parse_config_text(
      "dataset = regression-mlp\ndataset_n = 16\nstages = 2\nmode = aqsgd\n"
      "fw_bits = 4\nbw_bits = 8\ngamma = 0.1\nepochs = 3\nseed = 8\n"
      "update_order = sequential\n");
  const RunArtifacts seq = execute_run(seq_spec);
  EXPECT_NE(sim.result.final_params, seq.result.final_params);
  EXPECT_FALSE(seq.result.diverged);
  EXPECT_NEAR(seq.final_batch_loss, sim.final_batch_loss, 0.5 * sim.final_batch_loss + 0.05);
}

TEST(Runner, DivergedRunIsAResultNotAnError) {
  RunSpec spec;
  spec.dataset = "regression-mlp";
  spec.dataset_n = 8;
  spec.stages = 2;
  spec.train.mode = Mode::FP32;
  spec.train.gamma = 1e7;
  spec.train.epochs = 2;
  spec.train.seed = 6;
  const RunArtifacts art = execute_run(spec);
  EXPECT_TRUE(art.result.diverged);
  EXPECT_TRUE(art.summary["diverged"].get<bool>());
}
