// Command-line front end: train runs, verification suites, sweep grids, and
// the network cost model. All outputs are machine-readable (CSV/JSON) and
// reproduce byte-for-byte from the same manifest.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "aqsgd/runner.hpp"
#include "aqsgd/verify.hpp"

namespace fs = std::filesystem;
using namespace aqsgd;

namespace {

struct CliOverrides {
  std::string config_path;
  std::string out_dir = "out";
  std::string mode, gamma, buffer_bits, dataset, engine, sampling;
  int fw_bits = -1, bw_bits = -1, stages = -1, epochs = -1, dataset_n = -1;
  long steps = -1;
  std::string fw_scheme, bw_scheme;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool audit = false;
};

RunSpec build_spec(const CliOverrides& o) {
  RunSpec spec;
  if (!o.config_path.empty()) spec = load_config_file(o.config_path);
  if (!o.mode.empty()) apply_key(spec, "mode", o.mode);
  if (!o.dataset.empty()) apply_key(spec, "dataset", o.dataset);
  if (o.dataset_n >= 0) apply_key(spec, "dataset_n", std::to_string(o.dataset_n));
  if (o.stages >= 0) apply_key(spec, "stages", std::to_string(o.stages));
  if (o.epochs >= 0) apply_key(spec, "epochs", std::to_string(o.epochs));
  if (o.steps >= 0) apply_key(spec, "steps", std::to_string(o.steps));
  if (!o.gamma.empty()) apply_key(spec, "gamma", o.gamma);
  if (!o.fw_scheme.empty()) apply_key(spec, "fw_scheme", o.fw_scheme);
  if (!o.bw_scheme.empty()) apply_key(spec, "bw_scheme", o.bw_scheme);
  if (o.fw_bits >= 0) apply_key(spec, "fw_bits", std::to_string(o.fw_bits));
  if (o.bw_bits >= 0) apply_key(spec, "bw_bits", std::to_string(o.bw_bits));
  if (!o.buffer_bits.empty()) apply_key(spec, "buffer_bits", o.buffer_bits);
  if (!o.sampling.empty()) apply_key(spec, "sampling", o.sampling);
  if (!o.engine.empty()) apply_key(spec, "engine", o.engine);
  if (o.seed_set) apply_key(spec, "seed", std::to_string(o.seed));
  if (o.audit) apply_key(spec, "analysis", "1");
  return spec;
}

int cmd_train(const CliOverrides& o) {
  const RunSpec spec = build_spec(o);
  const RunArtifacts art = execute_run(spec);
  fs::create_directories(o.out_dir);
  write_file(o.out_dir + "/metrics.csv", art.metrics_csv);
  write_file(o.out_dir + "/summary.json", art.summary.dump(2) + "\n");
  write_file(o.out_dir + "/manifest.json", art.manifest.dump(2) + "\n");
  if (!art.audit.is_null()) write_file(o.out_dir + "/audit.json", art.audit.dump(2) + "\n");
  std::cout << "run complete: steps=" << art.result.steps_run
            << " final_loss=" << art.result.final_loss
            << " last_epoch_mean_loss=" << art.last_epoch_mean_loss
            << " diverged=" << (art.result.diverged ? "true" : "false") << "\n"
            << "artifacts in " << o.out_dir << "/\n";
  // A diverged run is a result, not a failure.
  return 0;
}

int cmd_verify(const std::string& suite) {
  const SuiteResult res = run_suite(suite);
  for (const auto& c : res.checks)
    std::cout << (c.pass ? "PASS" : "FAIL") << "  " << c.name << ": " << c.detail << "\n";
  std::cout << "suite " << suite << ": " << (res.pass() ? "PASS" : "FAIL") << "\n";
  return res.pass() ? 0 : 1;
}

int cmd_sweep(const CliOverrides& o, const std::vector<int>& stage_grid,
              const std::vector<int>& fw_grid, const std::vector<std::string>& mode_grid,
              const std::vector<std::string>& buffer_grid, int seeds) {
  fs::create_directories(o.out_dir);
  std::string csv =
      "mode,stages,fw_bits,bw_bits,buffer_bits,seeds,final_loss_mean,final_loss_std,diverged\n";
  for (const auto& mode : mode_grid) {
    for (int k : stage_grid) {
      for (int fwb : fw_grid) {
        for (const auto& z : buffer_grid) {
          if (mode != "aqsgd" && z != buffer_grid.front()) continue;  // z only varies buffers
          std::vector<double> losses;
          bool any_diverged = false;
          for (int s = 1; s <= seeds; ++s) {
            CliOverrides run = o;
            run.mode = mode;
            run.stages = k;
            run.fw_bits = fwb;
            run.bw_bits = 2 * fwb;
            run.buffer_bits = z;
            run.seed = static_cast<std::uint64_t>(s);
            run.seed_set = true;
            run.audit = false;
            const RunArtifacts art = execute_run(build_spec(run));
            any_diverged = any_diverged || art.result.diverged;
            losses.push_back(art.last_epoch_mean_loss);
          }
          double mean = 0.0;
          for (double l : losses) mean += l;
          mean /= losses.size();
          double var = 0.0;
          for (double l : losses) var += (l - mean) * (l - mean);
          const double sd = losses.size() > 1 ? std::sqrt(var / (losses.size() - 1)) : 0.0;
          csv += mode + "," + std::to_string(k) + "," + std::to_string(fwb) + "," +
                 std::to_string(2 * fwb) + "," + z + "," + std::to_string(seeds) + "," +
                 fmt_double(mean) + "," + fmt_double(sd) + "," +
                 (any_diverged ? "true" : "false") + "\n";
        }
      }
    }
  }
  write_file(o.out_dir + "/sweep.csv", csv);
  std::cout << csv;
  std::cout << "sweep written to " << o.out_dir << "/sweep.csv\n";
  return 0;
}

int cmd_simnet(const std::string& out_dir, int fw_bits, int bw_bits, int points) {
  const PipelinePreset preset = gpt2xl_8stage_preset();
  std::vector<double> bandwidths;
  for (int i = 0; i < points; ++i)
    bandwidths.push_back(1e8 * std::pow(100.0, static_cast<double>(i) / (points - 1)));
  const auto rows = bandwidth_sweep(preset, bandwidths, fw_bits, bw_bits);
  std::string csv = "bandwidth_bps,mode,bits_fw,bits_bw,samples_per_sec\n";
  for (const auto& r : rows) {
    csv += fmt_double(r.bandwidth_bps) + "," + r.mode + "," + std::to_string(r.bits_fw) + "," +
           std::to_string(r.bits_bw) + "," + fmt_double(r.samples_per_sec) + "\n";
  }
  fs::create_directories(out_dir);
  write_file(out_dir + "/simnet.csv", csv);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pipeline-parallel SGD lab with delta-quantized activation exchange"};
  app.require_subcommand(1);

  CliOverrides o;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path, "config file (key = value lines)");
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--mode", o.mode, "fp32|directq|aqsgd");
    cmd->add_option("--dataset", o.dataset, "regression-mlp|toy-lq|classification-2d");
    cmd->add_option("--dataset-n", o.dataset_n, "number of samples");
    cmd->add_option("--stages", o.stages, "pipeline stages K");
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--steps", o.steps, "training steps (overrides epochs)");
    cmd->add_option("--gamma", o.gamma, "learning rate, or 'theorem'");
    cmd->add_option("--fw-scheme", o.fw_scheme, "identity|l2sr|uniform");
    cmd->add_option("--fw-bits", o.fw_bits, "forward payload bits");
    cmd->add_option("--bw-scheme", o.bw_scheme, "identity|l2sr|uniform");
    cmd->add_option("--bw-bits", o.bw_bits, "backward payload bits");
    cmd->add_option("--buffer-bits", o.buffer_bits, "full or 2..16");
    cmd->add_option("--sampling", o.sampling, "shuffle|replacement");
    cmd->add_option("--engine", o.engine, "reference|workers");
    cmd->add_option("--seed", o.seed, "run seed")->each([&](const std::string&) {
      o.seed_set = true;
    });
    cmd->add_flag("--audit", o.audit, "enable per-step error decomposition and audits");
  };

  CLI::App* train = app.add_subcommand("train", "run one training configuration");
  add_common(train);

  CLI::App* verify = app.add_subcommand("verify", "run a named verification suite");
  std::string suite;
  verify->add_option("suite", suite, "one of: quantizer oracle lemma1 lemma2 trend kstage simnet")
      ->required();

  CLI::App* sweep = app.add_subcommand("sweep", "grid of runs with per-cell seed statistics");
  add_common(sweep);
  std::vector<int> stage_grid{2, 4};
  std::vector<int> fw_grid{2, 4};
  std::vector<std::string> mode_grid{"aqsgd", "directq"};
  std::vector<std::string> buffer_grid{"full"};
  int sweep_seeds = 3;
  sweep->add_option("--grid-stages", stage_grid, "stage counts");
  sweep->add_option("--grid-fw-bits", fw_grid, "forward bit widths (bw = 2x fw)");
  sweep->add_option("--grid-modes", mode_grid, "modes");
  sweep->add_option("--grid-buffer-bits", buffer_grid, "buffer precisions (full or bits)");
  sweep->add_option("--seeds", sweep_seeds, "seeds per cell");

  CLI::App* simnet = app.add_subcommand("simnet", "bandwidth sweep of the pipeline cost model");
  std::string sim_out = "out";
  int sim_fw = 4, sim_bw = 8, sim_points = 16;
  simnet->add_option("--out", sim_out, "output directory");
  simnet->add_option("--fw-bits", sim_fw, "forward payload bits");
  simnet->add_option("--bw-bits", sim_bw, "backward payload bits");
  simnet->add_option("--points", sim_points, "bandwidth grid points");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(o);
    if (verify->parsed()) return cmd_verify(suite);
    if (sweep->parsed()) return cmd_sweep(o, stage_grid, fw_grid, mode_grid, buffer_grid,
                                          sweep_seeds);
    if (simnet->parsed()) return cmd_simnet(sim_out, sim_fw, sim_bw, sim_points);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
