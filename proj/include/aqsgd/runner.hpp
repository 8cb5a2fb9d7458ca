#pragma once

// Run orchestration shared by the CLI and the tests: config parsing, model
// construction, learning-rate resolution, execution, and the serialized
// artifacts (metrics CSV, summary/audit JSON, manifest).
//
// Config files are flat key = value text; '#' starts a comment. Every knob
// lives in the manifest and all randomness derives from the manifest seed,
// so re-running a manifest reproduces the outputs byte for byte.

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aqsgd/analysis.hpp"
#include "aqsgd/model.hpp"
#include "aqsgd/protocol.hpp"
#include "aqsgd/toy_lq.hpp"
#include "aqsgd/workers.hpp"

namespace aqsgd {

inline constexpr const char* kMetricsSchemaVersion = "metrics-v1";
inline constexpr const char* kCodeVersion = "aqsgd-0.1.0";

struct RunSpec {
  TrainConfig train;
  std::string dataset = "regression-mlp";
  int dataset_n = 256;
  int stages = 2;
  std::string engine = "reference";  // reference | workers
  bool gamma_theorem = false;        // resolve gamma from the toy certificate
};

// --------------------------------------------------------------------------
// Parsing
// --------------------------------------------------------------------------

inline Scheme parse_scheme(const std::string& s) {
  if (s == "identity") return Scheme::Identity;
  if (s == "l2sr") return Scheme::L2StochasticRound;
  if (s == "uniform") return Scheme::RangeUniformStochastic;
  throw std::runtime_error("unknown quantizer scheme '" + s + "'");
}

inline Mode parse_mode(const std::string& s) {
  if (s == "fp32") return Mode::FP32;
  if (s == "directq") return Mode::DirectQ;
  if (s == "aqsgd") return Mode::AQSGD;
  throw std::runtime_error("unknown mode '" + s + "'");
}

inline void apply_key(RunSpec& spec, const std::string& key, const std::string& value) {
  auto to_int = [&](const std::string& v) { return std::stoi(v); };
  auto to_long = [&](const std::string& v) { return std::stol(v); };
  if (key == "mode") {
    spec.train.mode = parse_mode(value);
  } else if (key == "stages") {
    spec.stages = to_int(value);
  } else if (key == "dataset") {
    spec.dataset = value;
  } else if (key == "dataset_n") {
    spec.dataset_n = to_int(value);
  } else if (key == "epochs") {
    spec.train.epochs = to_int(value);
  } else if (key == "steps") {
    spec.train.steps = to_long(value);
  } else if (key == "gamma") {
    if (value == "theorem") {
      spec.gamma_theorem = true;
    } else {
      spec.gamma_theorem = false;
      spec.train.gamma = std::stod(value);
    }
  } else if (key == "fw_scheme") {
    spec.train.fw.scheme = parse_scheme(value);
  } else if (key == "fw_bits") {
    spec.train.fw.bits = to_int(value);
  } else if (key == "bw_scheme") {
    spec.train.bw.scheme = parse_scheme(value);
  } else if (key == "bw_bits") {
    spec.train.bw.bits = to_int(value);
  } else if (key == "buffer_bits") {
    spec.train.buffer_bits = (value == "full") ? 0 : to_int(value);
  } else if (key == "update_order") {
    if (value == "simultaneous") {
      spec.train.sequential_update = false;
    } else if (value == "sequential") {
      spec.train.sequential_update = true;
    } else {
      throw std::runtime_error("update_order must be simultaneous|sequential");
    }
  } else if (key == "sampling") {
    if (value == "shuffle") {
      spec.train.sampling = Sampling::EpochShuffle;
    } else if (value == "replacement") {
      spec.train.sampling = Sampling::UniformWithReplacement;
    } else {
      throw std::runtime_error("unknown sampling policy '" + value + "'");
    }
  } else if (key == "seed") {
    spec.train.seed = std::stoull(value);
  } else if (key == "analysis") {
    spec.train.analysis = (value == "1" || value == "true");
  } else if (key == "engine") {
    require(value == "reference" || value == "workers", "engine must be reference|workers");
    spec.engine = value;
  } else {
    throw std::runtime_error("unknown config key '" + key + "'");
  }
}

inline RunSpec parse_config_text(const std::string& text) {
  RunSpec spec;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    if (eq == std::string::npos) {
      require(trim(line).empty(), "config line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    apply_key(spec, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return spec;
}

inline RunSpec load_config_file(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

// --------------------------------------------------------------------------
// Model construction and gamma resolution
// --------------------------------------------------------------------------

inline PipelineModel build_model_for(const RunSpec& spec) {
  if (spec.dataset == "regression-mlp") return build_regression_mlp(spec.stages, spec.train.seed);
  if (spec.dataset == "classification-2d")
    return build_classification_2d(spec.stages, spec.train.seed);
  if (spec.dataset == "toy-lq") {
    require(spec.stages == 2, "toy-lq is a two-stage model");
    const Dataset data = make_dataset("toy-lq", spec.dataset_n, spec.train.seed);
    const double cq = spec.train.fw.scheme == Scheme::L2StochasticRound
                          ? certified_cq(spec.train.fw, dataset_dims::kToyHidden)
                          : 0.5;
    return build_toy_lq_model(make_toy_lq(data, cq), spec.train.seed);
  }
  throw std::runtime_error("no model preset for dataset '" + spec.dataset + "'");
}

// Theorem-derived learning rate for a certified toy run.
inline TheoremConstants resolve_toy_constants(const RunSpec& spec, const Dataset& data) {
  require(spec.dataset == "toy-lq", "gamma=theorem needs the certified toy model");
  require(spec.train.fw.scheme == Scheme::L2StochasticRound &&
              spec.train.bw.scheme == Scheme::L2StochasticRound,
          "gamma=theorem needs the certified quantizer scheme");
  const double cq_fw = certified_cq(spec.train.fw, dataset_dims::kToyHidden);
  const double cq_bw = certified_cq(spec.train.bw, dataset_dims::kToyHidden);
  const double cq = std::max(cq_fw, cq_bw);
  const ToyLQ toy = make_toy_lq(data, cq);
  const ToyConstants tc = exact_constants(toy, data);
  const long t = spec.train.resolve_steps(data.size());
  // sigma enters the audited right-hand sides, not the learning rate.
  auto in = ConstantsInput::for_k2(tc.l_f, tc.l_a, tc.c_a, tc.l_fb, tc.c_fb, 0.0, cq,
                                   data.size(), t, Provenance::Certified);
  return compute_theorem_constants(in);
}

// --------------------------------------------------------------------------
// Artifacts
// --------------------------------------------------------------------------

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string metrics_csv_header(int boundaries) {
  std::string h = "step,epoch,sample_id,loss,grad_norm,delta_norm_total";
  for (int b = 1; b <= boundaries; ++b) h += ",delta_norm_b" + std::to_string(b);
  h += ",bytes_fw,bytes_bw";
  return h;
}

inline std::string metrics_to_csv(const std::vector<StepMetrics>& metrics, int boundaries) {
  std::string out = "# schema=";
  out += kMetricsSchemaVersion;
  out += "\n";
  out += metrics_csv_header(boundaries);
  out += "\n";
  for (const auto& m : metrics) {
    double total_sq = 0.0;
    for (double v : m.delta_norm) total_sq += v * v;
    out += std::to_string(m.step) + "," + std::to_string(m.epoch) + "," +
           std::to_string(m.sample) + "," + fmt_double(m.loss) + "," + fmt_double(m.grad_norm) +
           "," + fmt_double(std::sqrt(total_sq));
    for (int b = 0; b < boundaries; ++b)
      out += "," + fmt_double(b < static_cast<int>(m.delta_norm.size()) ? m.delta_norm[b] : 0.0);
    out += "," + std::to_string(m.bytes_fw) + "," + std::to_string(m.bytes_bw) + "\n";
  }
  return out;
}

inline nlohmann::json spec_to_json(const RunSpec& spec) {
  nlohmann::json j;
  j["mode"] = mode_name(spec.train.mode);
  j["stages"] = spec.stages;
  j["dataset"] = spec.dataset;
  j["dataset_n"] = spec.dataset_n;
  j["epochs"] = spec.train.epochs;
  j["steps"] = spec.train.steps;
  j["gamma"] = spec.gamma_theorem ? nlohmann::json("theorem") : nlohmann::json(spec.train.gamma);
  j["fw_scheme"] = scheme_name(spec.train.fw.scheme);
  j["fw_bits"] = spec.train.fw.bits;
  j["bw_scheme"] = scheme_name(spec.train.bw.scheme);
  j["bw_bits"] = spec.train.bw.bits;
  j["buffer_bits"] = spec.train.buffer_bits == 0 ? nlohmann::json("full")
                                                 : nlohmann::json(spec.train.buffer_bits);
  j["sampling"] =
      spec.train.sampling == Sampling::EpochShuffle ? "shuffle" : "replacement";
  j["update_order"] = spec.train.sequential_update ? "sequential" : "simultaneous";
  j["seed"] = spec.train.seed;
  j["analysis"] = spec.train.analysis;
  j["engine"] = spec.engine;
  return j;
}

struct RunArtifacts {
  RunResult result;
  double resolved_gamma = 0.0;
  double last_epoch_mean_loss = 0.0;
  double final_batch_loss = 0.0;  // uncompressed full-batch loss at final params
  std::string metrics_csv;
  nlohmann::json summary;
  nlohmann::json audit;  // null unless analysis was enabled
  nlohmann::json manifest;
};

inline double last_epoch_mean(const std::vector<StepMetrics>& metrics, int n) {
  if (metrics.empty()) return 0.0;
  const int last_epoch = metrics.back().epoch;
  double sum = 0.0;
  long count = 0;
  for (const auto& m : metrics) {
    if (m.epoch == last_epoch) {
      sum += m.loss;
      ++count;
    }
  }
  (void)n;
  return count ? sum / count : 0.0;
}

// Model quality at the final parameters: full-batch loss through the
// uncompressed model, comparable across modes and stage counts.
inline double final_full_batch_loss(const PipelineModel& structure, const Vec& final_params,
                                    const Dataset& data) {
  PipelineModel m = structure;
  unflatten_params(m, final_params);
  double sum = 0.0;
  for (int s = 0; s < data.size(); ++s)
    sum += model_forward(m, data.samples[s], data.targets[s]).loss;
  return sum / data.size();
}

inline RunArtifacts execute_run(const RunSpec& spec_in) {
  RunSpec spec = spec_in;
  const Dataset data = make_dataset(spec.dataset, spec.dataset_n, spec.train.seed);
  PipelineModel model = build_model_for(spec);

  nlohmann::json audit;
  if (spec.gamma_theorem) {
    const TheoremConstants tc = resolve_toy_constants(spec, data);
    spec.train.gamma = tc.gamma_theorem;
    audit["gamma_theorem"] = tc.gamma_theorem;
    audit["constant_c"] = tc.c;
    audit["constant_c_prime"] = tc.c_prime;
  }

  RunResult result;
  Lemma1Audit* lemma1 = nullptr;
  Lemma2Audit* lemma2 = nullptr;
  std::unique_ptr<Lemma1Audit> lemma1_holder;
  std::unique_ptr<Lemma2Audit> lemma2_holder;
  long exact_decomp_failures = 0;
  double worst_reconstruction = 0.0;
  // Soft (empirical) suprema for runs without a certificate.
  double sup_delta_q = 0.0, sup_delta = 0.0, sup_tilde_ratio = 0.0;

  if (spec.engine == "workers") {
    require(!spec.train.analysis, "analysis requires the reference engine");
    KWorkerEngine engine(std::move(model), &data, spec.train);
    result = engine.run();
  } else if (spec.train.analysis) {
    require(!spec.train.sequential_update,
            "the error decomposition assumes the simultaneous update order");
    const PipelineModel structure = model;
    const bool certified = spec.dataset == "toy-lq" &&
                           spec.train.fw.scheme == Scheme::L2StochasticRound &&
                           spec.train.bw.scheme == Scheme::L2StochasticRound &&
                           spec.train.buffer_bits == 0;
    ToyConstants toyc;
    double cq = 0.0;
    if (certified) {
      const double cq_fw = certified_cq(spec.train.fw, dataset_dims::kToyHidden);
      const double cq_bw = certified_cq(spec.train.bw, dataset_dims::kToyHidden);
      cq = std::max(cq_fw, cq_bw);
      toyc = exact_constants(make_toy_lq(data, cq), data);
      lemma1_holder = std::make_unique<Lemma1Audit>(cq, toyc.c_a, toyc.l_fb, toyc.c_fb);
      lemma1 = lemma1_holder.get();
      lemma2_holder = std::make_unique<Lemma2Audit>(structure, &data);
      lemma2 = lemma2_holder.get();
    }
    const long total = spec.train.resolve_steps(data.size());
    const TrainConfig cfg = spec.train;
    StepObserver observer = [&](const StepSnapshot& snap, const StepMetrics&) {
      const ErrorBreakdown eb = error_decomposition(structure, snap, data, cfg);
      // Reconstruction check: g + all error terms must equal the applied
      // gradient (up to fp associativity).
      double worst = 0.0;
      for (std::size_t i = 0; i < eb.applied.size(); ++i) {
        Vec recon = eb.g_true[i];
        if (i + 1 < eb.applied.size()) {
          recon = add(recon, add(eb.grad_q[i], eb.grad_fwd[i]));
        } else {
          recon = add(recon, eb.grad_last);
        }
        for (std::size_t c = 0; c < recon.size(); ++c)
          worst = std::max(worst, std::abs(recon[c] - eb.applied[i][c]));
      }
      worst_reconstruction = std::max(worst_reconstruction, worst);
      if (worst > 1e-10) ++exact_decomp_failures;
      if (lemma1) lemma1->add(eb);
      if (lemma2) lemma2->add(snap, eb, total);
      if (!lemma1) {
        sup_delta_q = std::max(sup_delta_q, eb.delta_q_norm());
        const double dn = eb.delta_norm();
        sup_delta = std::max(sup_delta, dn);
        if (dn > 0.0) sup_tilde_ratio = std::max(sup_tilde_ratio, eb.delta_tilde_norm() / dn);
      }
    };
    TrainingEngine engine(std::move(model), &data, spec.train);
    result = engine.run(observer);
  } else {
    TrainingEngine engine(std::move(model), &data, spec.train);
    result = engine.run();
  }

  RunArtifacts art;
  art.resolved_gamma = spec.train.gamma;
  art.result = std::move(result);
  art.last_epoch_mean_loss = last_epoch_mean(art.result.metrics, data.size());
  art.final_batch_loss =
      final_full_batch_loss(build_model_for(spec), art.result.final_params, data);
  const int boundaries = spec.stages - 1;
  art.metrics_csv = metrics_to_csv(art.result.metrics, boundaries);

  art.summary["schema"] = kMetricsSchemaVersion;
  art.summary["final_loss"] = art.result.final_loss;
  art.summary["last_epoch_mean_loss"] = art.last_epoch_mean_loss;
  art.summary["final_batch_loss"] = art.final_batch_loss;
  art.summary["diverged"] = art.result.diverged;
  art.summary["steps_run"] = art.result.steps_run;
  art.summary["total_bytes_fw"] = art.result.total_bytes_fw;
  art.summary["total_bytes_bw"] = art.result.total_bytes_bw;
  art.summary["gamma"] = spec.train.gamma;

  if (spec.train.analysis) {
    // Documented audit schema: every inequality reports lhs, rhs, slack and
    // pass (for per-step audits, the tightest observed check).
    auto ineq_json = [](const InequalityStat& s) {
      return nlohmann::json{{"name", s.name},         {"checks", s.checks},
                            {"violations", s.violations}, {"pass", s.clean()},
                            {"lhs", s.lhs_at_worst},  {"rhs", s.rhs_at_worst},
                            {"slack", s.min_slack},   {"max_ratio", s.max_ratio}};
    };
    audit["decomposition"] = {
        {"worst_reconstruction_error", worst_reconstruction},
        {"failures_beyond_1e-10", exact_decomp_failures},
    };
    if (lemma1) {
      audit["lemma1"] = {
          {"provenance", "certified"},
          {"inequalities",
           nlohmann::json::array(
               {ineq_json(lemma1->quant_bound()), ineq_json(lemma1->tilde_bound())})},
      };
    } else {
      // No certificate for this model/scheme: report observed suprema only.
      audit["empirical"] = {
          {"provenance", "empirical"},
          {"sup_delta_q_norm", sup_delta_q},
          {"sup_delta_norm", sup_delta},
          {"sup_tilde_over_delta", sup_tilde_ratio},
      };
      RngStream cq_probe(spec.train.seed, 255);
      const auto dims = build_model_for(spec).boundary_dims();
      if (spec.train.fw.scheme == Scheme::RangeUniformStochastic)
        audit["empirical"]["empirical_cq_fw"] =
            empirical_cq(spec.train.fw, static_cast<std::size_t>(dims[0]), 500, cq_probe);
      if (spec.train.bw.scheme == Scheme::RangeUniformStochastic)
        audit["empirical"]["empirical_cq_bw"] =
            empirical_cq(spec.train.bw, static_cast<std::size_t>(dims[0]), 500, cq_probe);
    }
    if (lemma2) {
      const double cq_fw = certified_cq(spec.train.fw, dataset_dims::kToyHidden);
      const double cq_bw = certified_cq(spec.train.bw, dataset_dims::kToyHidden);
      const double cq = std::max(cq_fw, cq_bw);
      const ToyConstants tc = exact_constants(make_toy_lq(data, cq), data);
      auto in = ConstantsInput::for_k2(tc.l_f, tc.l_a, tc.c_a, tc.l_fb, tc.c_fb,
                                       std::sqrt(lemma2->sigma_sq()), cq, data.size(),
                                       lemma2->steps(), Provenance::Certified);
      const TheoremConstants th = compute_theorem_constants(in);
      const InequalityStat lem2 = lemma2->finalize(th, spec.train.gamma);
      audit["lemma2"] = ineq_json(lem2);
      audit["lemma2"]["sigma_sq"] = lemma2->sigma_sq();
      const auto rate = lemma2->rate_report(
          th, spec.dataset == "toy-lq" ? toy_lq_f_star(make_toy_lq(data, cq), data) : 0.0);
      audit["rate"] = {{"mean_grad_sq", rate.lhs},
                       {"stated_rhs", rate.rhs},
                       {"realized_ratio", rate.ratio}};
    }
    art.audit = audit;
  }

  art.manifest["code_version"] = kCodeVersion;
  art.manifest["config"] = spec_to_json(spec_in);
  art.manifest["resolved_gamma"] = spec.train.gamma;
  art.manifest["dataset"] = {{"name", spec.dataset}, {"n", spec.dataset_n},
                             {"seed", spec.train.seed}};
  art.manifest["outputs"] = {"metrics.csv", "summary.json", "audit.json"};
  return art;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot write '" + path + "'");
  f << content;
}

}  // namespace aqsgd
