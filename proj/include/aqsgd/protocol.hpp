#pragma once

// The training protocol: delta-quantized forward activation exchange against
// per-sample buffers, directly quantized backward gradients, and the
// resulting SGD step, plus the two baselines (FP32, DirectQ).
//
// One step with sample xi:
//   forward   h_0 = xi; at every boundary i the stage output
//             z_i = a_i(h_{i-1}) is exchanged:
//               FP32     received = z_i
//               DirectQ  received = Q_fw(z_i)                 (no buffer)
//               delta    first visit: send exact, m_i <- z_i;
//                        else m_i <- m_i + Q_fw(z_i - m_i), received = m_i
//             and h_i = received.
//   backward  the loss stage's input gradient is quantized with Q_bw and
//             handed down; every lower stage multiplies the received
//             gradient by its local Jacobians and passes on a quantized
//             input gradient.
//   update    every stage applies x_i <- x_i - gamma * param_grad_i using
//             its pre-step parameters (simultaneous update).
//
// All loops are deterministic in (config, data): randomness comes only from
// the per-purpose counter streams in rng.hpp.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aqsgd/buffer.hpp"
#include "aqsgd/common.hpp"
#include "aqsgd/model.hpp"
#include "aqsgd/quantize.hpp"
#include "aqsgd/rng.hpp"

namespace aqsgd {

enum class Mode { FP32, DirectQ, AQSGD };
enum class Sampling { EpochShuffle, UniformWithReplacement };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::FP32: return "fp32";
    case Mode::DirectQ: return "directq";
    case Mode::AQSGD: return "aqsgd";
  }
  return "?";
}

struct TrainConfig {
  Mode mode = Mode::AQSGD;
  QuantizerSpec fw = QuantizerSpec::uniform(4);
  QuantizerSpec bw = QuantizerSpec::uniform(8);
  int buffer_bits = 0;  // 0 = full-precision buffer
  double gamma = 0.05;
  int epochs = 10;
  long steps = 0;  // 0: epochs * N
  Sampling sampling = Sampling::EpochShuffle;
  std::uint64_t seed = 1;
  bool analysis = false;  // emit per-step snapshots to the run observer
  // Default: every stage updates from its pre-step parameters (the reading
  // the error analysis uses). With sequential_update, a stage applies its
  // update before emitting its backward message, which is then evaluated at
  // the already-updated parameters. Reference engine only.
  bool sequential_update = false;
  double divergence_threshold = 1e12;

  long resolve_steps(int n) const { return steps > 0 ? steps : static_cast<long>(epochs) * n; }
};

struct StepMetrics {
  long step = 0;
  int epoch = 0;
  int sample = 0;
  double loss = 0.0;
  double grad_norm = 0.0;  // norm of the applied update direction
  bool first_visit = false;
  std::vector<double> delta_norm;          // per boundary: ||abar_i - m_i|| (buffer error)
  std::vector<double> residual_norm;       // per boundary: ||z_i - m_old|| before quantization
  std::vector<double> post_residual_norm;  // per boundary: ||z_i - m_new|| after the update
  std::vector<double> act_change_norm;  // per boundary: ||abar_now - abar_prev_visit|| (-1 first)
  std::size_t bytes_fw = 0;
  std::size_t bytes_bw = 0;
};

// Everything needed to replay one step offline: pre-step parameters, the
// sample's pre-step buffer rows, and the quantizer stream counters.
struct StepSnapshot {
  long step = 0;
  int epoch = 0;
  int sample = 0;
  std::vector<Vec> params;                      // per stage
  std::vector<std::optional<Vec>> buffer_rows;  // per boundary (AQSGD only)
  std::vector<std::uint64_t> fw_counters;
  std::vector<std::uint64_t> bw_counters;
  std::vector<std::uint64_t> reenc_counters;
};

struct RunResult {
  std::vector<StepMetrics> metrics;
  bool diverged = false;
  long steps_run = 0;
  double final_loss = 0.0;  // loss at the last completed step
  Vec final_params;
  std::size_t total_bytes_fw = 0;
  std::size_t total_bytes_bw = 0;
};

// Per-consumer random streams for a K-stage run (boundaries are 1-based).
struct RngBank {
  RngStream sampling;
  std::vector<RngStream> fw, bw, reenc;

  RngBank() = default;
  RngBank(std::uint64_t seed, int k) : sampling(seed, stream_id::kSampling) {
    for (int b = 1; b < k; ++b) {
      fw.emplace_back(seed, stream_id::quantize_fw(b));
      bw.emplace_back(seed, stream_id::quantize_bw(b));
      reenc.emplace_back(seed, stream_id::buffer_reencode(b));
    }
  }
};

// Deterministic epoch-shuffle / with-replacement schedule.
class SampleSchedule {
 public:
  SampleSchedule(Sampling kind, int n, RngStream* rng) : kind_(kind), n_(n), rng_(rng) {}

  int next(long step) {
    if (kind_ == Sampling::UniformWithReplacement)
      return static_cast<int>(rng_->next_below(static_cast<std::uint64_t>(n_)));
    const long pos = step % n_;
    if (pos == 0) reshuffle();
    return perm_[static_cast<std::size_t>(pos)];
  }

 private:
  void reshuffle() {
    if (perm_.empty()) {
      perm_.resize(n_);
      for (int i = 0; i < n_; ++i) perm_[i] = i;
    }
    for (int i = n_ - 1; i > 0; --i) {
      const int j = static_cast<int>(rng_->next_below(static_cast<std::uint64_t>(i) + 1));
      std::swap(perm_[i], perm_[j]);
    }
  }

  Sampling kind_;
  int n_;
  RngStream* rng_;
  std::vector<int> perm_;
};

namespace exchange {

struct ForwardResult {
  Vec received;
  std::size_t bytes = 0;
  bool first_visit = false;
  double residual_norm = 0.0;
  double post_residual_norm = 0.0;
};

// Sender-side forward exchange at one boundary (the receiver applies the
// identical buffer update from the wire payload; see workers.hpp).
inline ForwardResult forward_exchange(ActivationBuffer& buf, int sample, const Vec& activation,
                                      const QuantizerSpec& fw, RngStream& fw_rng,
                                      RngStream& reenc_rng, long step) {
  require(static_cast<int>(activation.size()) == buf.dim(),
          "forward_exchange: dimension mismatch");
  ForwardResult r;
  if (!buf.visited(sample)) {
    r.first_visit = true;
    const Vec& stored = buf.store_initial(sample, activation, step, reenc_rng);
    r.received = activation;  // exact full-precision send
    r.bytes = encoded_bytes(QuantizerSpec::identity(), activation.size());
    r.post_residual_norm = l2_norm(sub(activation, stored));
    return r;
  }
  if (fw.is_identity()) {
    // Lossless delta: the wire carries the activation itself, so the buffer
    // update m <- m + (a - m) is an exact overwrite and the protocol
    // collapses to plain SGD bit for bit.
    r.residual_norm = l2_norm(sub(activation, buf.message(sample)));
    const Vec& stored = buf.store_absolute(sample, activation, step, reenc_rng);
    r.received = activation;
    r.bytes = encoded_bytes(fw, activation.size());
    r.post_residual_norm = l2_norm(sub(activation, stored));
    return r;
  }
  const Vec residual = sub(activation, buf.message(sample));
  r.residual_norm = l2_norm(residual);
  const Vec delta = quantize_decode(fw, residual, fw_rng);
  const Vec& stored = buf.apply_delta(sample, delta, step, reenc_rng);
  r.received = stored;
  r.bytes = encoded_bytes(fw, activation.size());
  r.post_residual_norm = l2_norm(sub(activation, stored));
  return r;
}

struct BackwardResult {
  Vec received;
  std::size_t bytes = 0;
};

// Backward gradients are quantized directly; no buffering in this direction.
inline BackwardResult backward_exchange(const Vec& grad, const QuantizerSpec& bw,
                                        RngStream& bw_rng) {
  BackwardResult r;
  r.received = quantize_decode(bw, grad, bw_rng);
  r.bytes = encoded_bytes(bw, grad.size());
  return r;
}

}  // namespace exchange

using StepObserver = std::function<void(const StepSnapshot&, const StepMetrics&)>;

// Single-threaded reference engine. The K-worker engine in workers.hpp
// produces bit-identical trajectories for the same config.
class TrainingEngine {
 public:
  TrainingEngine(PipelineModel model, const Dataset* data, TrainConfig cfg)
      : model_(std::move(model)), data_(data), cfg_(cfg) {
    model_.check();
    const auto dims = model_.boundary_dims();
    k_ = model_.num_stages();
    rng_ = RngBank(cfg_.seed, k_);
    const QuantizerSpec fw = effective_fw();
    const QuantizerSpec bw = effective_bw();
    for (int i = 0; i < k_ - 1; ++i) {
      check_admissible(fw, dims[i]);
      check_admissible(bw, dims[i]);
    }
    if (cfg_.mode == Mode::AQSGD) {
      for (int i = 0; i < k_ - 1; ++i)
        buffers_.emplace_back(i + 1, dims[i], data_->size(), cfg_.buffer_bits);
    }
    prev_act_.assign(static_cast<std::size_t>(k_ - 1),
                     std::vector<std::optional<Vec>>(data_->size()));
  }

  QuantizerSpec effective_fw() const {
    return cfg_.mode == Mode::FP32 ? QuantizerSpec::identity() : cfg_.fw;
  }
  QuantizerSpec effective_bw() const {
    return cfg_.mode == Mode::FP32 ? QuantizerSpec::identity() : cfg_.bw;
  }

  const PipelineModel& model() const { return model_; }
  const Dataset& data() const { return *data_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<ActivationBuffer>& buffers() const { return buffers_; }

  // Executes one protocol step and applies the parameter updates.
  StepMetrics step(long t, int sample, StepSnapshot* snapshot = nullptr) {
    const int n_bound = k_ - 1;
    const Vec& xi = data_->samples[sample];
    const Vec& target = data_->targets[sample];

    if (snapshot) *snapshot = take_snapshot(t, sample);

    StepMetrics m;
    m.step = t;
    m.epoch = static_cast<int>(t / data_->size());
    m.sample = sample;
    m.delta_norm.assign(n_bound, 0.0);
    m.residual_norm.assign(n_bound, 0.0);
    m.post_residual_norm.assign(n_bound, 0.0);
    m.act_change_norm.assign(n_bound, -1.0);

    const QuantizerSpec fw = effective_fw();
    const QuantizerSpec bw = effective_bw();

    // Forward chain through the exchanged messages.
    std::vector<StageTrace> traces(k_);
    Vec h = xi;
    for (int i = 0; i < n_bound; ++i) {
      traces[i] = stage_forward(model_.stages[i], h);
      Vec z = traces[i].output();
      switch (cfg_.mode) {
        case Mode::AQSGD: {
          auto r = exchange::forward_exchange(buffers_[i], sample, z, fw, rng_.fw[i],
                                              rng_.reenc[i], t);
          m.first_visit = r.first_visit;
          m.residual_norm[i] = r.residual_norm;
          m.post_residual_norm[i] = r.post_residual_norm;
          m.bytes_fw += r.bytes;
          h = std::move(r.received);
          break;
        }
        case Mode::DirectQ:
          h = quantize_decode(fw, z, rng_.fw[i]);
          m.bytes_fw += encoded_bytes(fw, z.size());
          break;
        case Mode::FP32:
          h = std::move(z);
          m.bytes_fw += encoded_bytes(QuantizerSpec::identity(), h.size());
          break;
      }
    }
    traces[k_ - 1] = stage_forward(model_.stages[k_ - 1], h, target);
    m.loss = traces[k_ - 1].output()[0];

    // True-activation shadow chain for the message-error metrics.
    if (cfg_.mode != Mode::FP32) {
      Vec abar = xi;
      for (int i = 0; i < n_bound; ++i) {
        abar = stage_forward(model_.stages[i], abar).output();
        const Vec& reference = (cfg_.mode == Mode::AQSGD) ? buffers_[i].message(sample)
                                                          : traces_input(traces, i);
        m.delta_norm[i] = l2_norm(sub(abar, reference));
        auto& prev = prev_act_[i][sample];
        if (prev) m.act_change_norm[i] = l2_norm(sub(abar, *prev));
        prev = abar;
      }
    }

    // Backward chain with direct gradient quantization at each boundary.
    std::vector<Vec> applied(k_);
    Vec up{1.0};
    double grad_sq = 0.0;
    static const Vec kNoTarget;
    for (int i = k_ - 1; i >= 0; --i) {
      const Vec& tgt = i == k_ - 1 ? target : kNoTarget;
      StageGrads g = stage_backward(model_.stages[i], traces[i], up, tgt);
      grad_sq += dot(g.param_grad, g.param_grad);
      applied[i] = std::move(g.param_grad);
      if (cfg_.sequential_update)
        axpy(-cfg_.gamma, applied[i], model_.stages[i].params);
      if (i > 0) {
        Vec down = std::move(g.input_grad);
        if (cfg_.sequential_update) {
          // Re-evaluate the downward message at the freshly updated
          // parameters, as in the strictly line-ordered protocol reading.
          const StageTrace tr2 =
              stage_forward(model_.stages[i], traces[i].inputs.front(), tgt);
          down = stage_backward(model_.stages[i], tr2, up, tgt).input_grad;
        }
        auto r = exchange::backward_exchange(down, bw, rng_.bw[i - 1]);
        m.bytes_bw += r.bytes;
        up = std::move(r.received);
      }
    }
    m.grad_norm = std::sqrt(grad_sq);

    // Default: simultaneous update from pre-step parameters.
    if (!cfg_.sequential_update) {
      for (int i = 0; i < k_; ++i) axpy(-cfg_.gamma, applied[i], model_.stages[i].params);
    }
    return m;
  }

  RunResult run(const StepObserver& observer = {}) {
    RunResult out;
    const long total = cfg_.resolve_steps(data_->size());
    SampleSchedule schedule(cfg_.sampling, data_->size(), &rng_.sampling);
    StepSnapshot snap;
    for (long t = 0; t < total; ++t) {
      const int sample = schedule.next(t);
      StepMetrics sm = step(t, sample, (cfg_.analysis && observer) ? &snap : nullptr);
      out.total_bytes_fw += sm.bytes_fw;
      out.total_bytes_bw += sm.bytes_bw;
      out.final_loss = sm.loss;
      out.steps_run = t + 1;
      const bool bad = !std::isfinite(sm.loss) || sm.loss > cfg_.divergence_threshold;
      if (cfg_.analysis && observer) observer(snap, sm);
      out.metrics.push_back(std::move(sm));
      if (bad) {
        out.diverged = true;
        break;
      }
    }
    out.final_params = flatten_params(model_);
    return out;
  }

 private:
  static const Vec& traces_input(const std::vector<StageTrace>& traces, int boundary) {
    // What stage boundary+1 consumed, i.e. the input recorded by its trace.
    return traces[boundary + 1].inputs.front();
  }

  static void check_admissible(const QuantizerSpec& spec, int dim) {
    if (spec.scheme != Scheme::L2StochasticRound) return;
    const double cq = certified_cq(spec, static_cast<std::size_t>(dim));
    require(cq < std::sqrt(0.5),
            "run setup: certified c_Q = sqrt(d)/2^b must stay below sqrt(1/2) "
            "(dim " + std::to_string(dim) + ", bits " + std::to_string(spec.bits) + ")");
  }

  StepSnapshot take_snapshot(long t, int sample) const {
    StepSnapshot s;
    s.step = t;
    s.epoch = static_cast<int>(t / data_->size());
    s.sample = sample;
    for (const auto& st : model_.stages) s.params.push_back(st.params);
    for (int i = 0; i < k_ - 1; ++i) {
      if (cfg_.mode == Mode::AQSGD && buffers_[i].visited(sample))
        s.buffer_rows.push_back(buffers_[i].message(sample));
      else
        s.buffer_rows.push_back(std::nullopt);
      s.fw_counters.push_back(rng_.fw[i].counter());
      s.bw_counters.push_back(rng_.bw[i].counter());
      s.reenc_counters.push_back(rng_.reenc[i].counter());
    }
    return s;
  }

  PipelineModel model_;
  const Dataset* data_;
  TrainConfig cfg_;
  int k_ = 0;
  RngBank rng_;
  std::vector<ActivationBuffer> buffers_;
  std::vector<std::vector<std::optional<Vec>>> prev_act_;
};

inline RunResult run_training(PipelineModel model, const Dataset& data, const TrainConfig& cfg,
                              const StepObserver& observer = {}) {
  TrainingEngine engine(std::move(model), &data, cfg);
  return engine.run(observer);
}

// Textbook single-machine SGD on the composed model, same schedule stream.
// This is the oracle the protocol must match bitwise when compression is
// disabled.
inline RunResult run_plain_sgd(PipelineModel model, const Dataset& data, double gamma,
                               long steps, Sampling sampling, std::uint64_t seed) {
  RunResult out;
  RngStream srng(seed, stream_id::kSampling);
  SampleSchedule schedule(sampling, data.size(), &srng);
  for (long t = 0; t < steps; ++t) {
    const int sample = schedule.next(t);
    const ModelEval ev = model_forward(model, data.samples[sample], data.targets[sample]);
    const std::vector<Vec> grads = model_backward(model, ev, data.targets[sample]);
    for (std::size_t i = 0; i < model.stages.size(); ++i)
      axpy(-gamma, grads[i], model.stages[i].params);
    StepMetrics m;
    m.step = t;
    m.sample = sample;
    m.loss = ev.loss;
    out.final_loss = ev.loss;
    out.metrics.push_back(std::move(m));
  }
  out.steps_run = steps;
  out.final_params = flatten_params(model);
  return out;
}

}  // namespace aqsgd
