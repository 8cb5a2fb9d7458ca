#pragma once

// K-worker execution mode: one thread per stage, connected by ordered,
// lossless, bounded in-process channels that carry the serialized wire
// frames. Each worker owns its stage parameters and its buffer copies
// exclusively; randomness is partitioned per (boundary, direction) exactly
// as in the reference engine, so both modes produce bit-identical
// trajectories for the same config.
//
// Wire frame layout (bit-exact):
//   8 bytes  step index, little-endian
//   4 bytes  sample id, little-endian
//   2 bytes  boundary id, little-endian
//   1 byte   direction flag (0 forward, 1 backward, 2 stop)
//   1 byte   scheme id (Scheme enum value of the payload)
//   payload  QuantizedPayload layout from quantize.hpp
//
// The schedule is synchronous per sample: the coordinator starts step t+1
// only after every worker reported step t done, and checks that the sender
// and receiver buffer digests agree at every boundary after every step.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <thread>
#include <vector>

#include "aqsgd/protocol.hpp"

namespace aqsgd {

namespace wire {

inline constexpr std::size_t kHeaderBytes = 16;

struct FrameHeader {
  std::uint64_t step = 0;
  std::uint32_t sample = 0;
  std::uint16_t boundary = 0;
  std::uint8_t direction = 0;  // 0 fwd, 1 bwd, 2 stop
  std::uint8_t scheme = 0;
};

inline std::vector<std::uint8_t> encode_frame(const FrameHeader& h,
                                              const std::vector<std::uint8_t>& payload) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + payload.size());
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(h.step >> (8 * i)));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(h.sample >> (8 * i)));
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<std::uint8_t>(h.boundary >> (8 * i)));
  out.push_back(h.direction);
  out.push_back(h.scheme);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline FrameHeader decode_header(const std::vector<std::uint8_t>& frame) {
  require(frame.size() >= kHeaderBytes, "wire: truncated frame header");
  FrameHeader h;
  for (int i = 0; i < 8; ++i) h.step |= static_cast<std::uint64_t>(frame[i]) << (8 * i);
  for (int i = 0; i < 4; ++i) h.sample |= static_cast<std::uint32_t>(frame[8 + i]) << (8 * i);
  for (int i = 0; i < 2; ++i) h.boundary |= static_cast<std::uint16_t>(frame[12 + i]) << (8 * i);
  h.direction = frame[14];
  h.scheme = frame[15];
  return h;
}

}  // namespace wire

template <typename T>
class BoundedChannel {
 public:
  explicit BoundedChannel(std::size_t capacity = 16) : capacity_(capacity) {}

  void push(T item) {
    std::unique_lock<std::mutex> lk(mu_);
    cv_space_.wait(lk, [&] { return q_.size() < capacity_; });
    q_.push_back(std::move(item));
    cv_item_.notify_one();
  }

  T pop() {
    std::unique_lock<std::mutex> lk(mu_);
    cv_item_.wait(lk, [&] { return !q_.empty(); });
    T item = std::move(q_.front());
    q_.pop_front();
    cv_space_.notify_one();
    return item;
  }

 private:
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable cv_item_, cv_space_;
  std::deque<T> q_;
};

// Per-step report a worker hands back to the coordinator.
struct WorkerReport {
  int worker = 0;
  double loss = 0.0;  // last worker only
  double grad_sq = 0.0;
  bool first_visit = false;
  std::size_t bytes_fw = 0;
  std::size_t bytes_bw = 0;
  bool has_send_digest = false;
  bool has_recv_digest = false;
  std::uint64_t send_digest = 0;  // buffer copy for the boundary this worker feeds
  std::uint64_t recv_digest = 0;  // buffer copy for the boundary this worker reads
};

class KWorkerEngine {
 public:
  KWorkerEngine(PipelineModel model, const Dataset* data, TrainConfig cfg)
      : model_(std::move(model)), data_(data), cfg_(cfg), k_(model_.num_stages()) {
    model_.check();
    require(k_ >= 2, "worker mode needs at least two stages");
    require(!cfg_.sequential_update, "sequential update order is reference-engine only");
  }

  RunResult run() {
    const auto dims = model_.boundary_dims();
    const long total = cfg_.resolve_steps(data_->size());

    std::vector<BoundedChannel<std::vector<std::uint8_t>>> fwd_ch(k_ - 1), bwd_ch(k_ - 1);
    BoundedChannel<std::pair<long, int>> start_ch;  // coordinator -> worker 0
    BoundedChannel<WorkerReport> report_ch(static_cast<std::size_t>(k_) * 2);
    std::vector<Vec> final_params(k_);

    auto worker_fn = [&](int w) {
      Stage stage = model_.stages[w];
      const QuantizerSpec fw = cfg_.mode == Mode::FP32 ? QuantizerSpec::identity() : cfg_.fw;
      const QuantizerSpec bw = cfg_.mode == Mode::FP32 ? QuantizerSpec::identity() : cfg_.bw;
      const bool buffered = cfg_.mode == Mode::AQSGD;

      // Sender-side copy of boundary w+1, receiver-side copy of boundary w
      // (1-based boundaries; array index b-1).
      ActivationBuffer send_buf, recv_buf;
      RngStream fw_rng, bw_rng, send_reenc, recv_reenc;
      if (w < k_ - 1) {
        if (buffered) send_buf = ActivationBuffer(w + 1, dims[w], data_->size(), cfg_.buffer_bits);
        fw_rng = RngStream(cfg_.seed, stream_id::quantize_fw(w + 1));
        send_reenc = RngStream(cfg_.seed, stream_id::buffer_reencode(w + 1));
      }
      if (w > 0) {
        if (buffered) recv_buf = ActivationBuffer(w, dims[w - 1], data_->size(), cfg_.buffer_bits);
        bw_rng = RngStream(cfg_.seed, stream_id::quantize_bw(w));
        recv_reenc = RngStream(cfg_.seed, stream_id::buffer_reencode(w));
      }

      while (true) {
        long step = -1;
        int sample = -1;
        Vec h_in;
        bool first_visit = false;
        WorkerReport rep;
        rep.worker = w;

        if (w == 0) {
          auto cmd = start_ch.pop();
          step = cmd.first;
          sample = cmd.second;
          if (step < 0) {  // stop
            wire::FrameHeader stop;
            stop.direction = 2;
            fwd_ch[0].push(wire::encode_frame(stop, {}));
            break;
          }
          h_in = data_->samples[sample];
        } else {
          auto frame = fwd_ch[w - 1].pop();
          const wire::FrameHeader h = wire::decode_header(frame);
          if (h.direction == 2) {
            if (w < k_ - 1) fwd_ch[w].push(frame);
            break;
          }
          step = static_cast<long>(h.step);
          sample = static_cast<int>(h.sample);
          const Scheme scheme = static_cast<Scheme>(h.scheme);
          const QuantizerSpec pspec =
              scheme == Scheme::Identity ? QuantizerSpec::identity() : fw;
          const QuantizedPayload p = deserialize_payload(
              pspec, static_cast<std::uint32_t>(dims[w - 1]), frame.data() + wire::kHeaderBytes,
              frame.size() - wire::kHeaderBytes);
          const Vec value = dequantize(pspec, p);
          if (!buffered) {
            h_in = value;
          } else if (scheme == Scheme::Identity) {
            // Raw frame: first visit, or a lossless-forward run. The exact
            // activation is consumed; the store re-encodes when the buffer
            // precision is finite.
            if (!recv_buf.visited(sample)) {
              first_visit = true;
              recv_buf.store_initial(sample, value, step, recv_reenc);
            } else {
              recv_buf.store_absolute(sample, value, step, recv_reenc);
            }
            h_in = value;
          } else {
            h_in = recv_buf.apply_delta(sample, value, step, recv_reenc);
          }
          if (buffered) {
            rep.has_recv_digest = true;
            rep.recv_digest = recv_buf.digest();
          }
        }

        // Forward through the local stage; last worker also owns the loss.
        const bool last = (w == k_ - 1);
        const Vec& target = data_->targets[sample];
        StageTrace tr = stage_forward(stage, h_in, last ? target : Vec{});

        if (!last) {
          Vec z = tr.output();
          QuantizedPayload payload;
          wire::FrameHeader h;
          h.step = static_cast<std::uint64_t>(step);
          h.sample = static_cast<std::uint32_t>(sample);
          h.boundary = static_cast<std::uint16_t>(w + 1);
          h.direction = 0;
          if (buffered && (!send_buf.visited(sample) || fw.is_identity())) {
            if (!send_buf.visited(sample)) {
              first_visit = true;
              send_buf.store_initial(sample, z, step, send_reenc);
            } else {
              send_buf.store_absolute(sample, z, step, send_reenc);
            }
            payload = quantize(QuantizerSpec::identity(), z, fw_rng);
            h.scheme = static_cast<std::uint8_t>(Scheme::Identity);
          } else if (buffered) {
            const Vec residual = sub(z, send_buf.message(sample));
            payload = quantize(fw, residual, fw_rng);
            send_buf.apply_delta(sample, dequantize(fw, payload), step, send_reenc);
            h.scheme = static_cast<std::uint8_t>(fw.scheme);
          } else {
            payload = quantize(fw, z, fw_rng);
            h.scheme = static_cast<std::uint8_t>(fw.scheme);
          }
          auto frame = wire::encode_frame(h, serialize_payload(payload));
          rep.bytes_fw = frame.size() - wire::kHeaderBytes;
          if (buffered) {
            rep.has_send_digest = true;
            rep.send_digest = send_buf.digest();
          }
          fwd_ch[w].push(std::move(frame));
        } else {
          rep.loss = tr.output()[0];
        }

        // Backward: last worker seeds the chain, everyone else waits for the
        // quantized gradient from above.
        Vec up;
        if (last) {
          up = Vec{1.0};
        } else {
          auto frame = bwd_ch[w].pop();
          const wire::FrameHeader h = wire::decode_header(frame);
          require(h.direction == 1, "wire: expected backward frame");
          const QuantizedPayload p = deserialize_payload(
              bw, static_cast<std::uint32_t>(dims[w]), frame.data() + wire::kHeaderBytes,
              frame.size() - wire::kHeaderBytes);
          up = dequantize(bw, p);
        }
        StageGrads g = stage_backward(stage, tr, up, last ? target : Vec{});
        rep.grad_sq = dot(g.param_grad, g.param_grad);
        if (w > 0) {
          const QuantizedPayload payload = quantize(bw, g.input_grad, bw_rng);
          wire::FrameHeader h;
          h.step = static_cast<std::uint64_t>(step);
          h.sample = static_cast<std::uint32_t>(sample);
          h.boundary = static_cast<std::uint16_t>(w);
          h.direction = 1;
          h.scheme = static_cast<std::uint8_t>(bw.scheme);
          auto frame = wire::encode_frame(h, serialize_payload(payload));
          rep.bytes_bw = frame.size() - wire::kHeaderBytes;
          bwd_ch[w - 1].push(std::move(frame));
        }
        axpy(-cfg_.gamma, g.param_grad, stage.params);

        rep.first_visit = first_visit;
        report_ch.push(rep);
      }
      final_params[w] = stage.params;
    };

    std::vector<std::thread> threads;
    threads.reserve(k_);
    for (int w = 0; w < k_; ++w) threads.emplace_back(worker_fn, w);

    RunResult out;
    RngStream srng(cfg_.seed, stream_id::kSampling);
    SampleSchedule schedule(cfg_.sampling, data_->size(), &srng);
    bool corrupted = false;
    for (long t = 0; t < total && !corrupted; ++t) {
      const int sample = schedule.next(t);
      start_ch.push({t, sample});

      StepMetrics m;
      m.step = t;
      m.epoch = static_cast<int>(t / data_->size());
      m.sample = sample;
      std::vector<std::uint64_t> send_digest(k_ - 1, 0), recv_digest(k_ - 1, 0);
      std::vector<double> grad_sq(k_, 0.0);
      for (int r = 0; r < k_; ++r) {
        const WorkerReport rep = report_ch.pop();
        m.bytes_fw += rep.bytes_fw;
        m.bytes_bw += rep.bytes_bw;
        m.first_visit = m.first_visit || rep.first_visit;
        grad_sq[rep.worker] = rep.grad_sq;
        if (rep.worker == k_ - 1) m.loss = rep.loss;
        if (rep.has_send_digest) send_digest[rep.worker] = rep.send_digest;
        if (rep.has_recv_digest) recv_digest[rep.worker - 1] = rep.recv_digest;
      }
      // Reduce in the reference engine's backward order so the value is
      // bit-identical to the single-threaded trajectory.
      double gsq = 0.0;
      for (int i = k_ - 1; i >= 0; --i) gsq += grad_sq[i];
      m.grad_norm = std::sqrt(gsq);
      if (cfg_.mode == Mode::AQSGD) {
        for (int b = 0; b < k_ - 1; ++b) {
          if (send_digest[b] != recv_digest[b]) corrupted = true;
        }
      }
      out.total_bytes_fw += m.bytes_fw;
      out.total_bytes_bw += m.bytes_bw;
      out.final_loss = m.loss;
      out.steps_run = t + 1;
      const bool bad = !std::isfinite(m.loss) || m.loss > cfg_.divergence_threshold;
      out.metrics.push_back(std::move(m));
      if (bad) {
        out.diverged = true;
        break;
      }
    }
    start_ch.push({-1, -1});
    for (auto& th : threads) th.join();
    require(!corrupted, "worker mode: buffer copies diverged (protocol corruption)");

    for (const auto& p : final_params)
      out.final_params.insert(out.final_params.end(), p.begin(), p.end());
    return out;
  }

 private:
  PipelineModel model_;
  const Dataset* data_;
  TrainConfig cfg_;
  int k_;
};

}  // namespace aqsgd
