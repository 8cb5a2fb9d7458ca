#pragma once

// Analytic cost model for synchronous (GPipe-style) pipeline training under
// bandwidth/latency constraints. No real networking: pure functions of the
// cost inputs.
//
// Schedule model, per macro-batch of M micro-batches:
//   forward fill:   sum_i f'_i + sum_boundaries c_i   (first micro-batch)
//   forward steady: (M - 1) * max(max_i f'_i, max_i c_i)
//   backward: same shape with b'_i and backward payload times.
// Message transfer of one micro-batch overlaps compute of the next, hence
// the max() in the steady-state cycle. Buffer fetch/store is prefetched and
// overlapped with the stage's own compute, so it only costs the part that
// compute cannot hide: f'_i = max(f_i, fetch_i), b'_i = max(b_i, store_i).
// Buffer terms apply to the delta-buffered mode only; the baselines carry
// no buffers.

#include <cstdint>
#include <string>
#include <vector>

#include "aqsgd/common.hpp"

namespace aqsgd {

struct LinkSpec {
  double bandwidth_bps = 1e10;  // bits per second
  double latency_s = 0.0;       // one-way
};

struct StageCost {
  double forward_s = 0.0;
  double backward_s = 0.0;
  double buffer_fetch_s = 0.0;
  double buffer_store_s = 0.0;
};

// Payload compression for the cost model: raw 32-bit floats or b-bit codes
// with an 8-byte scale header.
struct SimCompression {
  bool raw32 = true;
  int bits = 0;

  static SimCompression raw() { return {true, 0}; }
  static SimCompression quantized(int b) { return {false, b}; }
};

inline std::size_t sim_payload_bytes(std::size_t elems, const SimCompression& c) {
  if (c.raw32) return 4 * elems;
  return (elems * static_cast<std::size_t>(c.bits) + 7) / 8 + 8;
}

inline double transfer_time(std::size_t bytes, const LinkSpec& link) {
  require(link.bandwidth_bps > 0.0, "simnet: bandwidth must be positive");
  if (bytes == 0) return link.latency_s;
  return link.latency_s + 8.0 * static_cast<double>(bytes) / link.bandwidth_bps;
}

struct PipelinePreset {
  std::string name;
  int stages = 1;
  int micro_batches = 1;
  std::vector<StageCost> costs;           // one per stage
  std::vector<std::size_t> payload_elems; // one per boundary (stages - 1)
};

struct EpochTime {
  double seconds = 0.0;
  double samples_per_sec = 0.0;
};

inline EpochTime epoch_time(const PipelinePreset& p, const LinkSpec& link,
                            const SimCompression& fw, const SimCompression& bw,
                            bool buffered) {
  require(p.stages >= 1, "simnet: need at least one stage");
  require(static_cast<int>(p.costs.size()) == p.stages, "simnet: cost per stage required");
  require(static_cast<int>(p.payload_elems.size()) == p.stages - 1,
          "simnet: payload per boundary required");
  require(p.micro_batches >= 1, "simnet: micro batch count must be positive");

  double fill_f = 0.0, fill_b = 0.0;
  double cycle_f = 0.0, cycle_b = 0.0;
  for (int i = 0; i < p.stages; ++i) {
    const double fetch = buffered ? p.costs[i].buffer_fetch_s : 0.0;
    const double store = buffered ? p.costs[i].buffer_store_s : 0.0;
    const double feff = std::max(p.costs[i].forward_s, fetch);
    const double beff = std::max(p.costs[i].backward_s, store);
    fill_f += feff;
    fill_b += beff;
    cycle_f = std::max(cycle_f, feff);
    cycle_b = std::max(cycle_b, beff);
  }
  for (int b = 0; b < p.stages - 1; ++b) {
    const double cf = transfer_time(sim_payload_bytes(p.payload_elems[b], fw), link);
    const double cb = transfer_time(sim_payload_bytes(p.payload_elems[b], bw), link);
    fill_f += cf;
    fill_b += cb;
    cycle_f = std::max(cycle_f, cf);
    cycle_b = std::max(cycle_b, cb);
  }
  const double m = static_cast<double>(p.micro_batches);
  EpochTime out;
  out.seconds = fill_f + fill_b + (m - 1.0) * (cycle_f + cycle_b);
  out.samples_per_sec = m / out.seconds;
  return out;
}

// Calibration preset: an 8-stage ~1.5B-parameter decoder pipeline. 44 ms
// forward per stage, backward at the usual 2x, boundary payloads of
// 1600 hidden * 1024 sequence elements per micro-batch, SSD-resident buffer
// rows (12 ms fetch/store, fully hidden behind compute).
inline PipelinePreset gpt2xl_8stage_preset() {
  PipelinePreset p;
  p.name = "gpt2xl-8stage";
  p.stages = 8;
  p.micro_batches = 64;
  p.costs.assign(8, StageCost{0.044, 0.088, 0.012, 0.012});
  p.payload_elems.assign(7, static_cast<std::size_t>(1600) * 1024);
  return p;
}

struct SweepRow {
  double bandwidth_bps = 0.0;
  std::string mode;
  int bits_fw = 0;  // 0 = raw32
  int bits_bw = 0;
  double samples_per_sec = 0.0;
};

// Bandwidth sweep for one preset across the three run modes at the given
// bit widths.
inline std::vector<SweepRow> bandwidth_sweep(const PipelinePreset& p,
                                             const std::vector<double>& bandwidths_bps,
                                             int bits_fw, int bits_bw) {
  std::vector<SweepRow> rows;
  for (double bw : bandwidths_bps) {
    const LinkSpec link{bw, 0.0};
    const auto raw = epoch_time(p, link, SimCompression::raw(), SimCompression::raw(), false);
    rows.push_back({bw, "fp32", 0, 0, raw.samples_per_sec});
    const auto dq = epoch_time(p, link, SimCompression::quantized(bits_fw),
                               SimCompression::quantized(bits_bw), false);
    rows.push_back({bw, "directq", bits_fw, bits_bw, dq.samples_per_sec});
    const auto aq = epoch_time(p, link, SimCompression::quantized(bits_fw),
                               SimCompression::quantized(bits_bw), true);
    rows.push_back({bw, "aqsgd", bits_fw, bits_bw, aq.samples_per_sec});
  }
  return rows;
}

}  // namespace aqsgd
