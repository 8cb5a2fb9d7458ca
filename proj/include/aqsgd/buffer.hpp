#pragma once

// Per-(boundary, sample) message buffer. Both endpoints of a boundary hold
// a copy and apply identical updates, so after every completed step the two
// copies are bit-identical; digest() is the cheap equality witness.
//
// With finite buffer precision z, the stored message is re-encoded with the
// range-uniform scheme at z bits after every update. The re-encoding draw
// comes from a per-boundary stream that both endpoints clone, so the copies
// still agree bit for bit.

#include <cstdint>
#include <optional>
#include <vector>

#include "aqsgd/common.hpp"
#include "aqsgd/quantize.hpp"
#include "aqsgd/rng.hpp"

namespace aqsgd {

class ActivationBuffer {
 public:
  ActivationBuffer() = default;
  ActivationBuffer(int boundary, int dim, int num_samples, int reencode_bits)
      : boundary_(boundary),
        dim_(dim),
        reencode_bits_(reencode_bits),
        entries_(num_samples),
        visit_log_(num_samples) {}

  int boundary() const { return boundary_; }
  int dim() const { return dim_; }
  bool visited(int sample) const { return entries_[sample].has_value(); }
  int visit_count(int sample) const { return static_cast<int>(visit_log_[sample].size()); }

  const Vec& message(int sample) const {
    require(visited(sample), "buffer: no entry for sample");
    return *entries_[sample];
  }

  const std::vector<std::vector<long>>& visit_log() const { return visit_log_; }

  // First visit: store the exact activation (re-encoded if z is finite).
  const Vec& store_initial(int sample, const Vec& activation, long step, RngStream& reenc) {
    require(!visited(sample), "buffer: sample already initialized");
    require(static_cast<int>(activation.size()) == dim_, "buffer: dimension mismatch");
    entries_[sample] = reencode(activation, reenc);
    visit_log_[sample].push_back(step);
    return *entries_[sample];
  }

  // Subsequent visits: m <- m + delta, then optional re-encode. Returns the
  // stored message.
  const Vec& apply_delta(int sample, const Vec& delta, long step, RngStream& reenc) {
    require(visited(sample), "buffer: delta for unseen sample");
    require(static_cast<int>(delta.size()) == dim_, "buffer: dimension mismatch");
    entries_[sample] = reencode(add(*entries_[sample], delta), reenc);
    visit_log_[sample].push_back(step);
    return *entries_[sample];
  }

  // Lossless (identity-scheme) visit: the wire carries the value itself, so
  // m <- m + (a - m) collapses to an exact overwrite on both sides.
  const Vec& store_absolute(int sample, const Vec& value, long step, RngStream& reenc) {
    require(visited(sample), "buffer: absolute store for unseen sample");
    require(static_cast<int>(value.size()) == dim_, "buffer: dimension mismatch");
    entries_[sample] = reencode(value, reenc);
    visit_log_[sample].push_back(step);
    return *entries_[sample];
  }

  // Verbatim entry injection for replay/receiver initialization: no visit
  // log append, no re-encoding (the value is already a stored message).
  void seed_entry(int sample, const Vec& value) {
    require(static_cast<int>(value.size()) == dim_, "buffer: dimension mismatch");
    entries_[sample] = value;
  }

  // FNV-1a over entry bytes and visit counts, in sample order.
  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xFF;
        h *= 0x100000001b3ull;
      }
    };
    for (std::size_t s = 0; s < entries_.size(); ++s) {
      if (!entries_[s]) continue;
      mix(s);
      mix(static_cast<std::uint64_t>(visit_log_[s].size()));
      for (double x : *entries_[s]) mix(double_bits(x));
    }
    return h;
  }

 private:
  Vec reencode(const Vec& m, RngStream& reenc) const {
    if (reencode_bits_ <= 0) return m;
    return quantize_decode(QuantizerSpec::uniform(reencode_bits_), m, reenc);
  }

  int boundary_ = 0;
  int dim_ = 0;
  int reencode_bits_ = 0;  // 0 = full precision
  std::vector<std::optional<Vec>> entries_;
  std::vector<std::vector<long>> visit_log_;
};

}  // namespace aqsgd
