#pragma once

// Deterministic counter-based random streams (Philox4x32-10).
//
// Every random draw in the project comes from an RngStream identified by
// (seed, stream id). The generator is counter-based: draw number n of stream
// (seed, sid) is a pure function of (seed, sid, n), so trajectories are
// bit-reproducible across runs, platforms, and the single-threaded /
// K-worker execution modes. Streams are single-owner; when two endpoints
// must produce the same draws (buffer re-encoding), each owns its own clone.
//
// Stream id layout (one independent stream per consumer):
//   0                 model parameter init
//   1                 sample scheduling (shuffles / with-replacement draws)
//   2                 dataset generation
//   16 + i            forward quantizer at boundary i   (i = 1..K-1)
//   48 + i            backward quantizer at boundary i
//   80 + i            buffer re-encoding at boundary i (cloned on both sides)
//   255               measurement scratch (never touches protocol streams)

#include <array>
#include <cmath>
#include <cstdint>

namespace aqsgd {

namespace stream_id {
inline constexpr std::uint32_t kInit = 0;
inline constexpr std::uint32_t kSampling = 1;
inline constexpr std::uint32_t kDataset = 2;
inline std::uint32_t quantize_fw(int boundary) { return 16 + static_cast<std::uint32_t>(boundary); }
inline std::uint32_t quantize_bw(int boundary) { return 48 + static_cast<std::uint32_t>(boundary); }
inline std::uint32_t buffer_reencode(int boundary) { return 80 + static_cast<std::uint32_t>(boundary); }
}  // namespace stream_id

class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint32_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint32_t stream() const { return stream_; }

  // Index of the next 64-bit draw; (seed, stream, counter) fully determine
  // all future output, so snapshot/restore is just this value.
  std::uint64_t counter() const { return counter_; }

  RngStream clone_at(std::uint64_t counter) const {
    RngStream s(seed_, stream_);
    s.counter_ = counter;
    return s;
  }

  std::uint64_t next_u64() {
    const std::uint64_t n = counter_++;
    // One Philox block yields four 32-bit words; lanes 0/1 make draw 2k,
    // lanes 2/3 make draw 2k+1.
    const Block b = philox_block(n >> 1);
    if ((n & 1) == 0) {
      return static_cast<std::uint64_t>(b[0]) | (static_cast<std::uint64_t>(b[1]) << 32);
    }
    return static_cast<std::uint64_t>(b[2]) | (static_cast<std::uint64_t>(b[3]) << 32);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. Consumes exactly two uniforms per call
  // (the sibling value is discarded) so the draw count stays predictable.
  double next_gaussian() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n), n > 0. Uses 64-bit rejection-free scaling;
  // bias is < 2^-53 per draw, negligible for scheduling purposes, and the
  // result is still a pure function of (seed, stream, counter).
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(next_double() * static_cast<double>(n)) % n;
  }

 private:
  using Block = std::array<std::uint32_t, 4>;

  static void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
  }

  Block philox_block(std::uint64_t block_index) const {
    std::uint32_t c0 = static_cast<std::uint32_t>(block_index);
    std::uint32_t c1 = static_cast<std::uint32_t>(block_index >> 32);
    std::uint32_t c2 = stream_;
    std::uint32_t c3 = 0x5eed1e55u;
    std::uint32_t k0 = static_cast<std::uint32_t>(seed_);
    std::uint32_t k1 = static_cast<std::uint32_t>(seed_ >> 32);
    for (int round = 0; round < 10; ++round) {
      std::uint32_t hi0, lo0, hi1, lo1;
      mulhilo(0xD2511F53u, c0, hi0, lo0);
      mulhilo(0xCD9E8D57u, c2, hi1, lo1);
      const std::uint32_t n0 = hi1 ^ c1 ^ k0;
      const std::uint32_t n1 = lo1;
      const std::uint32_t n2 = hi0 ^ c3 ^ k1;
      const std::uint32_t n3 = lo0;
      c0 = n0; c1 = n1; c2 = n2; c3 = n3;
      k0 += 0x9E3779B9u;
      k1 += 0xBB67AE85u;
    }
    return {c0, c1, c2, c3};
  }

  std::uint64_t seed_;
  std::uint32_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace aqsgd
