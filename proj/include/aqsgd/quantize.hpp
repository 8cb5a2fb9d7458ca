#pragma once

// Unbiased stochastic quantizers with certified relative-error constants,
// plus payload encoding and byte-size accounting.
//
// Two lossy schemes are shipped:
//
//  * L2StochasticRound: scale = ||x||_2, coordinates of x/||x|| are rounded
//    stochastically to the grid {k/2^b : k in [-2^b, 2^b]}. Per-coordinate
//    grid spacing is 1/2^b, so ||x - Q(x)|| <= (sqrt(d)/2^b)*||x|| holds for
//    every draw, not just in expectation. The symmetric grid needs code
//    values in [0, 2^(b+1)], which do not fit in b bits; codes are stored
//    offset by 2^b in (b+2)-bit fields and the byte accounting reflects that.
//
//  * RangeUniformStochastic: scale = ||x||_inf, coordinates of x/||x||_inf
//    are rounded stochastically to 2^b uniform levels -1 + 2j/(2^b - 1),
//    j in [0, 2^b). Codes are exactly b bits. Per-coordinate error is at
//    most 2*||x||_inf/(2^b - 1) for every draw. No useful L2-relative
//    constant is certified for this scheme; use empirical_cq to measure one.
//
// Both schemes split rounding probability proportionally to the distance
// between the two adjacent levels, which makes E[Q(x)] = x exactly. The zero
// vector encodes as scale 0 with all-zero codes and decodes to exact zero.
//
// Identity is the no-compression scheme: payload carries the raw 64-bit
// values (8*d bytes, no scale header).

#include <cstdint>
#include <cstring>
#include <vector>

#include "aqsgd/common.hpp"
#include "aqsgd/rng.hpp"

namespace aqsgd {

enum class Scheme : std::uint8_t {
  Identity = 0,
  L2StochasticRound = 1,
  RangeUniformStochastic = 2,
};

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::Identity: return "identity";
    case Scheme::L2StochasticRound: return "l2sr";
    case Scheme::RangeUniformStochastic: return "uniform";
  }
  return "?";
}

struct QuantizerSpec {
  Scheme scheme = Scheme::Identity;
  int bits = 8;  // ignored by Identity; valid range [1, 16]

  static QuantizerSpec identity() { return {Scheme::Identity, 0}; }
  static QuantizerSpec l2sr(int b) { return {Scheme::L2StochasticRound, b}; }
  static QuantizerSpec uniform(int b) { return {Scheme::RangeUniformStochastic, b}; }

  bool is_identity() const { return scheme == Scheme::Identity; }
};

inline void validate(const QuantizerSpec& spec) {
  if (spec.scheme == Scheme::Identity) return;
  require(spec.bits >= 1 && spec.bits <= 16, "quantizer bits must be in [1, 16]");
}

// Physical width of one packed code, in bits.
inline int code_width(const QuantizerSpec& spec) {
  switch (spec.scheme) {
    case Scheme::Identity: return 64;
    case Scheme::L2StochasticRound: return spec.bits + 2;
    case Scheme::RangeUniformStochastic: return spec.bits;
  }
  return 0;
}

struct QuantizedPayload {
  Scheme scheme = Scheme::Identity;
  int bits = 0;
  std::uint32_t dim = 0;
  double scale = 0.0;               // unused by Identity
  std::vector<std::uint32_t> codes; // unused by Identity
  Vec raw;                          // Identity only
};

// Serialized size in bytes: packed codes padded to a byte boundary plus one
// 8-byte scale header. Identity is raw 64-bit, no header.
inline std::size_t encoded_bytes(const QuantizerSpec& spec, std::size_t d) {
  if (spec.scheme == Scheme::Identity) return 8 * d;
  const std::size_t w = static_cast<std::size_t>(code_width(spec));
  return (d * w + 7) / 8 + 8;
}

// Certified relative error constant: ||x - Q(x)|| <= c_Q(d) * ||x|| for
// every draw. Only Identity (0) and L2StochasticRound (sqrt(d)/2^b) carry a
// certificate; admissibility for the convergence constants requires
// c_Q < sqrt(1/2).
inline double certified_cq(const QuantizerSpec& spec, std::size_t d) {
  switch (spec.scheme) {
    case Scheme::Identity: return 0.0;
    case Scheme::L2StochasticRound:
      return std::sqrt(static_cast<double>(d)) / static_cast<double>(1u << spec.bits);
    case Scheme::RangeUniformStochastic:
      throw std::runtime_error("certified_cq: no certificate for the range-uniform scheme");
  }
  throw std::runtime_error("certified_cq: unknown scheme");
}

inline QuantizedPayload quantize(const QuantizerSpec& spec, const Vec& x, RngStream& rng) {
  validate(spec);
  QuantizedPayload p;
  p.scheme = spec.scheme;
  p.bits = spec.bits;
  p.dim = static_cast<std::uint32_t>(x.size());

  if (spec.scheme == Scheme::Identity) {
    p.raw = x;
    return p;
  }

  p.codes.assign(x.size(), 0);
  const double norm = (spec.scheme == Scheme::L2StochasticRound) ? l2_norm(x) : linf_norm(x);
  if (norm == 0.0) {
    p.scale = 0.0;
    return p;
  }
  p.scale = norm;

  if (spec.scheme == Scheme::L2StochasticRound) {
    const double levels = static_cast<double>(1u << spec.bits);  // 2^b
    const std::int64_t offset = static_cast<std::int64_t>(1u << spec.bits);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double t = (x[i] / norm) * levels;  // in [-2^b, 2^b]
      double lo = std::floor(t);
      const double frac = t - lo;
      std::int64_t k = static_cast<std::int64_t>(lo);
      if (rng.next_double() < frac) k += 1;
      p.codes[i] = static_cast<std::uint32_t>(k + offset);
    }
  } else {
    const double half_levels = static_cast<double>((1u << spec.bits) - 1);  // 2^b - 1
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double t = (x[i] / norm + 1.0) * 0.5 * half_levels;  // in [0, 2^b - 1]
      double lo = std::floor(t);
      const double frac = t - lo;
      std::int64_t j = static_cast<std::int64_t>(lo);
      if (rng.next_double() < frac) j += 1;
      p.codes[i] = static_cast<std::uint32_t>(j);
    }
  }
  return p;
}

inline Vec dequantize(const QuantizerSpec& spec, const QuantizedPayload& p) {
  validate(spec);
  require(p.scheme == spec.scheme && p.bits == spec.bits, "dequantize: payload/spec mismatch");
  if (spec.scheme == Scheme::Identity) {
    require(p.raw.size() == p.dim, "dequantize: malformed identity payload");
    return p.raw;
  }
  require(p.codes.size() == p.dim, "dequantize: malformed payload (code count)");
  const std::uint32_t max_code = (1u << code_width(spec)) - 1u;
  Vec x(p.dim);
  if (spec.scheme == Scheme::L2StochasticRound) {
    const double levels = static_cast<double>(1u << spec.bits);
    const std::int64_t offset = static_cast<std::int64_t>(1u << spec.bits);
    for (std::size_t i = 0; i < x.size(); ++i) {
      require(p.codes[i] <= max_code, "dequantize: code exceeds declared width");
      const std::int64_t k = static_cast<std::int64_t>(p.codes[i]) - offset;
      x[i] = p.scale * (static_cast<double>(k) / levels);
    }
  } else {
    const double half_levels = static_cast<double>((1u << spec.bits) - 1);
    for (std::size_t i = 0; i < x.size(); ++i) {
      require(p.codes[i] <= max_code, "dequantize: code exceeds declared width");
      x[i] = p.scale * (-1.0 + 2.0 * static_cast<double>(p.codes[i]) / half_levels);
    }
  }
  return x;
}

// Convenience for the common quantize-then-decode round trip.
inline Vec quantize_decode(const QuantizerSpec& spec, const Vec& x, RngStream& rng) {
  if (spec.is_identity()) return x;
  const QuantizedPayload p = quantize(spec, x, rng);
  return dequantize(spec, p);
}

// Measured sup of ||x - Q(x)|| / ||x|| over random unit-scaled inputs; the
// reported stand-in for schemes without a certified constant.
inline double empirical_cq(const QuantizerSpec& spec, std::size_t d, int trials, RngStream& rng) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Vec x(d);
    for (auto& v : x) v = rng.next_gaussian();
    const double n = l2_norm(x);
    if (n == 0.0) continue;
    const Vec q = quantize_decode(spec, x, rng);
    worst = std::max(worst, l2_norm(sub(x, q)) / n);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Payload wire layout (bit-exact, used verbatim by the K-worker channels):
//   Identity:   d * 8 bytes, IEEE-754 doubles, little-endian.
//   otherwise:  8-byte little-endian double scale, then d codes of
//               code_width(spec) bits each, packed LSB-first within bytes,
//               zero-padded to a byte boundary.
// ---------------------------------------------------------------------------

inline void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t double_bits(double d) {
  std::uint64_t u;
  static_assert(sizeof(u) == sizeof(d));
  std::memcpy(&u, &d, sizeof(u));
  return u;
}

inline double bits_double(std::uint64_t u) {
  double d;
  std::memcpy(&d, &u, sizeof(d));
  return d;
}

inline std::vector<std::uint8_t> serialize_payload(const QuantizedPayload& p) {
  std::vector<std::uint8_t> out;
  if (p.scheme == Scheme::Identity) {
    out.reserve(8 * p.raw.size());
    for (double v : p.raw) put_u64_le(out, double_bits(v));
    return out;
  }
  const QuantizerSpec spec{p.scheme, p.bits};
  out.reserve(encoded_bytes(spec, p.dim));
  put_u64_le(out, double_bits(p.scale));
  const int w = code_width(spec);
  std::uint64_t acc = 0;
  int acc_bits = 0;
  for (std::uint32_t c : p.codes) {
    acc |= static_cast<std::uint64_t>(c) << acc_bits;
    acc_bits += w;
    while (acc_bits >= 8) {
      out.push_back(static_cast<std::uint8_t>(acc & 0xFF));
      acc >>= 8;
      acc_bits -= 8;
    }
  }
  if (acc_bits > 0) out.push_back(static_cast<std::uint8_t>(acc & 0xFF));
  return out;
}

inline QuantizedPayload deserialize_payload(const QuantizerSpec& spec, std::uint32_t dim,
                                            const std::uint8_t* data, std::size_t len) {
  QuantizedPayload p;
  p.scheme = spec.scheme;
  p.bits = spec.bits;
  p.dim = dim;
  require(len == encoded_bytes(spec, dim), "payload: unexpected byte length");
  if (spec.scheme == Scheme::Identity) {
    p.raw.resize(dim);
    for (std::uint32_t i = 0; i < dim; ++i) p.raw[i] = bits_double(get_u64_le(data + 8 * i));
    return p;
  }
  p.scale = bits_double(get_u64_le(data));
  const int w = code_width(spec);
  const std::uint32_t mask = (w == 32) ? 0xFFFFFFFFu : ((1u << w) - 1u);
  p.codes.resize(dim);
  std::size_t pos = 8;
  std::uint64_t acc = 0;
  int acc_bits = 0;
  for (std::uint32_t i = 0; i < dim; ++i) {
    while (acc_bits < w) {
      require(pos < len, "payload: truncated code section");
      acc |= static_cast<std::uint64_t>(data[pos++]) << acc_bits;
      acc_bits += 8;
    }
    p.codes[i] = static_cast<std::uint32_t>(acc & mask);
    acc >>= w;
    acc_bits -= w;
  }
  return p;
}

}  // namespace aqsgd
