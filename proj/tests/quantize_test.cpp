#include <gtest/gtest.h>

#include "aqsgd/quantize.hpp"
#include "aqsgd/verify.hpp"

using namespace aqsgd;

TEST(Quantize, ZeroVectorDecodesToExactZero) {
  RngStream rng(1, 20);
  for (auto spec : {QuantizerSpec::identity(), QuantizerSpec::l2sr(4), QuantizerSpec::uniform(4)}) {
    const Vec x(8, 0.0);
    const Vec q = quantize_decode(spec, x, rng);
    for (double v : q) EXPECT_EQ(v, 0.0);
  }
}

TEST(Quantize, RepresentableVectorsAreExact) {
  RngStream rng(2, 20);
  // L2 scheme: x/||x|| on the k/2^b grid makes every coordinate land on a
  // code point, so the stochastic round is deterministic and exact.
  // (8,8,-8,8)/16 has unit norm and sits on the b=4 grid.
  const int b = 4;
  for (double c : {1.0, 2.5, 0.125}) {
    const Vec x{0.5 * c, 0.5 * c, -0.5 * c, 0.5 * c};
    for (int t = 0; t < 50; ++t) {
      const Vec q = quantize_decode(QuantizerSpec::l2sr(b), x, rng);
      for (std::size_t i = 0; i < x.size(); ++i) {
        ASSERT_NEAR(q[i], x[i], 1e-15 * c);
      }
    }
  }
}

TEST(Quantize, UniformEndpointsExact) {
  RngStream rng(3, 20);
  // +-||x||_inf are grid levels for the range-uniform scheme, so a vector
  // whose coordinates sit on the level set round-trips exactly.
  const int b = 3;
  const double levels = static_cast<double>((1 << b) - 1);
  Vec x;
  for (int j = 0; j < (1 << b); ++j) x.push_back(-1.0 + 2.0 * j / levels);
  const Vec q = quantize_decode(QuantizerSpec::uniform(b), x, rng);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(q[i], x[i], 1e-15);
}

TEST(Quantize, IdentityIsBitwise) {
  RngStream rng(4, 20);
  Vec x{1.5, -2.25, 3.125, 0.0};
  const QuantizedPayload p = quantize(QuantizerSpec::identity(), x, rng);
  const Vec q = dequantize(QuantizerSpec::identity(), p);
  EXPECT_EQ(q, x);
}

TEST(Quantize, AllZeroCodesDecodeToMinimumLevel) {
  QuantizedPayload p;
  p.scheme = Scheme::RangeUniformStochastic;
  p.bits = 4;
  p.dim = 3;
  p.scale = 2.0;
  p.codes = {0, 0, 0};
  const Vec v = dequantize(QuantizerSpec::uniform(4), p);
  for (double c : v) EXPECT_EQ(c, -2.0);  // scale * (-1)

  QuantizedPayload p2;
  p2.scheme = Scheme::L2StochasticRound;
  p2.bits = 4;
  p2.dim = 2;
  p2.scale = 3.0;
  p2.codes = {0, 0};
  const Vec v2 = dequantize(QuantizerSpec::l2sr(4), p2);
  for (double c : v2) EXPECT_EQ(c, -3.0);  // scale * (-2^b / 2^b)
}

TEST(Quantize, DeterministicBoundL2) {
  // d = 16, b = 4: sqrt(16)/2^4 = 0.25, and the bound holds for every draw.
  RngStream gen(5, 20), draw(5, 21);
  const QuantizerSpec spec = QuantizerSpec::l2sr(4);
  EXPECT_DOUBLE_EQ(certified_cq(spec, 16), 0.25);
  Vec x(16);
  for (auto& v : x) v = gen.next_gaussian();
  const double nx = l2_norm(x);
  for (int t = 0; t < 10000; ++t) {
    const Vec q = quantize_decode(spec, x, draw);
    ASSERT_LE(l2_norm(sub(x, q)), 0.25 * nx);
  }
}

TEST(Quantize, UniformPerCoordinateBound) {
  RngStream gen(6, 20), draw(6, 21);
  for (int t = 0; t < 1000; ++t) {
    const int b = 1 + static_cast<int>(gen.next_below(8));
    const QuantizerSpec spec = QuantizerSpec::uniform(b);
    Vec x(8);
    for (auto& v : x) v = gen.next_gaussian();
    const double step = 2.0 * linf_norm(x) / static_cast<double>((1 << b) - 1);
    const Vec q = quantize_decode(spec, x, draw);
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_LE(std::abs(x[i] - q[i]), step + 1e-12);
  }
}

TEST(Quantize, UnbiasednessMonteCarlo) {
  RngStream gen(7, 20), draw(7, 21);
  const QuantizerSpec spec = QuantizerSpec::l2sr(4);
  Vec x(16);
  for (auto& v : x) v = gen.next_gaussian();
  const int n = 100000;
  Vec sum(16, 0.0), sumsq(16, 0.0);
  for (int t = 0; t < n; ++t) {
    const Vec q = quantize_decode(spec, x, draw);
    for (int i = 0; i < 16; ++i) {
      sum[i] += q[i];
      sumsq[i] += q[i] * q[i];
    }
  }
  for (int i = 0; i < 16; ++i) {
    const double mean = sum[i] / n;
    const double var = std::max(0.0, sumsq[i] / n - mean * mean);
    const double se = std::sqrt(var / n);
    EXPECT_LE(std::abs(mean - x[i]), 4.0 * std::max(se, 1e-15));
  }
}

TEST(Quantize, UnbiasednessCheckRejectsBiasedDouble) {
  // Negative control: a floor-based (biased-down) rounding must fail the
  // Monte-Carlo unbiasedness check.
  QuantizeFn biased = [](const QuantizerSpec& spec, const Vec& x, RngStream&) {
    const double norm = linf_norm(x);
    if (norm == 0.0) return x;
    const double half = static_cast<double>((1 << spec.bits) - 1);
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double t = std::floor((x[i] / norm + 1.0) * 0.5 * half);
      out[i] = norm * (-1.0 + 2.0 * t / half);
    }
    return out;
  };
  const CheckResult r = check_unbiasedness(biased, /*draws=*/2000, /*vectors=*/2);
  EXPECT_FALSE(r.pass);
}

TEST(Quantize, ScaleEquivariance) {
  RngStream gen(8, 20);
  for (auto scheme : {Scheme::L2StochasticRound, Scheme::RangeUniformStochastic}) {
    for (int t = 0; t < 200; ++t) {
      const QuantizerSpec spec{scheme, 4};
      Vec x(12);
      for (auto& v : x) v = gen.next_gaussian();
      const double c = std::exp(gen.next_uniform(-2.0, 2.0));
      RngStream d1(77, 30), d2(77, 30);  // identical draws
      const QuantizedPayload p1 = quantize(spec, x, d1);
      const QuantizedPayload p2 = quantize(spec, scaled(x, c), d2);
      ASSERT_EQ(p1.codes, p2.codes);
      ASSERT_NEAR(p2.scale, c * p1.scale, 1e-12 * std::abs(c * p1.scale));
    }
  }
}

TEST(Quantize, CertifiedCq) {
  EXPECT_EQ(certified_cq(QuantizerSpec::identity(), 1000), 0.0);
  EXPECT_DOUBLE_EQ(certified_cq(QuantizerSpec::l2sr(4), 16), 0.25);
  EXPECT_LT(certified_cq(QuantizerSpec::l2sr(4), 16), std::sqrt(0.5));
  EXPECT_THROW(certified_cq(QuantizerSpec::uniform(4), 16), std::runtime_error);
}

TEST(Quantize, EncodedBytes) {
  EXPECT_EQ(encoded_bytes(QuantizerSpec::uniform(4), 1024), 520u);
  EXPECT_EQ(encoded_bytes(QuantizerSpec::identity(), 1024), 8192u);
  EXPECT_EQ(encoded_bytes(QuantizerSpec::uniform(1), 1), 9u);
  // The certified scheme needs b+2 bits per code for its symmetric grid.
  EXPECT_EQ(encoded_bytes(QuantizerSpec::l2sr(4), 16), 20u);
}

TEST(Quantize, WireRoundTripIsExact) {
  RngStream gen(9, 20), draw(9, 21);
  for (auto spec : {QuantizerSpec::identity(), QuantizerSpec::l2sr(3), QuantizerSpec::l2sr(11),
                    QuantizerSpec::uniform(1), QuantizerSpec::uniform(7),
                    QuantizerSpec::uniform(16)}) {
    for (int t = 0; t < 50; ++t) {
      const std::size_t d = 1 + gen.next_below(40);
      Vec x(d);
      for (auto& v : x) v = gen.next_gaussian();
      const QuantizedPayload p = quantize(spec, x, draw);
      const auto bytes = serialize_payload(p);
      ASSERT_EQ(bytes.size(), encoded_bytes(spec, d));
      const QuantizedPayload back =
          deserialize_payload(spec, static_cast<std::uint32_t>(d), bytes.data(), bytes.size());
      ASSERT_EQ(back.codes, p.codes);
      ASSERT_EQ(double_bits(back.scale), double_bits(p.scale));
      ASSERT_EQ(dequantize(spec, back), dequantize(spec, p));
    }
  }
}

TEST(Quantize, MalformedPayloadRejected) {
  QuantizedPayload p;
  p.scheme = Scheme::RangeUniformStochastic;
  p.bits = 2;
  p.dim = 2;
  p.scale = 1.0;
  p.codes = {5, 0};  // 5 does not fit in 2 bits
  EXPECT_THROW(dequantize(QuantizerSpec::uniform(2), p), std::runtime_error);
  std::vector<std::uint8_t> short_buf(3, 0);
  EXPECT_THROW(deserialize_payload(QuantizerSpec::uniform(2), 2, short_buf.data(), 3),
               std::runtime_error);
}

TEST(Quantize, RoundTripBoundsHoldOverRandomVectors) {
  RngStream gen(10, 20), draw(10, 21);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = 1 + gen.next_below(32);
    const int b = 2 + static_cast<int>(gen.next_below(6));
    Vec x(d);
    for (auto& v : x) v = gen.next_gaussian();
    const Vec ql = quantize_decode(QuantizerSpec::l2sr(b), x, draw);
    ASSERT_LE(l2_norm(sub(x, ql)), certified_cq(QuantizerSpec::l2sr(b), d) * l2_norm(x) + 1e-12);
    const Vec qu = quantize_decode(QuantizerSpec::uniform(b), x, draw);
    const double step = 2.0 * linf_norm(x) / static_cast<double>((1 << b) - 1);
    for (std::size_t i = 0; i < d; ++i) ASSERT_LE(std::abs(x[i] - qu[i]), step + 1e-12);
  }
}

TEST(Quantize, EmpiricalCqReportsSaneValue) {
  RngStream rng(11, 20);
  const double e = empirical_cq(QuantizerSpec::uniform(4), 32, 200, rng);
  EXPECT_GT(e, 0.0);
  EXPECT_LT(e, 1.0);
}
