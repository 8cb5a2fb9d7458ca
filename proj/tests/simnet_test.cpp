#include <gtest/gtest.h>

#include "aqsgd/simnet.hpp"
#include "aqsgd/verify.hpp"

using namespace aqsgd;

TEST(TransferTime, ZeroBytesZeroLatency) {
  EXPECT_EQ(transfer_time(0, LinkSpec{1e8, 0.0}), 0.0);
}

TEST(TransferTime, BandwidthDelay) {
  // 1.25e6 bytes = 1e7 bits over 1e8 bps -> 0.1 s.
  EXPECT_DOUBLE_EQ(transfer_time(1250000, LinkSpec{1e8, 0.0}), 0.1);
}

TEST(TransferTime, HalvingBandwidthDoublesTime) {
  const double t1 = transfer_time(4096, LinkSpec{2e8, 0.0});
  const double t2 = transfer_time(4096, LinkSpec{1e8, 0.0});
  EXPECT_DOUBLE_EQ(t2, 2.0 * t1);
}

TEST(EpochTime, SingleStageHasNoCommunication) {
  PipelinePreset p;
  p.name = "k1";
  p.stages = 1;
  p.micro_batches = 10;
  p.costs = {StageCost{0.01, 0.02, 0.0, 0.0}};
  const auto slow = epoch_time(p, LinkSpec{1.0, 0.0}, SimCompression::raw(),
                               SimCompression::raw(), false);
  // 10 * (0.01 + 0.02), independent of the (useless) link.
  EXPECT_NEAR(slow.seconds, 0.3, 1e-12);
}

TEST(EpochTime, InfiniteBandwidthIsComputeBound) {
  const PipelinePreset p = gpt2xl_8stage_preset();
  const auto fast = epoch_time(p, LinkSpec{1e18, 0.0}, SimCompression::raw(),
                               SimCompression::raw(), false);
  double compute = 0.0;
  for (const auto& c : p.costs) compute += c.forward_s + c.backward_s;
  compute += (p.micro_batches - 1) * (0.044 + 0.088);
  EXPECT_NEAR(fast.seconds, compute, 1e-6);
}

TEST(EpochTime, MoreMicroBatchesStrictlySlower) {
  PipelinePreset p = gpt2xl_8stage_preset();
  const LinkSpec link{1e9, 0.0};
  const double t1 =
      epoch_time(p, link, SimCompression::quantized(4), SimCompression::quantized(8), true)
          .seconds;
  p.micro_batches *= 2;
  const double t2 =
      epoch_time(p, link, SimCompression::quantized(4), SimCompression::quantized(8), true)
          .seconds;
  EXPECT_GT(t2, t1);
}

TEST(EpochTime, CompressionDominatesRaw32) {
  // For payloads of at least a few elements the quantized encoding is never
  // larger than raw 32-bit, so epoch time can only improve.
  PipelinePreset p;
  p.stages = 4;
  p.micro_batches = 8;
  p.costs.assign(4, StageCost{0.01, 0.02, 0.0, 0.0});
  for (std::size_t elems : {64ul, 1024ul, 1000000ul}) {
    p.payload_elems.assign(3, elems);
    for (double bw : {1e7, 1e8, 1e10}) {
      const LinkSpec link{bw, 0.0};
      const double raw =
          epoch_time(p, link, SimCompression::raw(), SimCompression::raw(), false).seconds;
      for (int bits : {1, 2, 4, 8, 16}) {
        const double q = epoch_time(p, link, SimCompression::quantized(bits),
                                    SimCompression::quantized(bits), false)
                             .seconds;
        ASSERT_LE(q, raw);
      }
    }
  }
}

TEST(EpochTime, BufferFetchHiddenBehindCompute) {
  const PipelinePreset p = gpt2xl_8stage_preset();
  const LinkSpec link{1e9, 0.0};
  // 12 ms fetch < 44 ms compute: delta-buffered and bufferless runs cost
  // the same.
  const double with = epoch_time(p, link, SimCompression::quantized(4),
                                 SimCompression::quantized(8), true)
                          .seconds;
  const double without = epoch_time(p, link, SimCompression::quantized(4),
                                    SimCompression::quantized(8), false)
                             .seconds;
  EXPECT_DOUBLE_EQ(with, without);

  // A slow fetch that exceeds compute must surface in the schedule.
  PipelinePreset slow_fetch = p;
  for (auto& c : slow_fetch.costs) c.buffer_fetch_s = 0.1;
  const double exposed = epoch_time(slow_fetch, link, SimCompression::quantized(4),
                                    SimCompression::quantized(8), true)
                             .seconds;
  EXPECT_GT(exposed, with);
}

TEST(Simnet, RatioBandsAndMonotonicity) {
  const CheckResult r = check_simnet_bands();
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Simnet, SweepRowsCoverModes) {
  const auto rows = bandwidth_sweep(gpt2xl_8stage_preset(), {1e8, 1e9}, 4, 8);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].mode, "fp32");
  EXPECT_EQ(rows[1].mode, "directq");
  EXPECT_EQ(rows[2].mode, "aqsgd");
  // The cost model treats the two compressed modes identically when the
  // buffer traffic hides behind compute.
  EXPECT_DOUBLE_EQ(rows[1].samples_per_sec, rows[2].samples_per_sec);
}
