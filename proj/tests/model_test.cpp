#include <gtest/gtest.h>

#include "aqsgd/finite_diff.hpp"
#include "aqsgd/model.hpp"
#include "aqsgd/verify.hpp"

using namespace aqsgd;

TEST(Forward, ZeroWeightsGiveZero) {
  Stage st;
  st.layers = {dense_linear(3, 2)};
  st.params.assign(st.param_count(), 0.0);
  const Vec out = stage_forward(st, Vec{1.0, -2.0, 0.5}).output();
  EXPECT_EQ(out, Vec({0.0, 0.0}));
}

TEST(Forward, TanhAtZeroIsZero) {
  Stage st;
  st.layers = {dense_tanh(2, 2)};
  st.params.assign(st.param_count(), 0.0);
  // zero input, zero bias
  const Vec out = stage_forward(st, Vec{0.0, 0.0}).output();
  EXPECT_EQ(out, Vec({0.0, 0.0}));
}

// Independent scalar-loop reimplementation of the dense-tanh map.
TEST(Forward, MatchesNaiveLoopOracle) {
  RngStream rng(31, 1);
  for (int t = 0; t < 20; ++t) {
    const int in = 2 + static_cast<int>(rng.next_below(5));
    const int out = 2 + static_cast<int>(rng.next_below(5));
    Stage st;
    st.layers = {dense_tanh(in, out)};
    st.params.resize(st.param_count());
    for (auto& p : st.params) p = rng.next_gaussian();
    Vec x(in);
    for (auto& v : x) v = rng.next_gaussian();
    const Vec got = stage_forward(st, x).output();
    for (int j = 0; j < out; ++j) {
      double s = st.params[static_cast<std::size_t>(out) * in + j];  // bias
      for (int i = 0; i < in; ++i) s += st.params[static_cast<std::size_t>(j) * in + i] * x[i];
      const double expect = std::tanh(s);
      ASSERT_NEAR(got[j], expect, 1e-12 * std::max(1.0, std::abs(expect)));
    }
  }
}

TEST(Forward, DimensionMismatchThrows) {
  Stage st;
  st.layers = {dense_linear(3, 2)};
  st.params.assign(st.param_count(), 0.1);
  EXPECT_THROW(stage_forward(st, Vec{1.0, 2.0}), std::runtime_error);
}

TEST(Backward, ZeroUpstreamGivesZeroGrads) {
  RngStream rng(32, 1);
  Stage st;
  st.layers = {dense_tanh(3, 4)};
  st.params.resize(st.param_count());
  for (auto& p : st.params) p = rng.next_gaussian();
  const Vec x{0.3, -0.2, 0.9};
  const StageTrace tr = stage_forward(st, x);
  const StageGrads g = stage_backward(st, tr, Vec(4, 0.0));
  for (double v : g.param_grad) EXPECT_EQ(v, 0.0);
  for (double v : g.input_grad) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LossHeadAtTargetHasZeroGrad) {
  Stage st;
  st.layers = {squared_loss_head(3)};
  const Vec target{0.5, -1.0, 2.0};
  const StageTrace tr = stage_forward(st, target, target);
  EXPECT_EQ(tr.output()[0], 0.0);
  const StageGrads g = stage_backward(st, tr, Vec{1.0}, target);
  for (double v : g.input_grad) EXPECT_EQ(v, 0.0);
}

TEST(Backward, MatchesFiniteDifferences) {
  const CheckResult r = check_gradients(30);
  EXPECT_TRUE(r.pass) << r.detail;
}

// Chain rule through the whole pipeline: backprop gradient of the
// end-to-end loss equals central differences on the flattened parameters.
TEST(Backward, FullModelChainRule) {
  const std::uint64_t seed = 77;
  PipelineModel m = build_classification_2d(3, seed);
  ASSERT_LE(m.param_count(), 200u);
  Dataset data = make_dataset("classification-2d", 4, seed);
  const Vec& xi = data.samples[1];
  const Vec& target = data.targets[1];

  const ModelEval ev = model_forward(m, xi, target);
  const std::vector<Vec> grads = model_backward(m, ev, target);
  Vec flat_grad;
  for (const auto& g : grads) flat_grad.insert(flat_grad.end(), g.begin(), g.end());

  const Vec flat = flatten_params(m);
  ScalarField f = [&](const Vec& p) {
    PipelineModel m2 = m;
    unflatten_params(m2, p);
    return model_forward(m2, xi, target).loss;
  };
  const Vec fd = finite_diff_grad(f, flat, 1e-5);
  const double scale = std::max(l2_norm(fd), 1e-8);
  EXPECT_LE(l2_norm(sub(fd, flat_grad)) / scale, 1e-6);
}

TEST(Dataset, Deterministic) {
  const Dataset a = make_dataset("toy-lq", 1, 7);
  const Dataset b = make_dataset("toy-lq", 1, 7);
  ASSERT_EQ(a.samples.size(), 1u);
  EXPECT_EQ(a.samples[0], b.samples[0]);
  EXPECT_EQ(a.targets[0], b.targets[0]);
}

TEST(Dataset, RegressionShape) {
  const Dataset d = make_dataset("regression-mlp", 256, 1);
  EXPECT_EQ(d.size(), 256);
  for (const auto& s : d.samples) EXPECT_EQ(s.size(), 8u);
  for (const auto& t : d.targets) EXPECT_EQ(t.size(), 4u);
}

TEST(Dataset, SamplesInsideDeclaredBox) {
  for (const char* name : {"toy-lq", "regression-mlp", "classification-2d"}) {
    const Dataset d = make_dataset(name, 128, 3);
    for (const auto& s : d.samples)
      for (double v : s) ASSERT_LE(std::abs(v), d.input_box);
    for (const auto& t : d.targets)
      for (double v : t) ASSERT_LE(std::abs(v), d.target_box);
  }
}

TEST(Dataset, UnknownNameThrows) {
  EXPECT_THROW(make_dataset("no-such-dataset", 4, 1), std::runtime_error);
}

// The stage split must not change the composed model: same seed, same
// layer order, same parameters, same loss.
TEST(Model, StageSplitPreservesComposition) {
  const std::uint64_t seed = 5;
  const Dataset d = make_dataset("regression-mlp", 8, seed);
  PipelineModel m2 = build_regression_mlp(2, seed);
  PipelineModel m3 = build_regression_mlp(3, seed);
  PipelineModel m4 = build_regression_mlp(4, seed);
  EXPECT_EQ(flatten_params(m2), flatten_params(m4));
  EXPECT_EQ(flatten_params(m3), flatten_params(m4));
  for (int s = 0; s < d.size(); ++s) {
    const double l2 = model_forward(m2, d.samples[s], d.targets[s]).loss;
    const double l3 = model_forward(m3, d.samples[s], d.targets[s]).loss;
    const double l4 = model_forward(m4, d.samples[s], d.targets[s]).loss;
    ASSERT_EQ(double_bits(l2), double_bits(l4));
    ASSERT_EQ(double_bits(l3), double_bits(l4));
  }
}

TEST(Model, InvalidPipelinesRejected) {
  PipelineModel m;
  Stage a;
  a.layers = {dense_tanh(2, 3)};
  a.params.assign(a.param_count(), 0.0);
  Stage b;
  b.layers = {dense_linear(4, 1), squared_loss_head(1)};  // dim mismatch 3 vs 4
  b.params.assign(b.param_count(), 0.0);
  m.stages = {a, b};
  EXPECT_THROW(m.check(), std::runtime_error);
}
