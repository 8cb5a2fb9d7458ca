#pragma once

// Splittable differentiable models with hand-written forward/backward.
//
// A pipeline model is an ordered list of stages; each stage is a short chain
// of layers over a flat parameter vector. The last stage ends in a squared
// loss head, so "stage K" maps its input straight to the scalar objective.
// Backward passes are exact analytic Jacobian-vector products; the
// finite-difference oracle in the tests is the independent check.
//
// Only smooth activations (tanh, linear) are used: the error analysis needs
// Lipschitz gradients, which ReLU does not have.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "aqsgd/common.hpp"
#include "aqsgd/rng.hpp"

namespace aqsgd {

enum class LayerKind {
  DenseTanh,
  DenseLinear,
  DiagLinear,       // elementwise gain, params = dim values
  SquaredLossHead,  // 0.5 * ||input - target||^2, no params
};

struct Layer {
  LayerKind kind;
  int in = 0;
  int out = 0;
  bool bias = true;  // dense layers only

  std::size_t param_count() const {
    switch (kind) {
      case LayerKind::DenseTanh:
      case LayerKind::DenseLinear:
        return static_cast<std::size_t>(out) * in + (bias ? out : 0);
      case LayerKind::DiagLinear:
        return static_cast<std::size_t>(in);
      case LayerKind::SquaredLossHead:
        return 0;
    }
    return 0;
  }
};

inline Layer dense_tanh(int in, int out) { return {LayerKind::DenseTanh, in, out, true}; }
inline Layer dense_linear(int in, int out, bool bias = true) {
  return {LayerKind::DenseLinear, in, out, bias};
}
inline Layer diag_linear(int dim) { return {LayerKind::DiagLinear, dim, dim, false}; }
inline Layer squared_loss_head(int dim) { return {LayerKind::SquaredLossHead, dim, 1, false}; }

struct Stage {
  std::vector<Layer> layers;
  Vec params;

  int input_dim() const { return layers.front().in; }
  int output_dim() const { return layers.back().out; }
  bool has_loss_head() const { return layers.back().kind == LayerKind::SquaredLossHead; }
  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
  }
};

// Per-layer inputs/outputs captured during forward, consumed by backward.
struct StageTrace {
  std::vector<Vec> inputs;
  std::vector<Vec> outputs;
  Vec output() const { return outputs.back(); }
};

struct StageGrads {
  Vec param_grad;
  Vec input_grad;
};

namespace detail {

inline Vec layer_forward(const Layer& l, const double* p, const Vec& x, const Vec& target) {
  require(static_cast<int>(x.size()) == l.in, "layer forward: input dimension mismatch");
  switch (l.kind) {
    case LayerKind::DenseTanh:
    case LayerKind::DenseLinear: {
      Vec y(l.out, 0.0);
      for (int j = 0; j < l.out; ++j) {
        double s = l.bias ? p[static_cast<std::size_t>(l.out) * l.in + j] : 0.0;
        const double* row = p + static_cast<std::size_t>(j) * l.in;
        for (int i = 0; i < l.in; ++i) s += row[i] * x[i];
        y[j] = (l.kind == LayerKind::DenseTanh) ? std::tanh(s) : s;
      }
      return y;
    }
    case LayerKind::DiagLinear: {
      Vec y(l.in);
      for (int i = 0; i < l.in; ++i) y[i] = p[i] * x[i];
      return y;
    }
    case LayerKind::SquaredLossHead: {
      require(target.size() == x.size(), "loss head: target dimension mismatch");
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = x[i] - target[i];
        s += r * r;
      }
      return Vec{0.5 * s};
    }
  }
  return {};
}

// Returns input_grad; accumulates the layer's parameter gradient into gp.
inline Vec layer_backward(const Layer& l, const double* p, double* gp, const Vec& x,
                          const Vec& y, const Vec& target, const Vec& up) {
  require(static_cast<int>(up.size()) == l.out, "layer backward: upstream dimension mismatch");
  switch (l.kind) {
    case LayerKind::DenseTanh:
    case LayerKind::DenseLinear: {
      Vec gx(l.in, 0.0);
      for (int j = 0; j < l.out; ++j) {
        const double dpre = (l.kind == LayerKind::DenseTanh) ? up[j] * (1.0 - y[j] * y[j]) : up[j];
        const double* row = p + static_cast<std::size_t>(j) * l.in;
        double* grow = gp + static_cast<std::size_t>(j) * l.in;
        for (int i = 0; i < l.in; ++i) {
          grow[i] += dpre * x[i];
          gx[i] += row[i] * dpre;
        }
        if (l.bias) gp[static_cast<std::size_t>(l.out) * l.in + j] += dpre;
      }
      return gx;
    }
    case LayerKind::DiagLinear: {
      Vec gx(l.in);
      for (int i = 0; i < l.in; ++i) {
        gp[i] += up[i] * x[i];
        gx[i] = p[i] * up[i];
      }
      return gx;
    }
    case LayerKind::SquaredLossHead: {
      Vec gx(l.in);
      for (int i = 0; i < l.in; ++i) gx[i] = up[0] * (x[i] - target[i]);
      return gx;
    }
  }
  return {};
}

}  // namespace detail

inline StageTrace stage_forward(const Stage& st, const Vec& input, const Vec& target = {}) {
  StageTrace tr;
  tr.inputs.reserve(st.layers.size());
  tr.outputs.reserve(st.layers.size());
  const double* p = st.params.data();
  Vec cur = input;
  for (const auto& l : st.layers) {
    tr.inputs.push_back(cur);
    Vec next = detail::layer_forward(l, p, cur, target);
    tr.outputs.push_back(next);
    cur = std::move(next);
    p += l.param_count();
  }
  return tr;
}

inline StageGrads stage_backward(const Stage& st, const StageTrace& tr, const Vec& upstream,
                                 const Vec& target = {}) {
  StageGrads g;
  g.param_grad.assign(st.params.size(), 0.0);
  Vec up = upstream;
  std::size_t poff = st.param_count();
  for (std::size_t li = st.layers.size(); li-- > 0;) {
    const Layer& l = st.layers[li];
    poff -= l.param_count();
    up = detail::layer_backward(l, st.params.data() + poff, g.param_grad.data() + poff,
                                tr.inputs[li], tr.outputs[li], target, up);
  }
  g.input_grad = std::move(up);
  return g;
}

struct PipelineModel {
  std::vector<Stage> stages;

  int num_stages() const { return static_cast<int>(stages.size()); }
  int input_dim() const { return stages.front().input_dim(); }

  // Dimension of the activation crossing boundary i (1-based, i in [1, K-1]).
  std::vector<int> boundary_dims() const {
    std::vector<int> d;
    for (std::size_t i = 0; i + 1 < stages.size(); ++i) d.push_back(stages[i].output_dim());
    return d;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.param_count();
    return n;
  }

  void check() const {
    require(stages.size() >= 2, "pipeline needs at least two stages");
    require(stages.back().has_loss_head(), "last stage must end in a loss head");
    for (std::size_t i = 0; i + 1 < stages.size(); ++i) {
      require(!stages[i].has_loss_head(), "loss head only allowed in the last stage");
      require(stages[i].output_dim() == stages[i + 1].input_dim(),
              "adjacent stage dimensions incompatible");
    }
  }
};

// Uncompressed end-to-end evaluation; the reference path for plain SGD,
// shadow passes and gradient checks.
struct ModelEval {
  std::vector<StageTrace> traces;
  double loss = 0.0;
};

inline ModelEval model_forward(const PipelineModel& m, const Vec& input, const Vec& target) {
  ModelEval ev;
  ev.traces.reserve(m.stages.size());
  Vec cur = input;
  for (const auto& st : m.stages) {
    ev.traces.push_back(stage_forward(st, cur, target));
    cur = ev.traces.back().output();
  }
  ev.loss = cur[0];
  return ev;
}

// Full backward chain; grads[i] is stage i's parameter gradient.
inline std::vector<Vec> model_backward(const PipelineModel& m, const ModelEval& ev,
                                       const Vec& target) {
  std::vector<Vec> grads(m.stages.size());
  Vec up{1.0};
  for (std::size_t i = m.stages.size(); i-- > 0;) {
    StageGrads g = stage_backward(m.stages[i], ev.traces[i], up, target);
    grads[i] = std::move(g.param_grad);
    up = std::move(g.input_grad);
  }
  return grads;
}

inline Vec flatten_params(const PipelineModel& m) {
  Vec out;
  for (const auto& s : m.stages) out.insert(out.end(), s.params.begin(), s.params.end());
  return out;
}

inline void unflatten_params(PipelineModel& m, const Vec& flat) {
  std::size_t off = 0;
  for (auto& s : m.stages) {
    require(off + s.params.size() <= flat.size(), "unflatten: size mismatch");
    std::copy(flat.begin() + off, flat.begin() + off + s.params.size(), s.params.begin());
    off += s.params.size();
  }
  require(off == flat.size(), "unflatten: size mismatch");
}

// ---------------------------------------------------------------------------
// Datasets. Regenerable bit-exactly from (name, N, seed).
// ---------------------------------------------------------------------------

struct Dataset {
  std::string name;
  std::vector<Vec> samples;
  std::vector<Vec> targets;
  double input_box = 0.0;   // declared bound on |sample coordinate|
  double target_box = 0.0;  // declared bound on |target coordinate|

  int size() const { return static_cast<int>(samples.size()); }
  double max_sample_norm() const {
    double m = 0.0;
    for (const auto& s : samples) m = std::max(m, l2_norm(s));
    return m;
  }
  double max_target_norm() const {
    double m = 0.0;
    for (const auto& t : targets) m = std::max(m, l2_norm(t));
    return m;
  }
};

namespace dataset_dims {
inline constexpr int kRegressionIn = 8;
inline constexpr int kRegressionOut = 4;
inline constexpr int kToyIn = 4;
inline constexpr int kToyHidden = 4;
}  // namespace dataset_dims

inline Dataset make_dataset(const std::string& name, int n, std::uint64_t seed) {
  require(n >= 1, "dataset: N must be >= 1");
  RngStream rng(seed, stream_id::kDataset);
  Dataset d;
  d.name = name;
  if (name == "toy-lq") {
    d.input_box = 1.0;
    d.target_box = 1.0;
    for (int s = 0; s < n; ++s) {
      Vec x(dataset_dims::kToyIn), y(dataset_dims::kToyHidden);
      for (auto& v : x) v = rng.next_uniform(-1.0, 1.0);
      for (auto& v : y) v = rng.next_uniform(-1.0, 1.0);
      d.samples.push_back(std::move(x));
      d.targets.push_back(std::move(y));
    }
  } else if (name == "regression-mlp") {
    // Teacher-generated smooth regression targets, bounded by construction.
    d.input_box = 1.0;
    d.target_box = 0.9;
    const int in = dataset_dims::kRegressionIn;
    const int hid = 12;
    const int out = dataset_dims::kRegressionOut;
    Mat w1(hid, in), w2(out, hid);
    for (auto& v : w1.a) v = rng.next_uniform(-0.8, 0.8);
    for (auto& v : w2.a) v = rng.next_uniform(-0.8, 0.8);
    for (int s = 0; s < n; ++s) {
      Vec x(in);
      for (auto& v : x) v = rng.next_uniform(-1.0, 1.0);
      Vec h(hid, 0.0);
      for (int j = 0; j < hid; ++j) {
        double acc = 0.0;
        for (int i = 0; i < in; ++i) acc += w1(j, i) * x[i];
        h[j] = std::tanh(acc);
      }
      Vec y(out, 0.0);
      for (int j = 0; j < out; ++j) {
        double acc = 0.0;
        for (int i = 0; i < hid; ++i) acc += w2(j, i) * h[i];
        y[j] = 0.9 * std::tanh(acc);
      }
      d.samples.push_back(std::move(x));
      d.targets.push_back(std::move(y));
    }
  } else if (name == "classification-2d") {
    // Two Gaussian blobs, one-hot targets under the squared loss.
    d.input_box = 2.5;
    d.target_box = 1.0;
    for (int s = 0; s < n; ++s) {
      const int label = (rng.next_double() < 0.5) ? 0 : 1;
      const double cx = label == 0 ? -0.6 : 0.6;
      Vec x(2);
      for (auto& v : x) v = cx + 0.25 * rng.next_gaussian();
      for (auto& v : x) v = std::clamp(v, -d.input_box, d.input_box);
      Vec y{label == 0 ? 1.0 : 0.0, label == 1 ? 1.0 : 0.0};
      d.samples.push_back(std::move(x));
      d.targets.push_back(std::move(y));
    }
  } else {
    throw std::runtime_error("make_dataset: unknown dataset '" + name + "'");
  }
  return d;
}

// ---------------------------------------------------------------------------
// Model presets. Layer order (and therefore the init stream consumption
// order) is fixed by the preset, not by the stage split, so the same seed
// yields the same composed model for every K.
// ---------------------------------------------------------------------------

namespace detail {

inline void init_layer(Layer l, Vec& out, RngStream& rng) {
  const std::size_t n = l.param_count();
  if (l.kind == LayerKind::DiagLinear) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(rng.next_uniform(0.6, 1.2));
    return;
  }
  const double s = 0.8 / std::sqrt(static_cast<double>(l.in));
  const std::size_t weights = static_cast<std::size_t>(l.out) * l.in;
  for (std::size_t i = 0; i < weights; ++i) out.push_back(rng.next_uniform(-s, s));
  for (std::size_t i = weights; i < n; ++i) out.push_back(0.0);  // bias
}

inline PipelineModel assemble(const std::vector<std::vector<Layer>>& stage_layers,
                              std::uint64_t seed) {
  RngStream rng(seed, stream_id::kInit);
  PipelineModel m;
  for (const auto& layers : stage_layers) {
    Stage st;
    st.layers = layers;
    for (const auto& l : layers) init_layer(l, st.params, rng);
    m.stages.push_back(std::move(st));
  }
  m.check();
  return m;
}

}  // namespace detail

// Four tanh blocks plus a linear head; cut into K in {2, 3, 4} stages.
// The composed model is identical for every K at the same seed.
inline PipelineModel build_regression_mlp(int k, std::uint64_t seed) {
  require(k >= 2 && k <= 4, "regression-mlp supports K in {2, 3, 4}");
  const int in = dataset_dims::kRegressionIn;
  const int out = dataset_dims::kRegressionOut;
  const int hid = 12;
  const Layer b1 = dense_tanh(in, hid);
  const Layer b2 = dense_tanh(hid, hid);
  const Layer b3 = dense_tanh(hid, hid);
  const Layer b4 = dense_tanh(hid, hid);
  const Layer head = dense_linear(hid, out);
  const Layer loss = squared_loss_head(out);
  std::vector<std::vector<Layer>> split;
  if (k == 2) {
    split = {{b1, b2}, {b3, b4, head, loss}};
  } else if (k == 3) {
    split = {{b1, b2}, {b3}, {b4, head, loss}};
  } else {
    split = {{b1}, {b2}, {b3}, {b4, head, loss}};
  }
  return detail::assemble(split, seed);
}

inline PipelineModel build_classification_2d(int k, std::uint64_t seed) {
  require(k == 2 || k == 3, "classification-2d supports K in {2, 3}");
  const Layer b1 = dense_tanh(2, 8);
  const Layer b2 = dense_tanh(8, 8);
  const Layer head = dense_linear(8, 2);
  const Layer loss = squared_loss_head(2);
  std::vector<std::vector<Layer>> split;
  if (k == 2) {
    split = {{b1}, {b2, head, loss}};
  } else {
    split = {{b1}, {b2}, {head, loss}};
  }
  return detail::assemble(split, seed);
}

}  // namespace aqsgd
