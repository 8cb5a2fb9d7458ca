#pragma once

// The analytically tractable two-stage toy: stage a is a bias-free linear
// map h = W * xi with parameters vec(W); stage b is an elementwise gain
// followed by the squared loss, g(h, v) = 0.5 * || diag(v) h - y ||^2.
//
// Inside a declared domain box the Lipschitz/gradient-bound constants have
// closed forms (docs/toy_lq_constants.md walks through each bound):
//
//   l_a  = C_a = max_xi ||xi||          (the Jacobian of W*xi wrt vec(W) and
//                                        the map's Lipschitz constant both
//                                        equal ||xi|| exactly)
//   C_fb = sqrt(Bv^2 + H^2) * (Bv*H + Y)
//   L_fb = max(Bv^2, H^2) + 2*Bv*H + Y
//   L_f  = max(D, 1)^2 * L_fb
//
// with D = max ||xi||, Y = max ||y||, Bv the per-coordinate bound on the
// gain vector, and H the bound on the norm of hidden vectors (true
// activations and buffered messages alike). H is self-consistent: messages
// satisfy ||m_new - a|| <= c_Q ||a - m_old||, so if ||a|| <= A = w_box * D
// then every message stays within A * (1 + c_Q) / (1 - c_Q).

#include <cstdint>

#include "aqsgd/common.hpp"
#include "aqsgd/model.hpp"

namespace aqsgd {

struct ToyLQ {
  int input_dim = dataset_dims::kToyIn;
  int hidden_dim = dataset_dims::kToyHidden;
  double w_box = 0.0;   // bound on ||W||_F
  double gain_box = 0.0;  // per-coordinate bound on the stage-b gain vector
  double h_box = 0.0;   // bound on ||h|| for activations and messages
};

// Closed-form constant pack for the toy, valid on the box.
struct ToyConstants {
  double l_a = 0.0;
  double c_a = 0.0;
  double l_fb = 0.0;
  double c_fb = 0.0;
  double l_f = 0.0;
  double data_norm = 0.0;    // max ||xi||
  double target_norm = 0.0;  // max ||y||
};

// Box sized for a run whose certified quantizer constant is cq.
inline ToyLQ make_toy_lq(const Dataset& data, double cq, double w_box = 1.5,
                         double gain_box = 1.6) {
  require(cq >= 0.0 && cq < 1.0, "make_toy_lq: cq must be in [0, 1)");
  ToyLQ toy;
  toy.w_box = w_box;
  toy.gain_box = gain_box;
  const double act = w_box * data.max_sample_norm();
  toy.h_box = act * (1.0 + cq) / (1.0 - cq);
  return toy;
}

inline PipelineModel build_toy_lq_model(const ToyLQ& toy, std::uint64_t seed) {
  RngStream rng(seed, stream_id::kInit);
  PipelineModel m;
  Stage a;
  a.layers = {dense_linear(toy.input_dim, toy.hidden_dim, /*bias=*/false)};
  // Init well inside the box: ||W||_F <= w0 * sqrt(n*h) = w_box / 2.
  const double w0 =
      toy.w_box / (2.0 * std::sqrt(static_cast<double>(toy.input_dim) * toy.hidden_dim));
  for (std::size_t i = 0; i < a.layers[0].param_count(); ++i)
    a.params.push_back(rng.next_uniform(-w0, w0));
  Stage b;
  b.layers = {diag_linear(toy.hidden_dim), squared_loss_head(toy.hidden_dim)};
  for (int i = 0; i < toy.hidden_dim; ++i) b.params.push_back(rng.next_uniform(0.7, 1.1));
  m.stages = {std::move(a), std::move(b)};
  m.check();
  return m;
}

inline ToyConstants exact_constants(const ToyLQ& toy, const Dataset& data) {
  require(toy.w_box > 0.0 && toy.gain_box > 0.0 && toy.h_box > 0.0,
          "exact_constants: unbounded domain box, no certificate");
  ToyConstants c;
  c.data_norm = data.max_sample_norm();
  c.target_norm = data.max_target_norm();
  c.l_a = c.data_norm;
  c.c_a = c.data_norm;
  const double bv = toy.gain_box;
  const double h = toy.h_box;
  const double y = c.target_norm;
  c.c_fb = std::sqrt(bv * bv + h * h) * (bv * h + y);
  c.l_fb = std::max(bv * bv, h * h) + 2.0 * bv * h + y;
  const double d1 = std::max(c.data_norm, 1.0);
  c.l_f = d1 * d1 * c.l_fb;
  return c;
}

// True iff the model's parameters and the given hidden vector norms are
// within the toy's certified box. Audited runs must stay inside.
inline bool toy_in_box(const ToyLQ& toy, const PipelineModel& m) {
  const double wf = l2_norm(m.stages[0].params);
  if (wf > toy.w_box) return false;
  const Vec& gain = m.stages[1].params;
  return linf_norm(gain) <= toy.gain_box;
}

// ---------------------------------------------------------------------------
// Optimal value. The composed map is diag(v) * W * xi, and every matrix
// M = diag(v) * W is realizable, so f* equals the plain least-squares
// optimum min_M (1/N) sum 0.5 * ||M xi - y||^2, computed row by row from
// the normal equations via a symmetric eigendecomposition (rank-safe).
// ---------------------------------------------------------------------------

namespace detail {

// Cyclic Jacobi eigendecomposition for small symmetric matrices.
// On return, a holds the eigenvalues on its diagonal and v the eigenvectors
// by column.
inline void jacobi_eigen(Mat& a, Mat& v) {
  const std::size_t n = a.rows;
  v = Mat(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a(i, p), aiq = a(i, q);
          a(i, p) = cs * aip - sn * aiq;
          a(i, q) = sn * aip + cs * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = a(p, i), aqi = a(q, i);
          a(p, i) = cs * api - sn * aqi;
          a(q, i) = sn * api + cs * aqi;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = cs * vip - sn * viq;
          v(i, q) = sn * vip + cs * viq;
        }
      }
    }
  }
}

}  // namespace detail

inline double toy_lq_f_star(const ToyLQ& toy, const Dataset& data) {
  const int n = toy.input_dim;
  const int h = toy.hidden_dim;
  const double inv_n = 1.0 / data.size();
  Mat gram(n, n);
  for (const auto& xi : data.samples)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) gram(i, j) += inv_n * xi[i] * xi[j];

  Mat evecs;
  Mat diag = gram;
  detail::jacobi_eigen(diag, evecs);
  double lam_max = 0.0;
  for (int i = 0; i < n; ++i) lam_max = std::max(lam_max, diag(i, i));
  const double tol = 1e-12 * std::max(lam_max, 1.0);

  // Row j of the optimal M solves gram * m = c_j with c_j = mean(y_j * xi).
  Mat m_star(h, n);
  for (int j = 0; j < h; ++j) {
    Vec c(n, 0.0);
    for (int s = 0; s < data.size(); ++s)
      axpy(inv_n * data.targets[s][j], data.samples[s], c);
    for (int e = 0; e < n; ++e) {
      if (diag(e, e) <= tol) continue;
      double proj = 0.0;
      for (int i = 0; i < n; ++i) proj += evecs(i, e) * c[i];
      proj /= diag(e, e);
      for (int i = 0; i < n; ++i) m_star(j, i) += proj * evecs(i, e);
    }
  }

  double f = 0.0;
  for (int s = 0; s < data.size(); ++s) {
    for (int j = 0; j < h; ++j) {
      double pred = 0.0;
      for (int i = 0; i < n; ++i) pred += m_star(j, i) * data.samples[s][i];
      const double r = pred - data.targets[s][j];
      f += 0.5 * r * r;
    }
  }
  return f * inv_n;
}

}  // namespace aqsgd
