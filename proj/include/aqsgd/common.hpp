#pragma once

// Dense vector/matrix primitives shared by every module. All internal math
// is 64-bit; compression bit widths apply only to encoded payloads.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace aqsgd {

using Vec = std::vector<double>;

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec a;  // row-major, rows*cols entries

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
};

inline bool all_finite(const Vec& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

inline double dot(const Vec& x, const Vec& y) {
  require(x.size() == y.size(), "dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double l2_norm(const Vec& v) { return std::sqrt(dot(v, v)); }

inline double linf_norm(const Vec& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline Vec add(const Vec& x, const Vec& y) {
  require(x.size() == y.size(), "add: dimension mismatch");
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] + y[i];
  return r;
}

inline Vec sub(const Vec& x, const Vec& y) {
  require(x.size() == y.size(), "sub: dimension mismatch");
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - y[i];
  return r;
}

inline Vec scaled(const Vec& x, double c) {
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = c * x[i];
  return r;
}

// y += c*x
inline void axpy(double c, const Vec& x, Vec& y) {
  require(x.size() == y.size(), "axpy: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline Vec concat(const Vec& x, const Vec& y) {
  Vec r;
  r.reserve(x.size() + y.size());
  r.insert(r.end(), x.begin(), x.end());
  r.insert(r.end(), y.begin(), y.end());
  return r;
}

inline Vec zeros(std::size_t d) { return Vec(d, 0.0); }

}  // namespace aqsgd
