#pragma once

// Central-difference gradients, used as the independent oracle for every
// hand-written backward pass.

#include <functional>

#include "aqsgd/common.hpp"

namespace aqsgd {

using ScalarField = std::function<double(const Vec&)>;

inline Vec finite_diff_grad(const ScalarField& fn, const Vec& x, double h) {
  require(h > 0.0, "finite_diff_grad: h must be positive");
  Vec g(x.size());
  Vec p = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    p[i] = xi + h;
    const double fp = fn(p);
    p[i] = xi - h;
    const double fm = fn(p);
    p[i] = xi;
    require(std::isfinite(fp) && std::isfinite(fm),
            "finite_diff_grad: degenerate (non-finite) evaluation");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace aqsgd
