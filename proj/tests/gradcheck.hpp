#pragma once

// Central finite-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <functional>

#include <Eigen/Dense>

namespace gradcheck {

inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + h;
    const double fp = f(xp);
    xp[i] = orig - h;
    const double fm = f(xp);
    xp[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Largest per-coordinate relative error |a - n| / max(|a|, |n|, floor). The
// floor keeps coordinates whose true gradient is ~0 from dominating on
// round-off.
inline double max_rel_error(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& analytic, double h = 1e-5, double floor = 1e-6) {
  const Eigen::VectorXd numeric = numeric_gradient(f, x, h);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace gradcheck
