#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "lpncal/lpn_model.hpp"

namespace lpncal::testing {

/// Central finite-difference Jacobian of f at x. Step per component is
/// rel_step * max(|x_i|, scale).
template <typename F>
Matrix fd_jacobian(F&& f, const Vector& x, double rel_step = 1e-6, double scale = 1.0) {
  const Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(std::abs(x[i]), scale);
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

/// max |a - b| relative to max |b| (absolute when b vanishes).
inline double rel_error(const Matrix& a, const Matrix& b) {
  const double diff = (a - b).cwiseAbs().maxCoeff();
  const double ref = b.size() ? b.cwiseAbs().maxCoeff() : 0.0;
  return ref > 0.0 ? diff / ref : diff;
}

/// Least-squares slope of y against x.
inline double linear_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Least-squares slope of log(err) against log(h).
inline double loglog_slope(const std::vector<double>& h, const std::vector<double>& err) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < h.size(); ++i) {
    lx.push_back(std::log(h[i]));
    ly.push_back(std::log(err[i]));
  }
  return linear_slope(lx, ly);
}

/// Coefficient of determination of `pred` against `truth`.
inline double r_squared(const std::vector<double>& truth, const std::vector<double>& pred) {
  double mean = 0.0;
  for (double t : truth) mean += t;
  mean /= static_cast<double>(truth.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
}

}  // namespace lpncal::testing
