#include "lpncal/spline.hpp"

#include <algorithm>
#include <cmath>

#include "lpncal/errors.hpp"

namespace lpncal {

namespace {

// Solves the cyclic tridiagonal system with sub-diagonal a, diagonal b and
// super-diagonal c; a[0] couples row 0 to x[n-1] and c[n-1] couples row n-1
// to x[0]. Sherman-Morrison on top of the Thomas algorithm.
std::vector<double> solve_cyclic(std::vector<double> a, std::vector<double> b,
                                 std::vector<double> c, const std::vector<double>& rhs) {
  const std::size_t n = b.size();
  auto thomas = [&](const std::vector<double>& bb, std::vector<double> d) {
    std::vector<double> cp(n);
    double denom = bb[0];
    cp[0] = c[0] / denom;
    d[0] /= denom;
    for (std::size_t i = 1; i < n; ++i) {
      denom = bb[i] - a[i] * cp[i - 1];
      cp[i] = i + 1 < n ? c[i] / denom : 0.0;
      d[i] = (d[i] - a[i] * d[i - 1]) / denom;
    }
    for (std::size_t i = n - 1; i-- > 0;) d[i] -= cp[i] * d[i + 1];
    return d;
  };
  const double alpha = c[n - 1];
  const double beta = a[0];
  const double gamma = -b[0];
  std::vector<double> bb = b;
  bb[0] = b[0] - gamma;
  bb[n - 1] = b[n - 1] - alpha * beta / gamma;
  std::vector<double> x = thomas(bb, rhs);
  std::vector<double> u(n, 0.0);
  u[0] = gamma;
  u[n - 1] = alpha;
  const std::vector<double> z = thomas(bb, u);
  const double fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
  for (std::size_t i = 0; i < n; ++i) x[i] -= fact * z[i];
  return x;
}

}  // namespace

PeriodicSpline::PeriodicSpline(std::span<const double> times, std::span<const double> values,
                               double period)
    : period_(period) {
  if (!(period > 0.0)) throw InvalidInput("spline period must be positive");
  if (times.size() != values.size() || times.empty()) {
    throw InvalidInput("spline needs matching, non-empty times and values");
  }
  std::size_t n = times.size();
  // A closing sample at t0 + period duplicates the first one.
  if (n > 1 && std::abs(times[n - 1] - times[0] - period) <= 1e-9 * period) --n;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(times[i]) || !std::isfinite(values[i])) throw InvalidInput("spline data must be finite");
    if (i > 0 && !(times[i] > times[i - 1])) throw InvalidInput("spline times must be strictly increasing");
  }
  if (times[n - 1] - times[0] >= period) throw InvalidInput("spline samples span more than one period");

  knots_.assign(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(n));
  values_.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(n));
  knots_.push_back(times[0] + period);
  values_.push_back(values[0]);
  second_.assign(n + 1, 0.0);
  if (n < 2) return;

  std::vector<double> h(n);
  for (std::size_t i = 0; i < n; ++i) h[i] = knots_[i + 1] - knots_[i];
  auto slope = [&](std::size_t i) { return (values_[i + 1] - values_[i]) / h[i]; };

  if (n == 2) {
    // Both neighbors of each knot are the other knot.
    const double s = h[0] + h[1];
    const double r0 = 6.0 * (slope(0) - slope(1));
    const double r1 = 6.0 * (slope(1) - slope(0));
    // [2s s; s 2s] m = r
    const double det = 3.0 * s * s;
    second_[0] = (2.0 * s * r0 - s * r1) / det;
    second_[1] = (2.0 * s * r1 - s * r0) / det;
    second_[2] = second_[0];
    return;
  }

  std::vector<double> a(n), b(n), c(n), rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t im = (i + n - 1) % n;
    a[i] = h[im];
    b[i] = 2.0 * (h[im] + h[i]);
    c[i] = h[i];
    rhs[i] = 6.0 * (slope(i) - slope(im));
  }
  const auto m = solve_cyclic(a, b, c, rhs);
  for (std::size_t i = 0; i < n; ++i) second_[i] = m[i];
  second_[n] = m[0];
}

std::size_t PeriodicSpline::locate(double t, double& local) const {
  const double t0 = knots_.front();
  double u = std::fmod(t - t0, period_);
  if (u < 0.0) u += period_;
  u += t0;
  auto it = std::upper_bound(knots_.begin(), knots_.end(), u);
  std::size_t i = it == knots_.begin() ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
  if (i >= knots_.size() - 1) i = knots_.size() - 2;
  local = u - knots_[i];
  return i;
}

double PeriodicSpline::value(double t) const {
  if (knots_.size() == 2) return values_[0];
  double s = 0.0;
  const std::size_t i = locate(t, s);
  const double h = knots_[i + 1] - knots_[i];
  const double r = h - s;
  return second_[i] * r * r * r / (6.0 * h) + second_[i + 1] * s * s * s / (6.0 * h) +
         (values_[i] / h - second_[i] * h / 6.0) * r + (values_[i + 1] / h - second_[i + 1] * h / 6.0) * s;
}

double PeriodicSpline::derivative(double t) const {
  if (knots_.size() == 2) return 0.0;
  double s = 0.0;
  const std::size_t i = locate(t, s);
  const double h = knots_[i + 1] - knots_[i];
  const double r = h - s;
  return -second_[i] * r * r / (2.0 * h) + second_[i + 1] * s * s / (2.0 * h) +
         (values_[i + 1] - values_[i]) / h - (second_[i + 1] - second_[i]) * h / 6.0;
}

double PeriodicSpline::mean() const {
  double integral = 0.0;
  for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
    const double h = knots_[i + 1] - knots_[i];
    integral += 0.5 * h * (values_[i] + values_[i + 1]) - h * h * h * (second_[i] + second_[i + 1]) / 24.0;
  }
  return integral / period_;
}

namespace {

std::size_t periodic_sample_count(const std::vector<double>& times, double period) {
  std::size_t n = times.size();
  if (n > 1 && std::abs(times[n - 1] - times[0] - period) <= 1e-9 * period) --n;
  return n;
}

}  // namespace

Trajectory resample_periodic(const Trajectory& traj, double period, std::span<const double> times) {
  traj.validate();
  const std::size_t n = periodic_sample_count(traj.times, period);
  const std::span<const double> t(traj.times.data(), n);
  Trajectory out;
  out.times.assign(times.begin(), times.end());
  const auto m = static_cast<Eigen::Index>(times.size());
  out.y.resize(m, traj.y.cols());
  if (traj.ydot) out.ydot = Matrix(m, traj.y.cols());
  std::vector<double> col(n);
  for (Eigen::Index j = 0; j < traj.y.cols(); ++j) {
    for (std::size_t k = 0; k < n; ++k) col[k] = traj.y(static_cast<Eigen::Index>(k), j);
    const PeriodicSpline s(t, col, period);
    for (Eigen::Index k = 0; k < m; ++k) out.y(k, j) = s.value(times[static_cast<std::size_t>(k)]);
    if (traj.ydot) {
      for (std::size_t k = 0; k < n; ++k) col[k] = (*traj.ydot)(static_cast<Eigen::Index>(k), j);
      const PeriodicSpline sd(t, col, period);
      for (Eigen::Index k = 0; k < m; ++k) (*out.ydot)(k, j) = sd.value(times[static_cast<std::size_t>(k)]);
    }
  }
  return out;
}

Trajectory spline_derivative(const Trajectory& traj, double period, std::size_t samples) {
  traj.validate();
  if (samples == 0) throw InvalidInput("resample count must be positive");
  const std::size_t n = periodic_sample_count(traj.times, period);
  if (n < 4) throw InvalidInput("spline derivative needs at least 4 samples per unknown");
  const std::span<const double> t(traj.times.data(), n);
  Trajectory out;
  out.times.resize(samples);
  for (std::size_t k = 0; k < samples; ++k) {
    out.times[k] = traj.times[0] + static_cast<double>(k) * period / static_cast<double>(samples);
  }
  const auto m = static_cast<Eigen::Index>(samples);
  out.y.resize(m, traj.y.cols());
  out.ydot = Matrix(m, traj.y.cols());
  std::vector<double> col(n);
  for (Eigen::Index j = 0; j < traj.y.cols(); ++j) {
    for (std::size_t k = 0; k < n; ++k) col[k] = traj.y(static_cast<Eigen::Index>(k), j);
    const PeriodicSpline s(t, col, period);
    for (Eigen::Index k = 0; k < m; ++k) {
      out.y(k, j) = s.value(out.times[static_cast<std::size_t>(k)]);
      (*out.ydot)(k, j) = s.derivative(out.times[static_cast<std::size_t>(k)]);
    }
  }
  return out;
}

void Trajectory::validate() const {
  if (static_cast<std::size_t>(y.rows()) != times.size()) {
    throw InvalidInput("trajectory has " + std::to_string(times.size()) + " times and " +
                       std::to_string(y.rows()) + " state rows");
  }
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (!(times[k] > times[k - 1])) throw InvalidInput("trajectory times must be strictly increasing");
  }
  if (ydot && (ydot->rows() != y.rows() || ydot->cols() != y.cols())) {
    throw InvalidInput("trajectory derivative shape differs from its states");
  }
}

std::vector<std::string> trajectory_labels(const LpnModel& model) {
  std::vector<std::string> labels;
  labels.reserve(model.unknown_count());
  for (const auto& node : model.nodes()) {
    labels.push_back(node + ":P");
    labels.push_back(node + ":Q");
  }
  return labels;
}

}  // namespace lpncal
