#pragma once

#include <span>
#include <vector>

#include "lpncal/trajectory.hpp"

namespace lpncal {

/// Periodic interpolating cubic spline (C2, closed through t0 + period).
class PeriodicSpline {
 public:
  PeriodicSpline(std::span<const double> times, std::span<const double> values, double period);

  double operator()(double t) const { return value(t); }
  double value(double t) const;
  double derivative(double t) const;
  /// Mean over one period.
  double mean() const;
  double period() const noexcept { return period_; }

 private:
  std::size_t locate(double t, double& local) const;

  std::vector<double> knots_;   // n + 1 knots, last = t0 + period
  std::vector<double> values_;  // n + 1 values, last = first
  std::vector<double> second_;  // n + 1 second derivatives
  double period_;
};

/// Fit a periodic cubic spline to every unknown of a one-period trajectory,
/// and resample values and analytic derivatives on `samples` uniform points
/// t0 + i*period/samples. A trailing sample at t0 + period is treated as the
/// periodic image of the first and dropped.
Trajectory spline_derivative(const Trajectory& traj, double period, std::size_t samples = 100);

/// Periodic spline resampling of values (and derivatives if present) onto new times.
Trajectory resample_periodic(const Trajectory& traj, double period, std::span<const double> times);

}  // namespace lpncal
