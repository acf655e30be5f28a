#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lpncal/lpn_model.hpp"

namespace lpncal {

/// Time series of the global solution vector. Rows are time samples,
/// columns follow the model's unknown ordering.
struct Trajectory {
  std::vector<double> times;
  Matrix y;
  std::optional<Matrix> ydot;

  std::size_t sample_count() const noexcept { return times.size(); }
  std::size_t unknown_count() const noexcept { return static_cast<std::size_t>(y.cols()); }

  /// Throws InvalidInput on non-increasing times or mismatched shapes.
  void validate() const;
  Vector state(std::size_t k) const { return y.row(static_cast<Eigen::Index>(k)).transpose(); }
  Vector rate(std::size_t k) const { return ydot->row(static_cast<Eigen::Index>(k)).transpose(); }
};

/// Column labels "<node>:P", "<node>:Q" in model unknown order.
std::vector<std::string> trajectory_labels(const LpnModel& model);

}  // namespace lpncal
