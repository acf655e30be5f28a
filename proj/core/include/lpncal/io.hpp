#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lpncal/inverse_lm.hpp"
#include "lpncal/lpn_model.hpp"
#include "lpncal/observations.hpp"
#include "lpncal/smc.hpp"
#include "lpncal/trajectory.hpp"

namespace lpncal {

/// Parse an LPN description (JSON). Vessels give either `geometry` or
/// explicit `params`; zero vessel capacitance is raised to the rigid floor.
LpnModel parse_model(std::string_view json_text);
LpnModel load_model(const std::filesystem::path& path);
/// Serialize with explicit parameters for every element.
std::string model_to_json(const LpnModel& model);
void save_model(const std::filesystem::path& path, const LpnModel& model);

/// Copy of the input model file with vessel/junction parameters replaced by
/// alpha and an `lm_report` block appended.
void export_optimized_model(const std::filesystem::path& input, const std::filesystem::path& output,
                            const LpnModel& model, const ElementParams& alpha,
                            const LmReport& report);

/// CSV with header `time,<node>:P,<node>:Q,...`. Writes ydot rows when
/// `derivatives` is set.
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                          const LpnModel& model, bool derivatives = false);
/// Columns are matched to the model by header label. The optional sibling
/// file provides ydot with the same header.
Trajectory read_trajectory_csv(const std::filesystem::path& path, const LpnModel& model,
                               const std::optional<std::filesystem::path>& derivative_path = {});

struct ObservationFile {
  Vector y_obs;
  Vector variance;
  std::optional<Vector> y_true;
  std::optional<double> snr;
  std::optional<std::uint64_t> seed;
};
void write_observations(const std::filesystem::path& path, const ObservationFile& obs);
ObservationFile read_observations(const std::filesystem::path& path);

void write_posterior_csv(const std::filesystem::path& path, const ParticleSet& set,
                         const std::vector<std::string>& names);
std::string posterior_summary_json(const SmcResult& result, const std::vector<std::string>& names);
void write_posterior_summary(const std::filesystem::path& path, const SmcResult& result,
                             const std::vector<std::string>& names);

void write_grid_csv(const std::filesystem::path& path, const GridPosterior& grid);

/// Names "theta[<outlet>]" for the calibration parameters.
std::vector<std::string> theta_names(const LpnModel& model);

}  // namespace lpncal
