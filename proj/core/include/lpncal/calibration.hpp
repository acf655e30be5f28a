#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lpncal/forward_solver.hpp"
#include "lpncal/inverse_lm.hpp"
#include "lpncal/smc.hpp"

namespace lpncal {

/// One Bayesian Windkessel calibration: geometric model, prior, observation
/// source, sampler and optimizer settings, and a workspace directory.
struct CalibrationCase {
  std::filesystem::path model;
  std::filesystem::path workspace;
  Prior prior;

  /// Exactly one source: an observation file, or a trajectory to extract
  /// observations from and corrupt with noise at `snr`.
  std::optional<std::filesystem::path> observation_file;
  std::optional<std::filesystem::path> source_trajectory;
  double snr = 100.0;
  std::uint64_t noise_seed = 0;

  SmcConfig smc;
  std::optional<std::uint64_t> run2_seed;  // default smc.seed + 1
  LmConfig lm;
  /// Parameter kinds ("R", "C", "L", "S") excluded from LM.
  std::vector<std::string> lm_freeze_kinds;
  std::size_t resample = 100;
  IntegratorConfig forward;
  /// 0D model used in place of the external high-fidelity evaluation.
  std::optional<std::filesystem::path> surrogate_hifi;

  /// Relative paths resolve against the case file's directory.
  static CalibrationCase from_json_file(const std::filesystem::path& path);
  void validate() const;
};

enum class CalibrationStatus { Complete, AwaitingHandoff };

struct CalibrationOutcome {
  CalibrationStatus status = CalibrationStatus::Complete;
  Vector theta_map_run1;
  Vector mean_run1;
  std::optional<Vector> theta_map_run2;
  std::optional<Vector> mean_run2;
  std::optional<Vector> variance_run2;
  std::optional<LmReport> lm;
  std::filesystem::path workspace;
};

/// Workspace artifact names.
namespace artifacts {
inline constexpr const char* kObservations = "observations.json";
inline constexpr const char* kRun1Posterior = "run1_posterior.csv";
inline constexpr const char* kRun1Summary = "run1_summary.json";
inline constexpr const char* kHifiRequest = "hifi_request.json";
inline constexpr const char* kHifiResponse = "hifi_response.csv";
inline constexpr const char* kOptimizedModel = "optimized_model.json";
inline constexpr const char* kRun2Posterior = "run2_posterior.csv";
inline constexpr const char* kRun2Summary = "run2_summary.json";
inline constexpr const char* kReport = "calibration_report.json";
inline constexpr const char* kLock = ".lock";
}  // namespace artifacts

/// Run 1 and the hand-off request. With a surrogate high-fidelity model the
/// response is produced in-process and the workflow continues to Run 2;
/// otherwise it stops with AwaitingHandoff.
CalibrationOutcome calibrate(const CalibrationCase& c);

/// Continue from the hand-off response: LM optimization and Run 2.
CalibrationOutcome resume(const CalibrationCase& c);

struct HifiRequest {
  Vector theta;
  std::vector<WindkesselBc> windkessels;
  std::vector<std::string> outlet_nodes;
  std::vector<double> inflow_times;
  std::vector<double> inflow_flows;
  double period = 1.0;
  std::string model;
};
void write_hifi_request(const std::filesystem::path& path, const HifiRequest& req);
HifiRequest read_hifi_request(const std::filesystem::path& path);

}  // namespace lpncal
