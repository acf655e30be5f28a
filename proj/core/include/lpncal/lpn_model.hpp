#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace lpncal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// All quantities are CGS: cm, g, s, dyn.

struct VesselGeometry {
  double radius = 0.0;          // cm
  double length = 0.0;          // cm
  double youngs_modulus = 0.0;  // dyn/cm^2
  double wall_thickness = 0.0;  // cm
  double proximal_area = 0.0;   // cm^2
  double stenosed_area = 0.0;   // cm^2
};

struct FluidProperties {
  double density = 1.06;           // g/cm^3
  double viscosity = 0.04;         // dyn s/cm^2
  double stenosis_correction = 1.52;
};

/// Lumped parameters of one BloodVessel element.
struct VesselParams {
  double R = 0.0;
  double C = 0.0;
  double L = 0.0;
  double S = 0.0;
};

/// Per-outlet lumped parameters of one BloodVesselJunction element.
struct JunctionParams {
  std::vector<double> R;
  std::vector<double> L;
  std::vector<double> S;

  std::size_t outlet_count() const noexcept { return R.size(); }
  static JunctionParams zeros(std::size_t outlets);
};

/// Capacitance substituted for a rigid (zero-capacitance) vessel wall.
inline constexpr double kRigidCapacitanceFloor = 1e-8;

/// Poiseuille resistance, inertance, wall capacitance and stenosis
/// coefficient of a straight vessel segment.
VesselParams derive_geometric_params(const VesselGeometry& geom,
                                     const FluidProperties& fluid);

struct WindkesselBc {
  double Rp = 0.0;
  double Rd = 0.0;
  double C = 0.0;
  double Pref = 0.0;
};

/// A Windkessel expressed as log total resistance plus the two quantities
/// held fixed during calibration: Rp/Rd and the distal time constant Rd*C.
struct WindkesselEncoding {
  double theta = 0.0;
  double ratio = 0.0;
  double tau = 0.0;
};

WindkesselEncoding encode_windkessel(const WindkesselBc& bc);
WindkesselBc decode_windkessel(double theta, double ratio, double tau, double pref = 0.0);

/// Calibration parameters for every outlet of a model, in outlet order.
struct WindkesselParamVector {
  std::vector<double> theta;
  std::vector<double> ratio;
  std::vector<double> tau;
  std::vector<double> pref;

  std::size_t size() const noexcept { return theta.size(); }
  static WindkesselParamVector encode(std::span<const WindkesselBc> bcs);
  std::vector<WindkesselBc> decode() const;
  /// Same fixed metadata with a new theta vector.
  WindkesselParamVector with_theta(const Vector& new_theta) const;
  Vector theta_vector() const;
};

enum class ParamKind { R, C, L, S };

const char* to_string(ParamKind kind) noexcept;

struct ParamSlot {
  enum class Owner { Vessel, Junction };
  Owner owner = Owner::Vessel;
  std::size_t element = 0;  // vessel or junction index
  std::size_t outlet = 0;   // junction outlet, 0 for vessels
  ParamKind kind = ParamKind::R;
  std::string name;         // e.g. "v3.R" or "j0.S[1]"
};

/// Flat index layout of the element parameter vector alpha: every vessel
/// contributes (R, C, L, S); every junction with n outlets contributes
/// (R_1..R_n, L_1..L_n, S_1..S_n). Vessels come first, then junctions.
class ParamLayout {
 public:
  ParamLayout() = default;
  ParamLayout(std::span<const std::string> vessel_names,
              std::span<const std::string> junction_names,
              std::span<const std::size_t> junction_outlet_counts);

  std::size_t size() const noexcept { return slots_.size(); }
  const ParamSlot& slot(std::size_t i) const { return slots_.at(i); }
  const std::vector<ParamSlot>& slots() const noexcept { return slots_; }

  std::size_t vessel_offset(std::size_t vessel) const { return vessel_offsets_.at(vessel); }
  std::size_t junction_offset(std::size_t junction) const { return junction_offsets_.at(junction); }
  std::size_t junction_outlets(std::size_t junction) const { return junction_sizes_.at(junction); }
  std::size_t vessel_count() const noexcept { return vessel_offsets_.size(); }
  std::size_t junction_count() const noexcept { return junction_offsets_.size(); }

  std::size_t index_of(std::string_view name) const;
  /// Mask that is true for every slot of the given kind.
  std::vector<bool> mask_of(ParamKind kind) const;

 private:
  std::vector<ParamSlot> slots_;
  std::vector<std::size_t> vessel_offsets_;
  std::vector<std::size_t> junction_offsets_;
  std::vector<std::size_t> junction_sizes_;
};

/// Element parameter vector alpha together with its layout.
class ElementParams {
 public:
  explicit ElementParams(std::shared_ptr<const ParamLayout> layout);
  ElementParams(std::shared_ptr<const ParamLayout> layout, Vector values);

  const ParamLayout& layout() const noexcept { return *layout_; }
  std::shared_ptr<const ParamLayout> layout_ptr() const noexcept { return layout_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }

  const Vector& values() const noexcept { return values_; }
  Vector& values() noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }

  VesselParams vessel(std::size_t i) const;
  void set_vessel(std::size_t i, const VesselParams& p);
  JunctionParams junction(std::size_t j) const;
  void set_junction(std::size_t j, const JunctionParams& p);

 private:
  std::shared_ptr<const ParamLayout> layout_;
  Vector values_;
};

struct BloodVessel {
  std::string name;
  std::size_t inlet = 0;
  std::size_t outlet = 0;
  VesselParams params;
  std::optional<VesselGeometry> geometry;
};

struct BloodVesselJunction {
  std::string name;
  std::size_t inlet = 0;
  std::vector<std::size_t> outlets;
  JunctionParams params;
};

struct WindkesselOutlet {
  std::string name;
  std::size_t node = 0;
  WindkesselBc bc;
};

/// Periodic inflow waveform sampled on [0, period).
struct FlowInlet {
  std::size_t node = 0;
  std::vector<double> times;
  std::vector<double> flows;
};

class PeriodicSpline;

/// Immutable lumped-parameter network. Each node point owns two unknowns in
/// the global solution vector: pressure at 2*i and flow at 2*i + 1.
///
/// Equations are ordered: vessels (2 rows each), junctions (1 + n rows),
/// Windkessel outlets (1 row each), inflow constraint (1 row).
class LpnModel {
 public:
  LpnModel(std::vector<std::string> nodes, std::vector<BloodVessel> vessels,
           std::vector<BloodVesselJunction> junctions, std::vector<WindkesselOutlet> outlets,
           FlowInlet inflow, double period, FluidProperties fluid = {});

  const std::vector<std::string>& nodes() const noexcept { return nodes_; }
  const std::vector<BloodVessel>& vessels() const noexcept { return vessels_; }
  const std::vector<BloodVesselJunction>& junctions() const noexcept { return junctions_; }
  const std::vector<WindkesselOutlet>& outlets() const noexcept { return outlets_; }
  const FlowInlet& inflow() const noexcept { return inflow_; }
  const FluidProperties& fluid() const noexcept { return fluid_; }
  double period() const noexcept { return period_; }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t unknown_count() const noexcept { return 2 * nodes_.size(); }
  std::size_t node_index(std::string_view name) const;
  static std::size_t pressure_dof(std::size_t node) noexcept { return 2 * node; }
  static std::size_t flow_dof(std::size_t node) noexcept { return 2 * node + 1; }

  std::size_t vessel_row(std::size_t vessel) const { return vessel_rows_.at(vessel); }
  std::size_t junction_row(std::size_t junction) const { return junction_rows_.at(junction); }
  std::size_t outlet_row(std::size_t outlet) const { return outlet_rows_.at(outlet); }
  std::size_t inflow_row() const noexcept { return inflow_row_; }
  /// Number of element (vessel and junction) equation rows.
  std::size_t element_equation_count() const noexcept { return outlet_rows_.empty() ? inflow_row_ : outlet_rows_.front(); }

  const std::shared_ptr<const ParamLayout>& layout() const noexcept { return layout_; }
  ElementParams nominal_params() const;
  std::vector<WindkesselBc> nominal_bcs() const;
  WindkesselParamVector nominal_windkessel() const;

  double inflow_at(double t) const;
  double mean_inflow() const;

  /// Copy of this model with element parameters and Windkessels replaced.
  LpnModel with_parameters(const ElementParams& alpha, std::span<const WindkesselBc> bcs) const;

 private:
  void validate_topology() const;

  std::vector<std::string> nodes_;
  std::vector<BloodVessel> vessels_;
  std::vector<BloodVesselJunction> junctions_;
  std::vector<WindkesselOutlet> outlets_;
  FlowInlet inflow_;
  double period_ = 1.0;
  FluidProperties fluid_;
  std::shared_ptr<const ParamLayout> layout_;
  std::shared_ptr<const PeriodicSpline> inflow_spline_;

  std::vector<std::size_t> vessel_rows_;
  std::vector<std::size_t> junction_rows_;
  std::vector<std::size_t> outlet_rows_;
  std::size_t inflow_row_ = 0;
};

/// Global residual r = E(alpha) ydot + F(alpha) y + c(alpha, y, ydot) at time t.
Vector assemble_residual(const LpnModel& model, const ElementParams& alpha,
                         std::span<const WindkesselBc> bcs, const Vector& y,
                         const Vector& ydot, double t);
Vector assemble_residual(const LpnModel& model, const ElementParams& alpha,
                         const WindkesselParamVector& theta, const Vector& y,
                         const Vector& ydot, double t);

}  // namespace lpncal
