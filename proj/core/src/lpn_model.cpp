#include "lpncal/lpn_model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "lpncal/errors.hpp"
#include "lpncal/spline.hpp"

namespace lpncal {

NonConvergence::NonConvergence(int iterations, double residual_norm)
    : Error("steady solve did not converge after " + std::to_string(iterations) +
            " iterations (residual " + std::to_string(residual_norm) + ")"),
      iterations_(iterations),
      residual_norm_(residual_norm) {}

NewtonDivergence::NewtonDivergence(double time, int iterations, double residual_norm)
    : Error("Newton iteration failed at t=" + std::to_string(time) + " after " +
            std::to_string(iterations) + " iterations (residual " +
            std::to_string(residual_norm) + ")"),
      time_(time),
      iterations_(iterations),
      residual_norm_(residual_norm) {}

StageError::StageError(std::string stage, const std::string& what)
    : Error(stage + ": " + what), stage_(std::move(stage)) {}

JunctionParams JunctionParams::zeros(std::size_t outlets) {
  JunctionParams p;
  p.R.assign(outlets, 0.0);
  p.L.assign(outlets, 0.0);
  p.S.assign(outlets, 0.0);
  return p;
}

VesselParams derive_geometric_params(const VesselGeometry& g, const FluidProperties& fluid) {
  if (!(g.radius > 0.0) || !(g.length > 0.0) || !(g.youngs_modulus > 0.0) ||
      !(g.wall_thickness > 0.0) || !(g.stenosed_area > 0.0) ||
      !(g.proximal_area >= g.stenosed_area)) {
    throw InvalidInput("vessel geometry requires r, l, E, h, Ss > 0 and S0 >= Ss");
  }
  if (!(fluid.density > 0.0) || !(fluid.viscosity > 0.0) || !(fluid.stenosis_correction > 0.0)) {
    throw InvalidInput("fluid density, viscosity and stenosis correction must be positive");
  }
  constexpr double pi = std::numbers::pi;
  const double r = g.radius;
  const double l = g.length;
  VesselParams p;
  p.R = 8.0 * fluid.viscosity * l / (pi * r * r * r * r);
  p.L = fluid.density * l / (pi * r * r);
  p.C = 3.0 * l * pi * r * r * r / (2.0 * g.youngs_modulus * g.wall_thickness);
  const double narrowing = g.proximal_area / g.stenosed_area - 1.0;
  p.S = fluid.stenosis_correction * fluid.density / (2.0 * g.proximal_area * g.proximal_area) *
        narrowing * narrowing;
  return p;
}

WindkesselEncoding encode_windkessel(const WindkesselBc& bc) {
  if (!(bc.Rp >= 0.0) || !(bc.Rd > 0.0) || !(bc.C > 0.0)) {
    throw InvalidInput("Windkessel requires Rp >= 0, Rd > 0, C > 0");
  }
  return {std::log(bc.Rp + bc.Rd), bc.Rp / bc.Rd, bc.Rd * bc.C};
}

WindkesselBc decode_windkessel(double theta, double ratio, double tau, double pref) {
  if (!(ratio >= 0.0) || !(tau > 0.0) || !std::isfinite(ratio) || !std::isfinite(tau)) {
    throw InvalidInput("Windkessel decode requires ratio >= 0 and tau > 0");
  }
  if (!std::isfinite(theta)) throw InvalidInput("Windkessel theta must be finite");
  const double total = std::exp(theta);
  WindkesselBc bc;
  bc.Rd = total / (1.0 + ratio);
  bc.Rp = total * ratio / (1.0 + ratio);  // total - Rd without cancellation
  bc.C = tau / bc.Rd;
  bc.Pref = pref;
  return bc;
}

WindkesselParamVector WindkesselParamVector::encode(std::span<const WindkesselBc> bcs) {
  WindkesselParamVector v;
  for (const auto& bc : bcs) {
    const auto e = encode_windkessel(bc);
    v.theta.push_back(e.theta);
    v.ratio.push_back(e.ratio);
    v.tau.push_back(e.tau);
    v.pref.push_back(bc.Pref);
  }
  return v;
}

std::vector<WindkesselBc> WindkesselParamVector::decode() const {
  std::vector<WindkesselBc> out;
  out.reserve(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    out.push_back(decode_windkessel(theta[i], ratio.at(i), tau.at(i), pref.at(i)));
  }
  return out;
}

WindkesselParamVector WindkesselParamVector::with_theta(const Vector& new_theta) const {
  if (static_cast<std::size_t>(new_theta.size()) != theta.size()) {
    throw DimensionMismatch("theta has " + std::to_string(new_theta.size()) + " entries, expected " +
                            std::to_string(theta.size()));
  }
  WindkesselParamVector v = *this;
  for (std::size_t i = 0; i < theta.size(); ++i) v.theta[i] = new_theta[static_cast<Eigen::Index>(i)];
  return v;
}

Vector WindkesselParamVector::theta_vector() const {
  return Eigen::Map<const Vector>(theta.data(), static_cast<Eigen::Index>(theta.size()));
}

const char* to_string(ParamKind kind) noexcept {
  switch (kind) {
    case ParamKind::R: return "R";
    case ParamKind::C: return "C";
    case ParamKind::L: return "L";
    case ParamKind::S: return "S";
  }
  return "?";
}

ParamLayout::ParamLayout(std::span<const std::string> vessel_names,
                         std::span<const std::string> junction_names,
                         std::span<const std::size_t> junction_outlet_counts) {
  if (junction_names.size() != junction_outlet_counts.size()) {
    throw DimensionMismatch("junction names and outlet counts differ in length");
  }
  constexpr ParamKind vessel_kinds[] = {ParamKind::R, ParamKind::C, ParamKind::L, ParamKind::S};
  for (std::size_t v = 0; v < vessel_names.size(); ++v) {
    vessel_offsets_.push_back(slots_.size());
    for (ParamKind k : vessel_kinds) {
      slots_.push_back({ParamSlot::Owner::Vessel, v, 0, k, vessel_names[v] + "." + to_string(k)});
    }
  }
  constexpr ParamKind junction_kinds[] = {ParamKind::R, ParamKind::L, ParamKind::S};
  for (std::size_t j = 0; j < junction_names.size(); ++j) {
    junction_offsets_.push_back(slots_.size());
    junction_sizes_.push_back(junction_outlet_counts[j]);
    for (ParamKind k : junction_kinds) {
      for (std::size_t i = 0; i < junction_outlet_counts[j]; ++i) {
        slots_.push_back({ParamSlot::Owner::Junction, j, i, k,
                          junction_names[j] + "." + to_string(k) + "[" + std::to_string(i) + "]"});
      }
    }
  }
}

std::size_t ParamLayout::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].name == name) return i;
  }
  throw InvalidInput("unknown parameter '" + std::string(name) + "'");
}

std::vector<bool> ParamLayout::mask_of(ParamKind kind) const {
  std::vector<bool> mask(slots_.size(), false);
  for (std::size_t i = 0; i < slots_.size(); ++i) mask[i] = slots_[i].kind == kind;
  return mask;
}

ElementParams::ElementParams(std::shared_ptr<const ParamLayout> layout)
    : layout_(std::move(layout)), values_(Vector::Zero(static_cast<Eigen::Index>(layout_->size()))) {}

ElementParams::ElementParams(std::shared_ptr<const ParamLayout> layout, Vector values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (static_cast<std::size_t>(values_.size()) != layout_->size()) {
    throw DimensionMismatch("alpha has " + std::to_string(values_.size()) + " entries, layout has " +
                            std::to_string(layout_->size()));
  }
}

VesselParams ElementParams::vessel(std::size_t i) const {
  const auto o = static_cast<Eigen::Index>(layout_->vessel_offset(i));
  return {values_[o], values_[o + 1], values_[o + 2], values_[o + 3]};
}

void ElementParams::set_vessel(std::size_t i, const VesselParams& p) {
  const auto o = static_cast<Eigen::Index>(layout_->vessel_offset(i));
  values_[o] = p.R;
  values_[o + 1] = p.C;
  values_[o + 2] = p.L;
  values_[o + 3] = p.S;
}

JunctionParams ElementParams::junction(std::size_t j) const {
  const std::size_t n = layout_->junction_outlets(j);
  const std::size_t o = layout_->junction_offset(j);
  JunctionParams p = JunctionParams::zeros(n);
  for (std::size_t i = 0; i < n; ++i) {
    p.R[i] = values_[static_cast<Eigen::Index>(o + i)];
    p.L[i] = values_[static_cast<Eigen::Index>(o + n + i)];
    p.S[i] = values_[static_cast<Eigen::Index>(o + 2 * n + i)];
  }
  return p;
}

void ElementParams::set_junction(std::size_t j, const JunctionParams& p) {
  const std::size_t n = layout_->junction_outlets(j);
  if (p.R.size() != n || p.L.size() != n || p.S.size() != n) {
    throw DimensionMismatch("junction parameter count does not match its outlets");
  }
  const std::size_t o = layout_->junction_offset(j);
  for (std::size_t i = 0; i < n; ++i) {
    values_[static_cast<Eigen::Index>(o + i)] = p.R[i];
    values_[static_cast<Eigen::Index>(o + n + i)] = p.L[i];
    values_[static_cast<Eigen::Index>(o + 2 * n + i)] = p.S[i];
  }
}

LpnModel::LpnModel(std::vector<std::string> nodes, std::vector<BloodVessel> vessels,
                   std::vector<BloodVesselJunction> junctions, std::vector<WindkesselOutlet> outlets,
                   FlowInlet inflow, double period, FluidProperties fluid)
    : nodes_(std::move(nodes)),
      vessels_(std::move(vessels)),
      junctions_(std::move(junctions)),
      outlets_(std::move(outlets)),
      inflow_(std::move(inflow)),
      period_(period),
      fluid_(fluid) {
  if (!(period_ > 0.0) || !std::isfinite(period_)) throw InvalidInput("period must be positive");
  validate_topology();

  std::vector<std::string> vnames;
  for (const auto& v : vessels_) vnames.push_back(v.name);
  std::vector<std::string> jnames;
  std::vector<std::size_t> jcounts;
  for (const auto& j : junctions_) {
    jnames.push_back(j.name);
    jcounts.push_back(j.outlets.size());
  }
  layout_ = std::make_shared<const ParamLayout>(vnames, jnames, jcounts);

  std::size_t row = 0;
  for (std::size_t v = 0; v < vessels_.size(); ++v, row += 2) vessel_rows_.push_back(row);
  for (const auto& j : junctions_) {
    junction_rows_.push_back(row);
    row += 1 + j.outlets.size();
  }
  for (std::size_t o = 0; o < outlets_.size(); ++o, ++row) outlet_rows_.push_back(row);
  inflow_row_ = row;

  inflow_spline_ = std::make_shared<const PeriodicSpline>(inflow_.times, inflow_.flows, period_);
}

void LpnModel::validate_topology() const {
  const std::size_t n = nodes_.size();
  if (n == 0) throw InvalidInput("model has no nodes");
  {
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < n; ++i) {
      if (!seen.emplace(nodes_[i], i).second) throw InvalidInput("duplicate node '" + nodes_[i] + "'");
    }
  }
  auto check = [&](std::size_t node, const std::string& who) {
    if (node >= n) throw InvalidInput(who + " references node index " + std::to_string(node) + " out of range");
  };

  // Every node point sits between exactly one upstream element (inflow,
  // vessel or junction outlet) and one downstream element (vessel or
  // junction inlet, Windkessel).
  std::vector<int> upstream(n, 0), downstream(n, 0);
  std::vector<std::vector<std::size_t>> children(n);
  check(inflow_.node, "inflow");
  upstream[inflow_.node]++;
  for (const auto& v : vessels_) {
    check(v.inlet, "vessel " + v.name);
    check(v.outlet, "vessel " + v.name);
    if (v.inlet == v.outlet) throw InvalidInput("vessel " + v.name + " connects a node to itself");
    downstream[v.inlet]++;
    upstream[v.outlet]++;
    children[v.inlet].push_back(v.outlet);
    const auto& p = v.params;
    if (!std::isfinite(p.R) || !std::isfinite(p.C) || !std::isfinite(p.L) || !std::isfinite(p.S)) {
      throw InvalidInput("vessel " + v.name + " has non-finite parameters");
    }
  }
  for (const auto& j : junctions_) {
    check(j.inlet, "junction " + j.name);
    if (j.outlets.empty()) throw InvalidInput("junction " + j.name + " has no outlets");
    if (j.params.R.size() != j.outlets.size() || j.params.L.size() != j.outlets.size() ||
        j.params.S.size() != j.outlets.size()) {
      throw InvalidInput("junction " + j.name + " parameter count does not match its outlets");
    }
    downstream[j.inlet]++;
    for (std::size_t o : j.outlets) {
      check(o, "junction " + j.name);
      upstream[o]++;
      children[j.inlet].push_back(o);
    }
  }
  for (const auto& w : outlets_) {
    check(w.node, "Windkessel " + w.name);
    downstream[w.node]++;
    if (!(w.bc.Rp >= 0.0) || !(w.bc.Rd > 0.0) || !(w.bc.C > 0.0) || !std::isfinite(w.bc.Pref)) {
      throw InvalidInput("Windkessel " + w.name + " requires Rp >= 0, Rd > 0, C > 0");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (upstream[i] != 1 || downstream[i] != 1) {
      std::ostringstream msg;
      msg << "node '" << nodes_[i] << "' has " << upstream[i] << " upstream and " << downstream[i]
          << " downstream connections (expected 1 and 1)";
      throw InvalidInput(msg.str());
    }
  }
  // With one parent per node, reaching every node from the inlet proves the
  // network is a connected tree.
  std::vector<bool> visited(n, false);
  std::vector<std::size_t> stack{inflow_.node};
  std::size_t count = 0;
  while (!stack.empty()) {
    const std::size_t k = stack.back();
    stack.pop_back();
    if (visited[k]) throw InvalidInput("network contains a cycle");
    visited[k] = true;
    ++count;
    for (std::size_t c : children[k]) stack.push_back(c);
  }
  if (count != n) throw InvalidInput("network is not connected to the inlet");

  if (inflow_.times.empty() || inflow_.times.size() != inflow_.flows.size()) {
    throw InvalidInput("inflow waveform needs matching, non-empty times and flows");
  }
}

std::size_t LpnModel::node_index(std::string_view name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i] == name) return i;
  }
  throw InvalidInput("unknown node '" + std::string(name) + "'");
}

ElementParams LpnModel::nominal_params() const {
  ElementParams alpha(layout_);
  for (std::size_t v = 0; v < vessels_.size(); ++v) alpha.set_vessel(v, vessels_[v].params);
  for (std::size_t j = 0; j < junctions_.size(); ++j) alpha.set_junction(j, junctions_[j].params);
  return alpha;
}

std::vector<WindkesselBc> LpnModel::nominal_bcs() const {
  std::vector<WindkesselBc> out;
  out.reserve(outlets_.size());
  for (const auto& w : outlets_) out.push_back(w.bc);
  return out;
}

WindkesselParamVector LpnModel::nominal_windkessel() const {
  const auto bcs = nominal_bcs();
  return WindkesselParamVector::encode(bcs);
}

double LpnModel::inflow_at(double t) const { return inflow_spline_->value(t); }

double LpnModel::mean_inflow() const { return inflow_spline_->mean(); }

LpnModel LpnModel::with_parameters(const ElementParams& alpha, std::span<const WindkesselBc> bcs) const {
  if (alpha.size() != layout_->size()) throw DimensionMismatch("alpha does not match the model layout");
  if (bcs.size() != outlets_.size()) throw DimensionMismatch("Windkessel count does not match outlets");
  auto vessels = vessels_;
  auto junctions = junctions_;
  auto outlets = outlets_;
  for (std::size_t v = 0; v < vessels.size(); ++v) vessels[v].params = alpha.vessel(v);
  for (std::size_t j = 0; j < junctions.size(); ++j) junctions[j].params = alpha.junction(j);
  for (std::size_t o = 0; o < outlets.size(); ++o) outlets[o].bc = bcs[o];
  return LpnModel(nodes_, std::move(vessels), std::move(junctions), std::move(outlets), inflow_,
                  period_, fluid_);
}

}  // namespace lpncal
