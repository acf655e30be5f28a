#include "lpncal/io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "lpncal/errors.hpp"

namespace lpncal {

using json = nlohmann::ordered_json;

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw InvalidInput("failed writing '" + path.string() + "'");
}

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw InvalidInput(what + ": " + e.what());
  }
}

double num(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw InvalidInput(std::string("'") + key + "' must be a number");
  return j.at(key).get<double>();
}

double req_num(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_number()) {
    throw InvalidInput(where + ": missing numeric field '" + key + "'");
  }
  return j.at(key).get<double>();
}

std::vector<double> num_array(const json& j, const std::string& where) {
  if (!j.is_array()) throw InvalidInput(where + " must be an array");
  std::vector<double> v;
  for (const auto& x : j) {
    if (!x.is_number()) throw InvalidInput(where + " must contain numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

json vec_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector json_vec(const json& j, const std::string& where) {
  const auto v = num_array(j, where);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

json vessel_params_json(const VesselParams& p) { return json{{"R", p.R}, {"C", p.C}, {"L", p.L}, {"S", p.S}}; }

json junction_params_json(const JunctionParams& p) { return json{{"R", p.R}, {"L", p.L}, {"S", p.S}}; }

}  // namespace

LpnModel parse_model(std::string_view text) {
  const json j = parse_json(text, "model JSON");
  if (!j.is_object()) throw InvalidInput("model JSON must be an object");
  if (!j.contains("nodes") || !j.at("nodes").is_array()) throw InvalidInput("model needs a 'nodes' array");

  std::vector<std::string> nodes;
  std::map<std::string, std::size_t> index;
  for (const auto& n : j.at("nodes")) {
    if (!n.is_string()) throw InvalidInput("node names must be strings");
    index.emplace(n.get<std::string>(), nodes.size());
    nodes.push_back(n.get<std::string>());
  }
  auto node = [&](const json& o, const char* key, const std::string& where) {
    if (!o.contains(key) || !o.at(key).is_string()) throw InvalidInput(where + ": missing node reference '" + key + "'");
    const auto name = o.at(key).get<std::string>();
    const auto it = index.find(name);
    if (it == index.end()) throw InvalidInput(where + ": unknown node '" + name + "'");
    return it->second;
  };

  FluidProperties fluid;
  if (j.contains("fluid")) {
    const auto& f = j.at("fluid");
    fluid.density = num(f, "density", fluid.density);
    fluid.viscosity = num(f, "viscosity", fluid.viscosity);
    fluid.stenosis_correction = num(f, "stenosis_correction", fluid.stenosis_correction);
  }
  if (!j.contains("period")) throw InvalidInput("model needs a 'period'");
  const double period = req_num(j, "period", "model");

  std::vector<BloodVessel> vessels;
  if (j.contains("vessels")) {
    for (const auto& v : j.at("vessels")) {
      BloodVessel b;
      b.name = v.value("name", "v" + std::to_string(vessels.size()));
      const std::string where = "vessel " + b.name;
      b.inlet = node(v, "inlet", where);
      b.outlet = node(v, "outlet", where);
      if (v.contains("geometry")) {
        const auto& g = v.at("geometry");
        VesselGeometry geo;
        geo.radius = req_num(g, "radius", where);
        geo.length = req_num(g, "length", where);
        geo.youngs_modulus = num(g, "youngs_modulus", 0.0);
        geo.wall_thickness = num(g, "wall_thickness", 0.0);
        const double area = 3.14159265358979323846 * geo.radius * geo.radius;
        geo.proximal_area = num(g, "proximal_area", area);
        geo.stenosed_area = num(g, "stenosed_area", geo.proximal_area);
        b.geometry = geo;
      }
      const bool rigid = v.value("rigid", false);
      if (v.contains("params")) {
        const auto& p = v.at("params");
        b.params = {req_num(p, "R", where), num(p, "C", 0.0), num(p, "L", 0.0), num(p, "S", 0.0)};
      } else if (b.geometry) {
        VesselGeometry geo = *b.geometry;
        if (rigid) {
          // Wall stiffness is irrelevant for a rigid wall.
          geo.youngs_modulus = 1.0;
          geo.wall_thickness = 1.0;
        }
        b.params = derive_geometric_params(geo, fluid);
      } else {
        throw InvalidInput(where + ": needs 'params' or 'geometry'");
      }
      if (rigid) b.params.C = kRigidCapacitanceFloor;
      vessels.push_back(std::move(b));
    }
  }

  std::vector<BloodVesselJunction> junctions;
  if (j.contains("junctions")) {
    for (const auto& jj : j.at("junctions")) {
      BloodVesselJunction b;
      b.name = jj.value("name", "j" + std::to_string(junctions.size()));
      const std::string where = "junction " + b.name;
      b.inlet = node(jj, "inlet", where);
      if (!jj.contains("outlets") || !jj.at("outlets").is_array()) throw InvalidInput(where + ": needs an 'outlets' array");
      for (const auto& o : jj.at("outlets")) {
        if (!o.is_string() || !index.count(o.get<std::string>())) throw InvalidInput(where + ": unknown outlet node");
        b.outlets.push_back(index.at(o.get<std::string>()));
      }
      b.params = JunctionParams::zeros(b.outlets.size());
      if (jj.contains("params")) {
        const auto& p = jj.at("params");
        if (p.contains("R")) b.params.R = num_array(p.at("R"), where + " R");
        if (p.contains("L")) b.params.L = num_array(p.at("L"), where + " L");
        if (p.contains("S")) b.params.S = num_array(p.at("S"), where + " S");
      }
      junctions.push_back(std::move(b));
    }
  }

  if (!j.contains("boundary_conditions")) throw InvalidInput("model needs 'boundary_conditions'");
  const auto& bc = j.at("boundary_conditions");
  if (!bc.contains("inflow")) throw InvalidInput("boundary conditions need an 'inflow'");
  const auto& in = bc.at("inflow");
  FlowInlet inflow;
  inflow.node = node(in, "node", "inflow");
  if (!in.contains("times") || !in.contains("flows")) throw InvalidInput("inflow needs 'times' and 'flows'");
  inflow.times = num_array(in.at("times"), "inflow times");
  inflow.flows = num_array(in.at("flows"), "inflow flows");

  std::vector<WindkesselOutlet> outlets;
  if (bc.contains("windkessels")) {
    for (const auto& w : bc.at("windkessels")) {
      WindkesselOutlet o;
      o.node = node(w, "node", "Windkessel");
      o.name = w.value("name", nodes[o.node]);
      const std::string where = "Windkessel " + o.name;
      o.bc = {req_num(w, "Rp", where), req_num(w, "Rd", where), req_num(w, "C", where), num(w, "Pref", 0.0)};
      outlets.push_back(std::move(o));
    }
  }
  return LpnModel(std::move(nodes), std::move(vessels), std::move(junctions), std::move(outlets), std::move(inflow),
                  period, fluid);
}

LpnModel load_model(const std::filesystem::path& path) {
  try {
    return parse_model(read_text(path));
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

std::string model_to_json(const LpnModel& model) {
  json j;
  j["period"] = model.period();
  j["fluid"] = {{"density", model.fluid().density},
                {"viscosity", model.fluid().viscosity},
                {"stenosis_correction", model.fluid().stenosis_correction}};
  j["nodes"] = model.nodes();
  const auto& names = model.nodes();
  json vessels = json::array();
  for (const auto& v : model.vessels()) {
    json o{{"name", v.name}, {"inlet", names[v.inlet]}, {"outlet", names[v.outlet]}, {"params", vessel_params_json(v.params)}};
    if (v.geometry) {
      const auto& g = *v.geometry;
      o["geometry"] = {{"radius", g.radius},           {"length", g.length},
                       {"youngs_modulus", g.youngs_modulus}, {"wall_thickness", g.wall_thickness},
                       {"proximal_area", g.proximal_area},   {"stenosed_area", g.stenosed_area}};
    }
    vessels.push_back(std::move(o));
  }
  j["vessels"] = std::move(vessels);
  json junctions = json::array();
  for (const auto& jj : model.junctions()) {
    json outs = json::array();
    for (std::size_t o : jj.outlets) outs.push_back(names[o]);
    junctions.push_back({{"name", jj.name}, {"inlet", names[jj.inlet]}, {"outlets", outs},
                         {"params", junction_params_json(jj.params)}});
  }
  j["junctions"] = std::move(junctions);
  json wks = json::array();
  for (const auto& w : model.outlets()) {
    wks.push_back({{"name", w.name}, {"node", names[w.node]}, {"Rp", w.bc.Rp}, {"Rd", w.bc.Rd}, {"C", w.bc.C},
                   {"Pref", w.bc.Pref}});
  }
  j["boundary_conditions"] = {
      {"inflow", {{"node", names[model.inflow().node]}, {"times", model.inflow().times}, {"flows", model.inflow().flows}}},
      {"windkessels", wks}};
  return j.dump(2) + "\n";
}

void save_model(const std::filesystem::path& path, const LpnModel& model) { write_text(path, model_to_json(model)); }

void export_optimized_model(const std::filesystem::path& input, const std::filesystem::path& output,
                            const LpnModel& model, const ElementParams& alpha, const LmReport& report) {
  json j = parse_json(read_text(input), input.string());
  if (alpha.size() != model.layout()->size()) throw DimensionMismatch("alpha does not match the model layout");
  auto& vessels = j.at("vessels");
  if (vessels.size() != model.vessels().size()) throw DimensionMismatch("input model does not match the loaded model");
  for (std::size_t v = 0; v < vessels.size(); ++v) {
    vessels[v]["params"] = vessel_params_json(alpha.vessel(v));
    // Optimized capacitance replaces the rigid-wall floor.
    vessels[v].erase("rigid");
  }
  if (j.contains("junctions")) {
    auto& junctions = j.at("junctions");
    for (std::size_t k = 0; k < junctions.size(); ++k) junctions[k]["params"] = junction_params_json(alpha.junction(k));
  }
  j["lm_report"] = {{"iterations", report.iterations},
                    {"converged", report.converged},
                    {"grad_norm", report.grad_norm},
                    {"inc_norm", report.inc_norm},
                    {"residual_sum", report.residual_sum},
                    {"stenosis_frozen_retry", report.stenosis_frozen_retry},
                    {"grad_history", report.grad_history},
                    {"damping_history", report.damping_history}};
  write_text(output, j.dump(2) + "\n");
}

namespace {

void write_matrix_csv(const std::filesystem::path& path, const std::vector<double>& times, const Matrix& m,
                      const std::vector<std::string>& labels) {
  std::string out = "time";
  for (const auto& l : labels) out += "," + l;
  out += "\n";
  for (Eigen::Index k = 0; k < m.rows(); ++k) {
    out += fmt(times[static_cast<std::size_t>(k)]);
    for (Eigen::Index c = 0; c < m.cols(); ++c) out += "," + fmt(m(k, c));
    out += "\n";
  }
  write_text(path, out);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput(path.string() + ": empty file");
  t.header = split(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": expected " +
                         std::to_string(t.header.size()) + " columns");
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      char* end = nullptr;
      const double x = std::strtod(c.c_str(), &end);
      if (c.empty() || end != c.c_str() + c.size()) {
        throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": bad number '" + c + "'");
      }
      row.push_back(x);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

Matrix table_to_states(const CsvTable& t, const LpnModel& model, const std::filesystem::path& path,
                       std::vector<double>& times) {
  if (t.header.empty() || t.header[0] != "time") throw InvalidInput(path.string() + ": first column must be 'time'");
  const auto labels = trajectory_labels(model);
  std::vector<std::size_t> col(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = std::find(t.header.begin(), t.header.end(), labels[i]);
    if (it == t.header.end()) throw InvalidInput(path.string() + ": missing column '" + labels[i] + "'");
    col[i] = static_cast<std::size_t>(it - t.header.begin());
  }
  times.clear();
  Matrix m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(labels.size()));
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    times.push_back(t.rows[k][0]);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = t.rows[k][col[i]];
    }
  }
  return m;
}

}  // namespace

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj, const LpnModel& model,
                          bool derivatives) {
  traj.validate();
  if (traj.unknown_count() != model.unknown_count()) throw DimensionMismatch("trajectory does not match the model");
  if (derivatives && !traj.ydot) throw InvalidInput("trajectory has no derivatives to write");
  write_matrix_csv(path, traj.times, derivatives ? *traj.ydot : traj.y, trajectory_labels(model));
}

Trajectory read_trajectory_csv(const std::filesystem::path& path, const LpnModel& model,
                               const std::optional<std::filesystem::path>& derivative_path) {
  Trajectory traj;
  traj.y = table_to_states(read_csv(path), model, path, traj.times);
  if (derivative_path) {
    std::vector<double> dtimes;
    traj.ydot = table_to_states(read_csv(*derivative_path), model, *derivative_path, dtimes);
    if (dtimes.size() != traj.times.size()) throw InvalidInput("derivative file has a different number of rows");
    for (std::size_t k = 0; k < dtimes.size(); ++k) {
      if (std::abs(dtimes[k] - traj.times[k]) > 1e-12 * std::max(1.0, std::abs(traj.times[k]))) {
        throw InvalidInput("derivative file times differ from the trajectory");
      }
    }
  }
  traj.validate();
  return traj;
}

void write_observations(const std::filesystem::path& path, const ObservationFile& obs) {
  json j{{"y_obs", vec_json(obs.y_obs)}, {"variance", vec_json(obs.variance)}};
  if (obs.y_true) j["y_true"] = vec_json(*obs.y_true);
  if (obs.snr) j["snr"] = *obs.snr;
  if (obs.seed) j["seed"] = *obs.seed;
  write_text(path, j.dump(2) + "\n");
}

ObservationFile read_observations(const std::filesystem::path& path) {
  const json j = parse_json(read_text(path), path.string());
  ObservationFile o;
  if (!j.contains("y_obs")) throw InvalidInput(path.string() + ": missing 'y_obs'");
  o.y_obs = json_vec(j.at("y_obs"), "y_obs");
  if (j.contains("variance")) {
    o.variance = json_vec(j.at("variance"), "variance");
  } else if (j.contains("snr")) {
    o.variance = o.y_obs.array().square() / j.at("snr").get<double>();
  } else {
    throw InvalidInput(path.string() + ": needs 'variance' or 'snr'");
  }
  if (j.contains("y_true")) o.y_true = json_vec(j.at("y_true"), "y_true");
  if (j.contains("snr")) o.snr = j.at("snr").get<double>();
  if (j.contains("seed")) o.seed = j.at("seed").get<std::uint64_t>();
  if (o.variance.size() != o.y_obs.size()) throw InvalidInput(path.string() + ": variance length differs from y_obs");
  return o;
}

void write_posterior_csv(const std::filesystem::path& path, const ParticleSet& set,
                         const std::vector<std::string>& names) {
  if (names.size() != set.dim()) throw DimensionMismatch("parameter names do not match the particle dimension");
  const Vector w = set.normalized_weights();
  std::string out;
  for (const auto& n : names) out += n + ",";
  out += "weight\n";
  for (Eigen::Index i = 0; i < set.theta.rows(); ++i) {
    for (Eigen::Index c = 0; c < set.theta.cols(); ++c) out += fmt(set.theta(i, c)) + ",";
    out += fmt(w[i]) + "\n";
  }
  write_text(path, out);
}

std::string posterior_summary_json(const SmcResult& result, const std::vector<std::string>& names) {
  const ParticleSet& p = result.posterior;
  const Matrix cov = p.weighted_covariance();
  json covj = json::array();
  for (Eigen::Index r = 0; r < cov.rows(); ++r) covj.push_back(vec_json(cov.row(r).transpose()));
  json ess = json::array(), zeta = json::array(), gamma = json::array(), resampled = json::array(),
       accept = json::array();
  for (const auto& h : result.history) {
    ess.push_back(h.ess);
    zeta.push_back(h.zeta);
    gamma.push_back(h.gamma);
    resampled.push_back(h.resampled);
    accept.push_back(h.acceptance_rate);
  }
  json j{{"parameters", names},
         {"particles", p.size()},
         {"seed", result.seed},
         {"map", vec_json(result.map)},
         {"mean", vec_json(p.weighted_mean())},
         {"covariance", covj},
         {"final_ess", p.ess()},
         {"ess_history", ess},
         {"zeta_schedule", zeta},
         {"gamma_schedule", gamma},
         {"resampled", resampled},
         {"acceptance_rate", accept},
         {"evaluations", result.evaluations},
         {"failed_evaluations", result.failed_evaluations}};
  return j.dump(2) + "\n";
}

void write_posterior_summary(const std::filesystem::path& path, const SmcResult& result,
                             const std::vector<std::string>& names) {
  write_text(path, posterior_summary_json(result, names));
}

void write_grid_csv(const std::filesystem::path& path, const GridPosterior& grid) {
  std::string out;
  for (std::size_t a = 0; a < grid.axes.size(); ++a) out += "axis" + std::to_string(a) + ",";
  out += "cell_weight,density\n";
  for (Eigen::Index f = 0; f < grid.density.size(); ++f) {
    const auto idx = grid.unflatten(static_cast<std::size_t>(f));
    for (std::size_t a = 0; a < grid.axes.size(); ++a) out += fmt(grid.axes[a].node(idx[a])) + ",";
    out += fmt(grid.cell_weight(static_cast<std::size_t>(f))) + "," + fmt(grid.density[f]) + "\n";
  }
  write_text(path, out);
}

std::vector<std::string> theta_names(const LpnModel& model) {
  std::vector<std::string> names;
  for (const auto& w : model.outlets()) names.push_back("theta[" + w.name + "]");
  return names;
}

}  // namespace lpncal
