#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "lpncal/errors.hpp"
#include "lpncal/forward_solver.hpp"
#include "lpncal/io.hpp"
#include "networks.hpp"

using namespace lpncal;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("lpncal_io_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

const char* kGeometryModel = R"({
  "period": 0.8,
  "nodes": ["in", "mid", "out"],
  "vessels": [
    {"name": "aorta", "inlet": "in", "outlet": "mid",
     "geometry": {"radius": 1.1, "length": 4.0, "youngs_modulus": 4e6, "wall_thickness": 0.1,
                  "stenosed_area": 2.0}},
    {"name": "iliac", "inlet": "mid", "outlet": "out", "rigid": true,
     "geometry": {"radius": 0.5, "length": 6.0}}
  ],
  "boundary_conditions": {
    "inflow": {"node": "in", "times": [0.0, 0.2, 0.4, 0.6], "flows": [60, 100, 70, 50]},
    "windkessels": [{"node": "out", "Rp": 120, "Rd": 1100, "C": 1e-4, "Pref": 5}]
  },
  "notes": "kept on export"
})";

}  // namespace

TEST(ModelJson, RoundTripIsExact) {
  const LpnModel m = lpncal::testing::three_outlet_tree();
  const LpnModel back = parse_model(model_to_json(m));
  EXPECT_EQ(back.nodes(), m.nodes());
  EXPECT_TRUE(back.nominal_params().values() == m.nominal_params().values());
  ASSERT_EQ(back.outlets().size(), m.outlets().size());
  for (std::size_t i = 0; i < m.outlets().size(); ++i) {
    EXPECT_EQ(back.outlets()[i].bc.Rp, m.outlets()[i].bc.Rp);
    EXPECT_EQ(back.outlets()[i].bc.Rd, m.outlets()[i].bc.Rd);
    EXPECT_EQ(back.outlets()[i].bc.C, m.outlets()[i].bc.C);
    EXPECT_EQ(back.outlets()[i].name, m.outlets()[i].name);
  }
  EXPECT_EQ(back.inflow().flows, m.inflow().flows);
  EXPECT_EQ(back.period(), m.period());
  EXPECT_EQ(model_to_json(back), model_to_json(m));
}

TEST(ModelJson, GeometryAndRigidVessels) {
  const LpnModel m = parse_model(kGeometryModel);
  ASSERT_EQ(m.vessels().size(), 2u);
  const auto& aorta = m.vessels()[0];
  ASSERT_TRUE(aorta.geometry.has_value());
  const VesselParams expect = derive_geometric_params(*aorta.geometry, m.fluid());
  EXPECT_EQ(aorta.params.R, expect.R);
  EXPECT_EQ(aorta.params.C, expect.C);
  EXPECT_GT(aorta.params.S, 0.0);
  EXPECT_EQ(m.vessels()[1].params.C, kRigidCapacitanceFloor);
  EXPECT_GT(m.vessels()[1].params.R, 0.0);
  EXPECT_EQ(m.outlets()[0].bc.Pref, 5.0);
  EXPECT_EQ(m.outlets()[0].name, "out");
  EXPECT_EQ(m.period(), 0.8);

  // Geometry survives a round trip alongside the derived parameters.
  const LpnModel back = parse_model(model_to_json(m));
  EXPECT_TRUE(back.nominal_params().values() == m.nominal_params().values());
  ASSERT_TRUE(back.vessels()[0].geometry.has_value());
  EXPECT_EQ(back.vessels()[0].geometry->stenosed_area, 2.0);
}

TEST(ModelJson, ExplicitZeroCapacitanceBecomesTheRigidFloor) {
  json j = json::parse(kGeometryModel);
  j["vessels"][1].erase("geometry");
  j["vessels"][1]["params"] = {{"R", 3.0}, {"C", 0.0}};
  const LpnModel m = parse_model(j.dump());
  EXPECT_EQ(m.vessels()[1].params.R, 3.0);
  EXPECT_EQ(m.vessels()[1].params.C, kRigidCapacitanceFloor);
}

TEST(ModelJson, ReportsBadInput) {
  EXPECT_THROW(parse_model("{"), InvalidInput);
  EXPECT_THROW(parse_model("[]"), InvalidInput);
  json j = json::parse(kGeometryModel);
  j["vessels"][0]["outlet"] = "nowhere";
  EXPECT_THROW(parse_model(j.dump()), InvalidInput);
  j = json::parse(kGeometryModel);
  j["vessels"][0].erase("geometry");
  EXPECT_THROW(parse_model(j.dump()), InvalidInput);
  j = json::parse(kGeometryModel);
  j["boundary_conditions"]["windkessels"][0].erase("Rd");
  EXPECT_THROW(parse_model(j.dump()), InvalidInput);
  j = json::parse(kGeometryModel);
  j.erase("period");
  EXPECT_THROW(parse_model(j.dump()), InvalidInput);
  EXPECT_THROW(load_model("/nonexistent/model.json"), InvalidInput);
}

TEST(ModelJson, SaveAndLoad) {
  TempDir dir;
  const LpnModel m = lpncal::testing::two_branch_tree();
  save_model(dir / "m.json", m);
  EXPECT_TRUE(load_model(dir / "m.json").nominal_params().values() == m.nominal_params().values());
}

TEST(ExportOptimizedModel, ReplacesParametersAndAppendsTheReport) {
  TempDir dir;
  spit(dir / "in.json", kGeometryModel);
  const LpnModel m = load_model(dir / "in.json");
  ElementParams alpha = m.nominal_params();
  alpha.values() *= 1.5;
  LmReport rep;
  rep.iterations = 7;
  rep.converged = true;
  rep.grad_history = {3.0, 1.0, 0.1};
  export_optimized_model(dir / "in.json", dir / "out.json", m, alpha, rep);

  const LpnModel opt = load_model(dir / "out.json");
  EXPECT_TRUE(opt.nominal_params().values() == alpha.values());
  const json j = json::parse(slurp(dir / "out.json"));
  EXPECT_EQ(j.at("notes"), "kept on export");
  EXPECT_EQ(j.at("lm_report").at("iterations"), 7);
  EXPECT_EQ(j.at("lm_report").at("converged"), true);
  EXPECT_EQ(j.at("lm_report").at("grad_history").size(), 3u);
  // The input is untouched.
  EXPECT_EQ(slurp(dir / "in.json"), kGeometryModel);
}

TEST(TrajectoryCsv, RoundTripWithDerivatives) {
  TempDir dir;
  const LpnModel m = lpncal::testing::three_outlet_tree();
  IntegratorConfig cfg;
  cfg.steps_per_cycle = 50;
  const Trajectory t = run_cycles(m, m.nominal_params(), m.nominal_bcs(), cfg).trajectory;
  write_trajectory_csv(dir / "traj.csv", t, m);
  write_trajectory_csv(dir / "traj_dot.csv", t, m, true);
  const Trajectory back = read_trajectory_csv(dir / "traj.csv", m, dir / "traj_dot.csv");
  EXPECT_EQ(back.times, t.times);
  EXPECT_TRUE(back.y == t.y);
  ASSERT_TRUE(back.ydot.has_value());
  EXPECT_TRUE(*back.ydot == *t.ydot);

  const Trajectory plain = read_trajectory_csv(dir / "traj.csv", m);
  EXPECT_FALSE(plain.ydot.has_value());
  const std::string header = slurp(dir / "traj.csv").substr(0, 40);
  EXPECT_EQ(header.rfind("time,inlet:P,inlet:Q,", 0), 0u);
}

TEST(TrajectoryCsv, ColumnsAreMatchedByLabel) {
  TempDir dir;
  const auto w = lpncal::testing::constant_inflow(2.0);
  const LpnModel m = lpncal::testing::vessel_into_windkessel({1, 1e-3, 0.1, 0}, {10, 90, 1e-3, 0}, w);
  spit(dir / "t.csv", "time,out:Q,in:Q,extra,out:P,in:P\n0,1,2,9,3,4\n0.5,5,6,9,7,8\n");
  const Trajectory t = read_trajectory_csv(dir / "t.csv", m);
  ASSERT_EQ(t.y.rows(), 2);
  EXPECT_EQ(t.y(0, 0), 4.0);
  EXPECT_EQ(t.y(0, 1), 2.0);
  EXPECT_EQ(t.y(0, 2), 3.0);
  EXPECT_EQ(t.y(1, 3), 5.0);
}

TEST(TrajectoryCsv, ReportsBadFiles) {
  TempDir dir;
  const auto w = lpncal::testing::constant_inflow(2.0);
  const LpnModel m = lpncal::testing::vessel_into_windkessel({1, 1e-3, 0.1, 0}, {10, 90, 1e-3, 0}, w);
  spit(dir / "missing.csv", "time,in:P,in:Q,out:P\n0,1,2,3\n");
  EXPECT_THROW(read_trajectory_csv(dir / "missing.csv", m), InvalidInput);
  spit(dir / "bad.csv", "time,in:P,in:Q,out:P,out:Q\n0,1,x,3,4\n");
  EXPECT_THROW(read_trajectory_csv(dir / "bad.csv", m), InvalidInput);
  spit(dir / "short.csv", "time,in:P,in:Q,out:P,out:Q\n0,1,3,4\n");
  EXPECT_THROW(read_trajectory_csv(dir / "short.csv", m), InvalidInput);
  spit(dir / "ok.csv", "time,in:P,in:Q,out:P,out:Q\n0,1,2,3,4\n0.5,1,2,3,4\n");
  spit(dir / "dot.csv", "time,in:P,in:Q,out:P,out:Q\n0,0,0,0,0\n0.4,0,0,0,0\n");
  EXPECT_THROW(read_trajectory_csv(dir / "ok.csv", m, dir / "dot.csv"), InvalidInput);
}

TEST(ObservationsJson, RoundTrip) {
  TempDir dir;
  ObservationFile o;
  o.y_obs = Vector{{80.5, 121.25, 1.5}};
  o.variance = Vector{{64.8, 147.0, 0.0225}};
  o.y_true = Vector{{80.0, 120.0, 1.5}};
  o.snr = 100.0;
  o.seed = 12345678901234ULL;
  write_observations(dir / "obs.json", o);
  const ObservationFile back = read_observations(dir / "obs.json");
  EXPECT_TRUE(back.y_obs == o.y_obs);
  EXPECT_TRUE(back.variance == o.variance);
  EXPECT_TRUE(*back.y_true == *o.y_true);
  EXPECT_EQ(*back.snr, 100.0);
  EXPECT_EQ(*back.seed, 12345678901234ULL);
}

TEST(ObservationsJson, VarianceFromSnr) {
  TempDir dir;
  spit(dir / "obs.json", R"({"y_obs": [10, 20], "snr": 100})");
  const ObservationFile o = read_observations(dir / "obs.json");
  EXPECT_DOUBLE_EQ(o.variance[0], 1.0);
  EXPECT_DOUBLE_EQ(o.variance[1], 4.0);
  spit(dir / "bad.json", R"({"y_obs": [10, 20]})");
  EXPECT_THROW(read_observations(dir / "bad.json"), InvalidInput);
  spit(dir / "bad2.json", R"({"y_obs": [10, 20], "variance": [1]})");
  EXPECT_THROW(read_observations(dir / "bad2.json"), InvalidInput);
}

TEST(PosteriorOutput, CsvAndSummary) {
  TempDir dir;
  SmcResult r;
  r.posterior.theta = Matrix{{5.0, 5.5}, {5.2, 5.4}, {4.9, 5.6}};
  r.posterior.log_weights = Vector{{0.0, -1.0, -2.0}};
  r.posterior.log_likelihood = Vector::Zero(3);
  r.posterior.log_prior = Vector::Zero(3);
  r.posterior.gamma = 1.0;
  r.map = r.posterior.theta.row(0).transpose();
  r.seed = 4;
  r.evaluations = 30;
  r.history.push_back({0.4, 0.4, 2.1, true, 0.3});
  r.history.push_back({0.6, 1.0, 2.5, false, 0.0});
  const std::vector<std::string> names{"theta[a]", "theta[b]"};
  write_posterior_csv(dir / "post.csv", r.posterior, names);
  write_posterior_summary(dir / "post.json", r, names);

  std::istringstream csv(slurp(dir / "post.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "theta[a],theta[b],weight");
  double wsum = 0.0;
  int rows = 0;
  while (std::getline(csv, line)) {
    wsum += std::stod(line.substr(line.rfind(',') + 1));
    ++rows;
  }
  EXPECT_EQ(rows, 3);
  EXPECT_NEAR(wsum, 1.0, 1e-12);

  const json j = json::parse(slurp(dir / "post.json"));
  EXPECT_EQ(j.at("parameters"), json(names));
  EXPECT_EQ(j.at("seed"), 4);
  EXPECT_EQ(j.at("evaluations"), 30);
  EXPECT_EQ(j.at("zeta_schedule").size(), 2u);
  EXPECT_EQ(j.at("gamma_schedule").back(), 1.0);
  EXPECT_EQ(j.at("map").at(0), 5.0);
  EXPECT_EQ(j.at("covariance").size(), 2u);
  EXPECT_NEAR(j.at("mean").at(0).get<double>(), r.posterior.weighted_mean()[0], 1e-15);
  EXPECT_THROW(write_posterior_csv(dir / "x.csv", r.posterior, {"one"}), DimensionMismatch);
}

TEST(GridCsv, OneRowPerNode) {
  TempDir dir;
  GridPosterior g;
  g.axes = {{2.0, 8.0, 4}, {3.0, 6.0, 3}};
  g.coupling = {0, 1};
  g.density = Vector::Constant(12, 1.0 / 6.0);
  write_grid_csv(dir / "grid.csv", g);
  std::istringstream csv(slurp(dir / "grid.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "axis0,axis1,cell_weight,density");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 12);
}

TEST(ThetaNames, FollowOutletOrder) {
  const LpnModel m = lpncal::testing::three_outlet_tree();
  EXPECT_EQ(theta_names(m), (std::vector<std::string>{"theta[out0]", "theta[out1]", "theta[out2]"}));
}
