#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <doctest.h>

#include "support/toys.hpp"
#include "v2geq/scenario.hpp"

using namespace v2geq;
using toys::arc;

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("v2geq-unit-" + name);
  fs::remove_all(p);
  return p;
}

RunInputs reroute() {
  const std::string data = V2GEQ_DATA_DIR;
  RunInputs in;
  in.net_path = data + "/reroute/net.tntp";
  in.trips_path = data + "/reroute/trips.tntp";
  in.case_path = data + "/reroute/case.json";
  in.feeder_path = data + "/reroute/feeder.json";
  return in;
}

std::vector<RunResult> reroute_pair() {
  const RunInputs in = reroute();
  const LoadedCase c = load_case(in);
  std::vector<RunResult> runs;
  for (bool v2g : {false, true}) runs.push_back(run_scenario(c, in, ScenarioSpec{}, v2g, {}));
  return runs;
}

Model one_generator(double tso_max, double gen_max, double floor_kw) {
  const TransportNetwork net = toys::network({1, 2}, {arc(1, 2, 0.5, 10)}, {}, {{{1, 2}, {0.0, 0.0}}});
  const PowerFeeder f = toys::feeder(
      {toys::plain_bus(1), toys::demand_bus(2, floor_kw, -0.002, 0.5), toys::demand_bus(3, 50, -0.002, 0.5)},
      {toys::line(1, 2), toys::line(2, 3)}, tso_max);
  MarketParams m;
  m.lses.push_back({"LSE1", {toys::generator(2, 0.001, 0.05, gen_max)}});
  m.shedding_penalty = 2.0;
  return toys::model(net, f, m);
}

}  // namespace

TEST_CASE("DLMP at a lone generator bus is its marginal cost") {
  const toys::Solved s = toys::solve_model(one_generator(5000, 1000, 100));
  REQUIRE(s.v.pass());
  const EquilibriumSolution sol = extract_solution(s.a, s.r.z);
  const auto dlmp = compute_dlmp(sol);
  const Generator& g = s.a.model.market.lses[0].generators[0];
  const double out = toys::at(s.r.z, s.a.layout.gen[0][0]);
  REQUIRE(out > 1.0);
  CHECK(dlmp.at(2) == doctest::Approx(2.0 * g.quad_coeff * out + g.lin_coeff));
  // Nothing binds, so the copper plate prices every bus alike.
  CHECK(dlmp.at(3) == doctest::Approx(dlmp.at(2)));
  CHECK(dlmp.count(1) == 0);
}

TEST_CASE("social cost") {
  SUBCASE("zero demand costs nothing") {
    toys::CoupledSpec spec;
    spec.ev_demand = spec.fv_demand = spec.floor_kw = 0.0;
    spec.b = 0.05;
    const toys::Solved s = toys::solve_model(toys::coupled(spec));
    const SocialCost c = compute_social_cost(s.a, extract_solution(s.a, s.r.z));
    CHECK(std::abs(c.generation) < 1e-9);
    CHECK(std::abs(c.travel_time) < 1e-9);
    CHECK(std::abs(c.degradation) < 1e-9);
    CHECK(std::abs(c.shedding) < 1e-9);
  }
  SUBCASE("shedding is rho times LS") {
    const toys::Solved s = toys::solve_model(one_generator(0, 120, 300));
    REQUIRE(s.v.pass());
    const EquilibriumSolution sol = extract_solution(s.a, s.r.z);
    const MetricsReport m = compute_metrics(s.a, sol);
    REQUIRE(m.total_shed > 1.0);
    CHECK(m.social_cost.shedding == s.a.model.market.shedding_penalty * m.total_shed);
    CHECK(m.social_cost.total() == doctest::Approx(m.social_cost.generation + m.social_cost.travel_time +
                                                   m.social_cost.degradation + m.social_cost.shedding));
  }
}

TEST_CASE("EV behaviour shares") {
  SUBCASE("all traffic on plain paths visits no station") {
    const toys::Solved s = toys::solve_model(toys::coupled({}));
    const EvStats ev = report_ev_behavior(s.a, extract_solution(s.a, s.r.z));
    CHECK(ev.visitation_share == 0.0);
    CHECK(ev.v2g_share == 0.0);
    CHECK(ev.active_discharge_ods == 0);
  }
  SUBCASE("without V2G nothing discharges") {
    toys::CoupledSpec spec;
    spec.v2g = false;
    spec.floor_kw = 800;
    spec.tso_max = 100;
    const toys::Solved s = toys::solve_model(toys::coupled(spec));
    REQUIRE(s.v.pass());
    const EvStats ev = report_ev_behavior(s.a, extract_solution(s.a, s.r.z));
    CHECK(ev.v2g_share == 0.0);
    CHECK(std::abs(ev.gross_discharge_kwh) < 1e-9);
  }
  SUBCASE("discharge starts where the price pays for the detour") {
    // Discharging 38 kWh at node 2 costs w (W + 38 / P) in time, so it pays
    // once alpha- - c_deg reaches that over 38.
    const EvParams ev = toys::ev_params();
    const double energy = ev.battery_kwh - 0.2 * 10.0 - ev.post_discharge_kwh;
    const double threshold =
        ev.degradation_per_kwh + ev.value_of_time_ev * (0.05 + energy / ev.pile_kw) / energy;
    bool saw_idle = false, saw_active = false;
    for (double floor_kw : {300.0, 500.0, 800.0}) {
      toys::CoupledSpec spec;
      spec.floor_kw = floor_kw;
      spec.tso_max = 100;
      const toys::Solved s = toys::solve_model(toys::coupled(spec));
      REQUIRE(s.v.pass());
      const EquilibriumSolution sol = extract_solution(s.a, s.r.z);
      const EvStats st = report_ev_behavior(s.a, sol);
      const double alpha = sol.stations[0].alpha_discharge;
      if (st.v2g_share > kActiveDischargeFlow) {
        saw_active = true;
        CHECK(alpha == doctest::Approx(threshold).epsilon(1e-6));
        CHECK(st.active_discharge_ods == 1);
        CHECK(st.gross_discharge_kwh == doctest::Approx(sol.stations[0].p_discharge));
      } else {
        saw_idle = true;
        CHECK(alpha <= threshold + 1e-9);
        CHECK(st.active_discharge_ods == 0);
      }
    }
    CHECK(saw_idle);
    CHECK(saw_active);
  }
}

TEST_CASE("outputs: two runs, deterministic CSVs, verifiable solution files") {
  const auto runs = reroute_pair();
  for (const RunResult& r : runs) {
    REQUIRE(r.verify.pass());
    REQUIRE(r.solve.report.status == SolveStatus::Converged);
  }
  const fs::path a = scratch_dir("a"), b = scratch_dir("b");
  emit_outputs(runs, a.string());
  emit_outputs(reroute_pair(), b.string());

  std::istringstream metrics(slurp(a / "metrics.csv"));
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(metrics, line)) rows.push_back(line);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].rfind("base,off,", 0) == 0);
  CHECK(rows[2].rfind("base,on,", 0) == 0);

  for (const char* f : {"metrics.csv", "dlmp.csv", "paths_used.csv", "dominant_paths.csv"}) {
    INFO(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  for (const char* f : {"supply_mix.svg", "station_net_load.svg", "load_shedding.svg", "max_dlmp.svg",
                        "social_cost.svg"}) {
    CHECK(slurp(a / f).rfind("<svg", 0) == 0);
  }

  std::string summary;
  const VerifyReport v = verify_solution_file((a / "base-v2g-on" / "solution.json").string(), &summary);
  INFO(summary);
  CHECK(v.pass());
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("dominant path moves to the longer route once V2G pays") {
  const auto runs = reroute_pair();
  const DominantPath& off = runs[0].metrics.dominant.at(0);
  const DominantPath& on = runs[1].metrics.dominant.at(0);
  CHECK(off.nodes == std::vector<NodeId>{1, 2, 4});
  CHECK(on.nodes == std::vector<NodeId>{1, 3, 4});
  CHECK(on.actions.find('-') != std::string::npos);
  CHECK(on.distance_km > off.distance_km);
  CHECK(on.cost < off.cost);
  CHECK(on.time_cost + on.energy_cost == doctest::Approx(on.cost));
  CHECK(off.time_cost + off.energy_cost == doctest::Approx(off.cost));
  CHECK(on.energy_cost < 0.0);
}
