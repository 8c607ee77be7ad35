#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "v2geq/assembly.hpp"
#include "v2geq/net_model.hpp"
#include "v2geq/solver.hpp"

namespace v2geq {

// ------------------------------------------------------------ solution

struct ArcState {
  NodeId tail = 0, head = 0;
  double flow = 0.0;    // vehicles per period
  double time_h = 0.0;
};

struct StationState {
  NodeId node = 0;
  BusId bus = 0;
  double flow = 0.0;  // vehicles acting here per period
  double wait_h = 0.0;
  double p_charge = 0.0, p_discharge = 0.0;        // kW bought / sold by the CNO
  double alpha_charge = 0.0, alpha_discharge = 0.0;  // $/kWh
  double capacity_price = 0.0;                      // $/kWh surcharge when full
  double net_load() const { return p_charge - p_discharge; }
};

struct BusState {
  BusId id = 0;
  bool root = false;
  bool energized = true;  // in the TSO's island
  double dlmp = 0.0;      // w, or the root balance price at the TSO bus
  double p_dso = 0.0, p_tso = 0.0, u2 = 0.0;
  double sales = 0.0, generation = 0.0, shed = 0.0, floor = 0.0;
  double retail_price = 0.0;  // b + a * sales, demand buses only
};

struct LineState {
  BusId from = 0, to = 0;  // oriented away from the island root
  double p = 0.0, q = 0.0;
};

struct PathState {
  OdPair od;
  bool ev = true;
  std::size_t index = 0;  // within the OD's ev or fv list
  double flow = 0.0;
  double cost = 0.0;  // at equilibrium prices and congestion
};

struct OdState {
  OdPair od;
  double demand_ev = 0.0, demand_fv = 0.0;
  double cost_ev = 0.0, cost_fv = 0.0;
};

struct LseState {
  std::string name;
  double generation = 0.0, sales = 0.0;
  double to_cno = 0.0, from_cno = 0.0, from_tso = 0.0;
  double balance_price = 0.0;
};

struct EquilibriumSolution {
  Eigen::VectorXd z;
  std::vector<ArcState> arcs;
  std::vector<StationState> stations;
  std::vector<BusState> buses;
  std::vector<LineState> lines;
  std::vector<PathState> paths;
  std::vector<OdState> ods;
  std::vector<LseState> lses;
  double tso_import = 0.0;
};

// Reads the named quantities out of an MCP point.
EquilibriumSolution extract_solution(const Assembly& a, const Eigen::VectorXd& z);

// ------------------------------------------------------------ checking

struct VerifyReport {
  double natural_residual = 0.0;   // min-function form, max norm
  double complementarity = 0.0;
  double wardrop_gap = 0.0;        // max over ODs of the relative gap
  double clearing_residual = 0.0;  // clearing rows, kW
  double voltage_residual = 0.0;   // voltage-drop rows, squared p.u.
  double bound_violation = 0.0;
  std::vector<std::string> failures;
  bool pass() const { return failures.empty(); }
};

struct VerifyTolerances {
  double natural = 1e-6;
  double wardrop = 1e-4;  // relative to 1 + C
  double clearing = 1e-8;
  double voltage = 1e-8;
  double bounds = 1e-8;
  double used_flow = 1e-6;
};

// Re-derives every check from the model data and z alone: link costs,
// clearing balances and voltage drops are recomputed here rather than
// read from the assembled matrices.
VerifyReport verify_solution(const Assembly& a, const Eigen::VectorXd& z,
                             const VerifyTolerances& tol = {});

// -------------------------------------------------------------- metrics

struct SocialCost {
  double generation = 0.0;
  double travel_time = 0.0;
  double degradation = 0.0;
  double shedding = 0.0;
  double total() const { return generation + travel_time + degradation + shedding; }
};

struct EvStats {
  double visitation_share = 0.0;  // EV flow on paths with a station action
  double v2g_share = 0.0;         // EV flow on paths with a discharge
  double gross_charge_kwh = 0.0;
  double gross_discharge_kwh = 0.0;
  double dwell_hours = 0.0;
  int active_discharge_ods = 0;
};

struct DominantPath {
  OdPair od;
  std::vector<NodeId> nodes;
  std::string actions;  // e.g. "+12(32.0) -18(8.4)"
  std::string pattern;
  double flow = 0.0;
  double share = 0.0;
  double distance_km = 0.0;
  double cost = 0.0;
  double time_cost = 0.0;    // value of time over travel, wait and charge time
  double energy_cost = 0.0;  // payments less revenues, degradation included
};

struct MetricsReport {
  std::string scenario;
  bool v2g = true;
  std::string status;
  std::map<BusId, double> dlmp;  // non-root buses
  double max_dlmp = 0.0;
  double total_shed = 0.0;
  double generation = 0.0;  // LSE generators, kW
  double tso_import = 0.0;
  double v2g_supply = 0.0;  // CNO sales to LSEs
  SocialCost social_cost;
  EvStats ev;
  std::vector<DominantPath> dominant;
  std::map<NodeId, double> station_net_load;
};

// Active-discharge threshold on an OD's discharge-path flow.
inline constexpr double kActiveDischargeFlow = 1e-6;

std::map<BusId, double> compute_dlmp(const EquilibriumSolution& s);
SocialCost compute_social_cost(const Assembly& a, const EquilibriumSolution& s);
EvStats report_ev_behavior(const Assembly& a, const EquilibriumSolution& s);
std::vector<DominantPath> dominant_paths(const Assembly& a, const EquilibriumSolution& s);
MetricsReport compute_metrics(const Assembly& a, const EquilibriumSolution& s);

// ------------------------------------------------------------- pipeline

struct RunInputs {
  std::string net_path, trips_path, case_path, feeder_path;
  std::optional<std::string> scenario_path;
  std::optional<bool> v2g;  // overrides the scenario file
};

struct LoadedCase {
  TransportNetwork net;  // as loaded, before the scenario's EV share
  PowerFeeder feeder;    // before the scenario
  CaseConfig config;
};

LoadedCase load_case(const RunInputs& in);

struct RunResult {
  std::string id;  // "<scenario>-v2g-<on|off>"
  RunInputs inputs;
  ScenarioSpec scenario;
  bool v2g = true;
  Assembly assembly;
  SolveResult solve;
  EquilibriumSolution solution;
  VerifyReport verify;
  MetricsReport metrics;
  std::vector<std::string> unbounded;
};

// Builds the model for one scenario and V2G setting, without solving.
Model build_model(const LoadedCase& c, const ScenarioSpec& scenario, bool v2g,
                  unsigned path_threads = 1);

RunResult run_scenario(const LoadedCase& c, const RunInputs& inputs,
                       const ScenarioSpec& scenario, bool v2g,
                       const SolverConfig& solver, unsigned path_threads = 1);

// Scenario x {V2G on, off}; runs in parallel up to `threads` (V2GEQ_THREADS
// when 0) and returns results in input order.
std::vector<RunResult> run_sweep(const LoadedCase& c, const RunInputs& inputs,
                                 const std::vector<std::string>& scenario_paths,
                                 const SolverConfig& solver, unsigned threads = 0);

unsigned thread_budget();

// --------------------------------------------------------------- output

nlohmann::json solution_to_json(const RunResult& r);
void emit_outputs(const std::vector<RunResult>& runs, const std::string& out_dir);

// Checks a solution.json against its own inputs; also used by `verify`.
VerifyReport verify_solution_file(const std::string& path, std::string* summary = nullptr);

// Minimal SVG bar chart; series share the category axis. Stacked series are
// drawn on top of each other, otherwise side by side.
struct BarSeries {
  std::string name;
  std::vector<double> values;
};
std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& categories,
                          const std::vector<BarSeries>& series, bool stacked);

}  // namespace v2geq
