#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "v2geq/error.hpp"
#include "v2geq/scenario.hpp"

namespace fs = std::filesystem;
using namespace v2geq;

namespace {

struct Common {
  std::string data = V2GEQ_DATA_DIR;
  std::string net, trips, case_path, feeder, scenario, v2g, out = "results";
  std::string trace;
};

void add_inputs(CLI::App* cmd, Common& c) {
  cmd->add_option("--data", c.data, "directory holding the shipped data sets");
  cmd->add_option("--net", c.net, "TNTP network file");
  cmd->add_option("--trips", c.trips, "TNTP trips file");
  cmd->add_option("--case", c.case_path, "case JSON (stations, EV and market parameters)");
  cmd->add_option("--feeder", c.feeder, "feeder JSON");
}

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

// Missing paths fall back to the Sioux Falls / IEEE-123 case; the case file
// defaults to case.json beside the network file.
RunInputs resolve(const Common& c) {
  const fs::path data(c.data);
  RunInputs in;
  in.net_path = absolute(c.net.empty() ? (data / "sioux_falls/net.tntp").string() : c.net);
  in.trips_path = absolute(c.trips.empty() ? (data / "sioux_falls/trips.tntp").string() : c.trips);
  if (!c.case_path.empty()) {
    in.case_path = absolute(c.case_path);
  } else {
    in.case_path = absolute((fs::path(in.net_path).parent_path() / "case.json").string());
  }
  in.feeder_path = absolute(c.feeder.empty() ? (data / "ieee123/feeder.json").string() : c.feeder);
  if (!c.scenario.empty()) in.scenario_path = absolute(c.scenario);
  if (c.v2g == "on") in.v2g = true;
  if (c.v2g == "off") in.v2g = false;
  return in;
}

double shown(double v) { return std::abs(v) < 1e-9 ? 0.0 : v; }

void print_run(const RunResult& r) {
  std::cerr << r.id << ": " << r.metrics.status << " after " << r.solve.report.iterations
            << " iterations, natural residual " << r.verify.natural_residual << ", max DLMP "
            << r.metrics.max_dlmp << ", LS " << shown(r.metrics.total_shed) << " kW, social cost "
            << r.metrics.social_cost.total() << "\n";
  for (const std::string& w : r.assembly.warnings) std::cerr << "  warning: " << w << "\n";
  for (const std::string& f : r.verify.failures) std::cerr << "  check failed: " << f << "\n";
}

bool run_ok(const RunResult& r) {
  return r.solve.report.status != SolveStatus::Failed && r.verify.pass();
}

SolverConfig solver_for(const LoadedCase& lc) {
  SolverConfig cfg = solver_config_from_json(lc.config.solver);
  cfg.validate();
  return cfg;
}

int cmd_solve(const Common& c) {
  const RunInputs in = resolve(c);
  const LoadedCase lc = load_case(in);
  const ScenarioSpec spec = in.scenario_path ? load_scenario_file(*in.scenario_path) : ScenarioSpec{};
  const bool v2g = in.v2g.value_or(spec.v2g.value_or(true));
  SolverConfig cfg = solver_for(lc);
  std::ofstream trace;
  if (!c.trace.empty()) {
    trace.open(c.trace);
    if (!trace) throw std::runtime_error("cannot open " + c.trace + " for writing");
    cfg.trace = &trace;
  }
  RunInputs recorded = in;
  recorded.v2g = v2g;
  std::vector<RunResult> runs;
  runs.push_back(run_scenario(lc, recorded, spec, v2g, cfg, thread_budget()));
  print_run(runs.front());
  emit_outputs(runs, c.out);
  return run_ok(runs.front()) ? 0 : 2;
}

int cmd_sweep(const Common& c, bool all, const std::vector<std::string>& listed) {
  const RunInputs in = resolve(c);
  std::vector<std::string> scenarios;
  for (const std::string& s : listed) scenarios.push_back(absolute(s));
  if (all) {
    const fs::path dir = fs::path(in.net_path).parent_path() / "scenarios";
    if (!fs::is_directory(dir)) throw std::runtime_error("no scenario directory at " + dir.string());
    std::vector<std::string> found;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto ext = e.path().extension();
      if (ext == ".toml" || ext == ".json") found.push_back(absolute(e.path().string()));
    }
    std::sort(found.begin(), found.end());
    // Base, Stress, Island first when present, as in the figures.
    auto rank = [](const std::string& p) {
      const std::string stem = fs::path(p).stem().string();
      if (stem == "base") return 0;
      if (stem == "stress") return 1;
      if (stem == "island") return 2;
      return 3;
    };
    std::stable_sort(found.begin(), found.end(),
                     [&](const std::string& a, const std::string& b) { return rank(a) < rank(b); });
    scenarios.insert(scenarios.end(), found.begin(), found.end());
  }
  if (scenarios.empty()) throw std::runtime_error("sweep needs --all or at least one scenario file");
  const LoadedCase lc = load_case(in);
  const auto runs = run_sweep(lc, in, scenarios, solver_for(lc));
  bool ok = true;
  for (const RunResult& r : runs) {
    print_run(r);
    ok = ok && run_ok(r);
  }
  emit_outputs(runs, c.out);
  return ok ? 0 : 2;
}

int cmd_gen_paths(const Common& c, const std::string& out, std::optional<std::size_t> k) {
  const RunInputs in = resolve(c);
  const LoadedCase lc = load_case(in);
  ScenarioSpec spec;
  LoadedCase adjusted = lc;
  if (k) adjusted.config.paths.k = *k;
  const bool v2g = in.v2g.value_or(true);
  const Model m = build_model(adjusted, spec, v2g, thread_budget());
  const std::string text = catalog_to_json(m.paths).dump(1) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot open " + out + " for writing");
    f << text;
  }
  std::size_t ev = 0, fv = 0;
  for (const auto& od : m.paths.ods) {
    ev += od.ev.size();
    fv += od.fv.size();
  }
  std::cerr << m.paths.ods.size() << " OD pairs, " << ev << " EV paths, " << fv << " FV paths\n";
  return 0;
}

int cmd_dump(const Common& c, const std::string& out) {
  const RunInputs in = resolve(c);
  const LoadedCase lc = load_case(in);
  const ScenarioSpec spec = in.scenario_path ? load_scenario_file(*in.scenario_path) : ScenarioSpec{};
  const bool v2g = in.v2g.value_or(spec.v2g.value_or(true));
  const Assembly a = assemble_mcp(build_model(lc, spec, v2g, thread_budget()));
  const std::string text = dump_mcp(a).dump(1) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot open " + out + " for writing");
    f << text;
  }
  std::cerr << "dimension " << a.mcp.size() << "\n";
  return 0;
}

int cmd_verify(const std::string& path) {
  std::string summary;
  const VerifyReport r = verify_solution_file(path, &summary);
  std::cout << (r.pass() ? "PASS" : "FAIL") << " " << path << ": " << summary << "\n";
  for (const std::string& f : r.failures) std::cout << "  " << f << "\n";
  return r.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled EV traffic / distribution grid market equilibrium with V2G"};
  app.require_subcommand(1);
  Common common;

  auto* solve_cmd = app.add_subcommand("solve", "solve one scenario and write reports");
  add_inputs(solve_cmd, common);
  solve_cmd->add_option("--scenario", common.scenario, "scenario TOML or JSON");
  solve_cmd->add_option("--v2g", common.v2g, "on or off (overrides the scenario)")
      ->check(CLI::IsMember({"on", "off"}));
  solve_cmd->add_option("--out", common.out, "output directory");
  solve_cmd->add_option("--trace", common.trace, "write the solver trace (JSON lines) here");

  bool all = false;
  std::vector<std::string> listed;
  auto* sweep_cmd = app.add_subcommand("sweep", "every scenario with V2G off and on");
  add_inputs(sweep_cmd, common);
  sweep_cmd->add_flag("--all", all, "use every file in the scenarios/ directory beside the network");
  sweep_cmd->add_option("--scenario", listed, "scenario files");
  sweep_cmd->add_option("--out", common.out, "output directory");

  std::string paths_out;
  std::optional<std::size_t> k;
  auto* paths_cmd = app.add_subcommand("gen-paths", "write the expanded path catalog as JSON");
  add_inputs(paths_cmd, common);
  paths_cmd->add_option("--v2g", common.v2g, "on or off")->check(CLI::IsMember({"on", "off"}));
  paths_cmd->add_option("--k", k, "base paths per OD");
  paths_cmd->add_option("--out", paths_out, "output file, - for stdout");

  std::string dump_out;
  auto* dump_cmd = app.add_subcommand("dump-mcp", "write the assembled MCP as JSON");
  add_inputs(dump_cmd, common);
  dump_cmd->add_option("--scenario", common.scenario, "scenario TOML or JSON");
  dump_cmd->add_option("--v2g", common.v2g, "on or off")->check(CLI::IsMember({"on", "off"}));
  dump_cmd->add_option("--out", dump_out, "output file, - for stdout");

  std::string solution;
  auto* verify_cmd = app.add_subcommand("verify", "re-check a solution.json against its inputs");
  verify_cmd->add_option("solution", solution, "solution.json")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*solve_cmd) return cmd_solve(common);
    if (*sweep_cmd) return cmd_sweep(common, all, listed);
    if (*paths_cmd) return cmd_gen_paths(common, paths_out, k);
    if (*dump_cmd) return cmd_dump(common, dump_out);
    if (*verify_cmd) return cmd_verify(solution);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
