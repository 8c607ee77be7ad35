#include <algorithm>
#include <cmath>
#include <random>

#include <doctest.h>

#include "support/toys.hpp"
#include "v2geq/assembly.hpp"
#include "v2geq/solver.hpp"

using namespace v2geq;
using toys::arc;
using toys::at;

namespace {

TransportNetwork one_arc(double ev_demand) {
  return toys::network({1, 2}, {arc(1, 2, 0.5, 10)}, {}, {{{1, 2}, {ev_demand, 0.0}}});
}

MarketParams one_lse(std::vector<Generator> gens, double rho = 2.0) {
  MarketParams m;
  m.lses.push_back({"LSE1", std::move(gens)});
  m.shedding_penalty = rho;
  return m;
}

const BusState& bus(const EquilibriumSolution& s, BusId id) {
  return *std::find_if(s.buses.begin(), s.buses.end(), [&](const BusState& b) { return b.id == id; });
}

}  // namespace

// ------------------------------------------------------------------- CNO

TEST_CASE("CNO: interior charging with zero fees prices alpha+ at M+") {
  toys::ChargingSpec spec;
  spec.fee = 0.0;
  const toys::Solved s = toys::solve_model(toys::charging(spec));
  REQUIRE(s.v.pass());
  const Layout& L = s.a.layout;
  for (std::size_t k = 0; k < s.a.stations.size(); ++k) {
    if (at(s.r.z, L.p_charge[k]) <= 1e-6) continue;
    const std::size_t bus_i = s.a.station_bus[k];
    CHECK(at(s.r.z, L.alpha_charge[k]) == doctest::Approx(at(s.r.z, *L.price_charge[bus_i])).epsilon(1e-9));
  }
}

TEST_CASE("CNO: pinched exchange bounds force p+ = p-") {
  toys::CoupledSpec spec;
  Model m = toys::coupled(spec);
  m.market.stations[2].net_min_kw = 0.0;
  m.market.stations[2].net_max_kw = 0.0;
  const toys::Solved s = toys::solve_model(m);
  REQUIRE(s.v.pass());
  CHECK(at(s.r.z, s.a.layout.p_charge[0]) == doctest::Approx(at(s.r.z, s.a.layout.p_discharge[0])).epsilon(1e-9));
}

TEST_CASE("CNO: a 0.10 margin drives p+ to the exchange limit") {
  toys::CoupledSpec spec;
  spec.fee = 0.0;
  Model m = toys::coupled(spec);
  m.market.stations[2].net_max_kw = 100.0;
  const Assembly a = assemble_mcp(m);
  const Layout& L = a.layout;
  const std::size_t bus_i = a.station_bus[0];

  // Everything but the CNO's own LP is held at the prices below.
  Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(a.mcp.size()));
  z[static_cast<Eigen::Index>(L.alpha_charge[0])] = 0.40;
  z[static_cast<Eigen::Index>(*L.price_charge[bus_i])] = 0.30;
  z[static_cast<Eigen::Index>(L.alpha_discharge[0])] = 0.50;
  z[static_cast<Eigen::Index>(*L.price_discharge[bus_i])] = 0.30;
  std::vector<char> frozen(a.mcp.size(), 1);
  frozen[L.p_charge[0]] = frozen[L.p_discharge[0]] = 0;
  frozen[a.catalog.block("cno.net_upper").offset] = 0;
  frozen[a.catalog.block("cno.net_lower").offset] = 0;
  const SolveResult r = solve(a.mcp, {}, {{"lp", z}}, &frozen);
  REQUIRE(r.report.status == SolveStatus::Converged);
  CHECK(at(r.z, L.p_charge[0]) == doctest::Approx(100.0));
  CHECK(at(r.z, L.p_discharge[0]) == doctest::Approx(0.0));
  CHECK(at(r.z, a.catalog.block("cno.net_upper").offset) == doctest::Approx(0.10));
}

// --------------------------------------------------------------- traffic

TEST_CASE("traffic: two identical routes split evenly") {
  const TransportNetwork net = toys::network(
      {1, 2, 3, 4}, {arc(1, 2, 0.2, 5, 0.2, 30), arc(2, 4, 0.2, 5, 0.2, 30), arc(1, 3, 0.2, 5, 0.2, 30),
                     arc(3, 4, 0.2, 5, 0.2, 30)},
      {}, {{{1, 4}, {50.0, 0.0}}});
  const PowerFeeder f = toys::feeder({toys::plain_bus(1), toys::demand_bus(2, 50, -0.002, 0.5)},
                                     {toys::line(1, 2)}, 1000);
  const toys::Solved s = toys::solve_model(toys::model(net, f, one_lse({toys::generator(2, 0.001, 0.05, 500)})));
  REQUIRE(s.v.pass());
  const EquilibriumSolution sol = extract_solution(s.a, s.r.z);
  REQUIRE(sol.paths.size() == 2);
  CHECK(sol.paths[0].flow == doctest::Approx(25.0));
  CHECK(sol.paths[1].flow == doctest::Approx(25.0));
  CHECK(sol.paths[0].cost == doctest::Approx(sol.paths[1].cost));
  CHECK(sol.ods[0].cost_ev == doctest::Approx(sol.paths[0].cost));
}

// ------------------------------------------------------------------- DSO

TEST_CASE("DSO: zero injections leave a flat voltage profile") {
  const PowerFeeder f = toys::feeder({toys::plain_bus(1), toys::plain_bus(2), toys::plain_bus(3)},
                                     {toys::line(1, 2), toys::line(2, 3)}, 1000);
  const toys::Solved s = toys::solve_model(toys::model(one_arc(0.0), f, one_lse({toys::generator(2, 0.001, 0.05, 100)})));
  REQUIRE(s.v.pass());
  const EquilibriumSolution sol = extract_solution(s.a, s.r.z);
  for (const LineState& l : sol.lines) CHECK(std::abs(l.p) < 1e-9);
  for (const BusState& b : sol.buses) CHECK(b.u2 == doctest::Approx(bus(sol, 1).u2).epsilon(1e-9));
}

TEST_CASE("DSO: 100 kW to a leaf drops 2 r 100 / base") {
  Bus leaf = toys::demand_bus(2, 100, -0.002, 0.01);  // retail below cost: sells the floor only
  leaf.q_min_kvar = leaf.q_max_kvar = 0.0;
  PowerFeeder f = toys::feeder({toys::plain_bus(1), leaf}, {toys::line(1, 2, 1e4, 0.01, 0.02)}, 5000);
  const toys::Solved s = toys::solve_model(toys::model(one_arc(0.0), f, one_lse({toys::generator(2, 0.001, 0.05, 0)})));
  REQUIRE(s.v.pass());
  const EquilibriumSolution sol = extract_solution(s.a, s.r.z);
  CHECK(sol.lines[0].p == doctest::Approx(100.0));
  CHECK(bus(sol, 1).u2 - bus(sol, 2).u2 == doctest::Approx(2.0 * 0.01 * 100.0 / f.base_kva));
}

TEST_CASE("DSO: a binding line prices the pocket above the root") {
  const PowerFeeder f = toys::feeder(
      {toys::plain_bus(1), toys::demand_bus(2, 50, -0.002, 0.5), toys::demand_bus(3, 300, -0.002, 0.5)},
      {toys::line(1, 2), toys::line(2, 3, 100)}, 5000);
  const toys::Solved s = toys::solve_model(toys::model(
      one_arc(0.0), f, one_lse({toys::generator(2, 0.001, 0.05, 1000), toys::generator(3, 0.002, 0.3, 1000)})));
  REQUIRE(s.v.pass());
  const EquilibriumSolution sol = extract_solution(s.a, s.r.z);
  CHECK(std::abs(sol.lines[1].p) == doctest::Approx(100.0));
  CHECK(bus(sol, 3).dlmp > bus(sol, 1).dlmp + 0.1);
  const auto upper = s.a.catalog.block("dso.line_p_upper");
  double mult = 0.0;
  for (std::size_t k = 0; k < upper.size; ++k) mult = std::max(mult, at(s.r.z, upper.offset + k));
  const auto lower = s.a.catalog.block("dso.line_p_lower");
  for (std::size_t k = 0; k < lower.size; ++k) mult = std::max(mult, at(s.r.z, lower.offset + k));
  CHECK(mult > 0.1);
}

// ------------------------------------------------------------------- LSE

TEST_CASE("LSE: an enormous shedding penalty keeps LS at zero") {
  const PowerFeeder f = toys::feeder({toys::plain_bus(1), toys::demand_bus(2, 400, -0.002, 0.5)},
                                     {toys::line(1, 2)}, 0);
  const toys::Solved s = toys::solve_model(
      toys::model(one_arc(0.0), f, one_lse({toys::generator(2, 0.001, 0.05, 5000)}, 1000.0)));
  REQUIRE(s.v.pass());
  CHECK(std::abs(at(s.r.z, *s.a.layout.shed[1])) < 1e-9);
}

TEST_CASE("LSE: symmetric Cournot duopoly matches the closed form") {
  const double a = -0.01, b = 1.0, d = 0.005, e = 0.1;
  const PowerFeeder f = toys::feeder({toys::plain_bus(1), toys::demand_bus(2, 0, a, b)}, {toys::line(1, 2)}, 0);
  MarketParams m;
  m.lses.push_back({"A", {toys::generator(2, d, e, 1000)}});
  m.lses.push_back({"B", {toys::generator(2, d, e, 1000)}});
  m.shedding_penalty = 2.0;
  const toys::Solved s = toys::solve_model(toys::model(one_arc(0.0), f, m));
  REQUIRE(s.v.pass());
  // a s + (a S + b) = 2 d s + e with S = 2 s.
  const double each = (b - e) / (2.0 * d - 3.0 * a);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(at(s.r.z, *s.a.layout.sell[k][1]) == doctest::Approx(each));
    CHECK(at(s.r.z, s.a.layout.gen[k][0]) == doctest::Approx(each));
  }
}

// -------------------------------------------------------------- clearing

TEST_CASE("clearing: 10 vehicles charging 5 kWh make 50 kWh") {
  EvParams ev = toys::ev_params();
  ev.battery_kwh = 10.0;
  ev.post_discharge_kwh = 4.0;
  ev.range_anxiety = 0.2;
  const TransportNetwork net = toys::network({1, 2, 3}, {arc(1, 2, 0.25, 25.0), arc(2, 3, 0.25, 25.0)},
                                             {{2, toys::station(2)}}, {{{1, 3}, {10.0, 0.0}}});
  const PowerFeeder f = toys::feeder({toys::plain_bus(1), toys::demand_bus(2, 50, -0.002, 0.5)},
                                     {toys::line(1, 2)}, 1000);
  const Model m = toys::model(net, f, one_lse({toys::generator(2, 0.001, 0.05, 500)}), ev);
  const toys::Solved s = toys::solve_model(m);
  REQUIRE(s.v.pass());
  const Layout& L = s.a.layout;
  REQUIRE(L.f_ev.size() == 1);
  CHECK(at(s.r.z, L.f_ev[0]) == doctest::Approx(10.0));
  CHECK(at(s.r.z, L.p_charge[0]) == doctest::Approx(50.0));
  const Eigen::Index row = static_cast<Eigen::Index>(L.alpha_charge[0] - s.a.mcp.primal_size);
  CHECK(s.a.mcp.b_eq.coeff(row, static_cast<Eigen::Index>(L.f_ev[0])) == doctest::Approx(5.0));
  CHECK(s.a.mcp.b_eq.coeff(row, static_cast<Eigen::Index>(L.p_charge[0])) == -1.0);
  CHECK(s.v.clearing_residual <= 1e-8);
}

TEST_CASE("clearing: no flow through a station means no CNO trade") {
  const toys::Solved s = toys::solve_model(toys::coupled({}));
  REQUIRE(s.v.pass());
  // Charging is never worth it on this short trip; discharging is not paid enough.
  CHECK(std::abs(at(s.r.z, s.a.layout.p_charge[0])) < 1e-9);
  CHECK(std::abs(at(s.r.z, s.a.layout.p_discharge[0])) < 1e-9);
}

// -------------------------------------------------------------- assembly

TEST_CASE("dimension of the smallest coupled instance by hand") {
  const PowerFeeder f = toys::feeder({toys::plain_bus(1), toys::demand_bus(2, 100, -0.002, 0.5)},
                                     {toys::line(1, 2)}, 5000);
  const Assembly a = assemble_mcp(toys::model(one_arc(10.0), f, one_lse({toys::generator(2, 0.001, 0.05, 1000)})));
  // Primal: 1 path flow; DSO P_dso, P_tso at the leaf, U at both buses,
  // p and q on the line; LSE sell, gen, TSO purchase and LS at the leaf.
  const std::size_t primal = 1 + (1 + 1 + 2 + 2) + (1 + 1 + 1 + 1);
  // Equalities: voltage drop, nodal balance, root balance, LSE balance, w, m.
  const std::size_t eq = 6;
  // Inequalities: demand row; p and q limits both ways; U bounds at two
  // buses both ways; TSO P bounds; reactive corridor both ways; TSO Q
  // bounds; generator bounds; demand floor.
  const std::size_t ineq = 1 + 4 + 4 + 2 + 2 + 2 + 2 + 1;
  CHECK(a.mcp.primal_size == primal);
  CHECK(a.mcp.eq_size == eq);
  CHECK(a.mcp.ineq_size == ineq);
  CHECK(a.mcp.size() == primal + eq + ineq);

  std::size_t covered = 0;
  for (const CatalogBlock& b : a.catalog.blocks) {
    CHECK(b.offset == covered);
    covered += b.size;
  }
  CHECK(covered == a.mcp.size());
}

TEST_CASE("zero demand: no activity solves the MCP") {
  toys::CoupledSpec spec;
  spec.ev_demand = spec.fv_demand = 0.0;
  spec.floor_kw = 0.0;
  spec.b = 0.05;  // retail intercept below every marginal cost
  const toys::Solved s = toys::solve_model(toys::coupled(spec));
  REQUIRE(s.r.report.status == SolveStatus::Converged);
  CHECK(s.v.pass());
  CHECK(natural_residual(s.a.mcp, s.r.z).lpNorm<Eigen::Infinity>() <= 1e-8);
  const Layout& L = s.a.layout;
  for (std::size_t v : L.p_charge) CHECK(std::abs(at(s.r.z, v)) < 1e-9);
  for (const auto& g : L.gen) {
    for (std::size_t v : g) CHECK(std::abs(at(s.r.z, v)) < 1e-9);
  }
  for (const auto& row : L.sell) {
    for (const Slot& v : row) {
      if (v) CHECK(std::abs(at(s.r.z, *v)) < 1e-9);
    }
  }
}

TEST_CASE("Jacobian matches central differences at random points") {
  const Assembly a = assemble_mcp(toys::charging({}));
  const McpInstance& mcp = a.mcp;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd z(static_cast<Eigen::Index>(mcp.size()));
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = u(rng);
    for (std::size_t v : a.layout.f_ev) z[static_cast<Eigen::Index>(v)] = 20.0 * u(rng);
    const Eigen::MatrixXd J = Eigen::MatrixXd(mcp.jacobian(z));
    double worst = 0.0;
    for (Eigen::Index c = 0; c < z.size(); ++c) {
      const double h = 1e-6 * std::max(1.0, std::abs(z[c]));
      Eigen::VectorXd zp = z, zm = z;
      zp[c] += h;
      zm[c] -= h;
      const Eigen::VectorXd fd = (mcp.evaluate(zp) - mcp.evaluate(zm)) / (2.0 * h);
      for (Eigen::Index r = 0; r < z.size(); ++r) {
        worst = std::max(worst, std::abs(fd[r] - J(r, c)) / std::max(1.0, std::abs(J(r, c))));
      }
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("unbounded primal directions are reported, none on a bounded toy") {
  const Assembly a = assemble_mcp(toys::charging({}));
  CHECK(unbounded_primal_directions(a).empty());
}
