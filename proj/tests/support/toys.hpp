#pragma once

// Small hand-built models shared by the unit tests and the acceptance run.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "v2geq/assembly.hpp"
#include "v2geq/net_model.hpp"
#include "v2geq/paths.hpp"
#include "v2geq/scenario.hpp"
#include "v2geq/solver.hpp"

namespace toys {

using namespace v2geq;

inline Arc arc(NodeId t, NodeId h, double t0_h, double km, double beta = 0.2,
               double cap = 1000.0) {
  return Arc{t, h, t0_h, cap, km, beta};
}

inline Station station(BusId bus, double wait_h = 0.05, double piles = 500.0) {
  return Station{wait_h, 0.01, piles, bus};
}

inline TransportNetwork network(std::vector<NodeId> nodes, std::vector<Arc> arcs,
                                std::map<NodeId, Station> stations = {},
                                std::map<OdPair, OdDemand> demands = {}) {
  TransportNetwork n;
  n.nodes = std::move(nodes);
  n.arcs = std::move(arcs);
  n.stations = std::move(stations);
  n.od_demands = std::move(demands);
  n.period_h = 1.0;
  return n;
}

inline Bus plain_bus(BusId id) {
  Bus b;
  b.id = id;
  b.q_min_kvar = -100.0;
  b.q_max_kvar = 100.0;
  return b;
}

inline Bus demand_bus(BusId id, double floor_kw, double a, double b) {
  Bus bus = plain_bus(id);
  bus.demand_floor_kw = floor_kw;
  bus.demand = InverseDemand{a, b};
  return bus;
}

inline Line line(BusId from, BusId to, double rating = 1e4, double r = 0.01, double x = 0.01) {
  return Line{from, to, r, x, rating};
}

inline PowerFeeder feeder(std::vector<Bus> buses, std::vector<Line> lines, double tso_max_kw,
                          double wholesale = 0.1) {
  PowerFeeder f;
  f.name = "toy";
  f.buses = std::move(buses);
  f.lines = std::move(lines);
  f.tso_bus = f.buses.front().id;
  f.tso_p_min_kw = 0.0;
  f.tso_p_max_kw = tso_max_kw;
  f.tso_q_min_kvar = -1e4;
  f.tso_q_max_kvar = 1e4;
  f.wholesale_price = wholesale;
  return f;
}

inline Generator generator(BusId bus, double d, double e, double max_kw) {
  return Generator{bus, d, e, 0.0, max_kw};
}

inline EvParams ev_params() {
  EvParams ev;
  ev.battery_kwh = 60.0;
  ev.post_discharge_kwh = 20.0;
  ev.range_anxiety = 0.2;
  ev.value_of_time_ev = 20.0;
  ev.value_of_time_fv = 20.0;
  ev.degradation_per_kwh = 0.05;
  ev.pile_kw = 50.0;
  return ev;
}

inline Model model(TransportNetwork net, PowerFeeder f, MarketParams market,
                   EvParams ev = ev_params(), std::size_t k = 10, bool v2g = true) {
  Model m;
  m.net = std::move(net);
  m.feeder = std::move(f);
  m.ev = ev;
  m.market = std::move(market);
  m.net.validate();
  validate_feeder(m.feeder, false);
  m.ev.validate();
  m.market.validate(m.feeder, m.net);
  PathGenOptions po;
  po.k = k;
  po.v2g = v2g;
  m.paths = build_path_catalog(m.net, m.ev, po);
  return m;
}

// Knobs of the coupled toy: one OD over two disjoint routes, a station on
// the upper route, a two-bus feeder and one LSE.
struct CoupledSpec {
  double ev_demand = 40.0;
  double fv_demand = 20.0;
  double upper_h = 0.25;  // free-flow time per arc of 1-2-4
  double lower_h = 0.30;  // per arc of 1-3-4
  double capacity = 60.0;
  double floor_kw = 300.0;
  double a = -0.002;
  double b = 0.5;
  double gen_d = 0.0005;
  double gen_e = 0.08;
  double gen_max = 2000.0;
  double tso_max = 400.0;
  double rating = 1e4;
  double fee = 0.01;
  bool v2g = true;
};

inline Model coupled(const CoupledSpec& s) {
  TransportNetwork net =
      network({1, 2, 3, 4},
              {arc(1, 2, s.upper_h, 10.0, 0.2, s.capacity), arc(2, 4, s.upper_h, 10.0, 0.2, s.capacity),
               arc(1, 3, s.lower_h, 12.0, 0.2, s.capacity), arc(3, 4, s.lower_h, 12.0, 0.2, s.capacity)},
              {{2, station(2)}}, {{{1, 4}, {s.ev_demand, s.fv_demand}}});
  PowerFeeder f = feeder({plain_bus(1), demand_bus(2, s.floor_kw, s.a, s.b)}, {line(1, 2, s.rating)},
                         s.tso_max);
  MarketParams market;
  market.stations[2] = StationMarket{s.fee, s.fee, -1e4, 1e4};
  market.lses.push_back({"LSE1", {generator(2, s.gen_d, s.gen_e, s.gen_max)}});
  market.shedding_penalty = 2.0;
  return model(std::move(net), std::move(f), std::move(market), ev_params(), 10, s.v2g);
}

// Knobs of the charging toy: both routes are too long for one battery, so
// every EV charges at the station on its route and route choice moves
// energy between the two station buses.
struct ChargingSpec {
  double ev_demand = 60.0;
  double fv_demand = 20.0;
  double upper_km = 130.0;  // per arc of 1-2-4
  double lower_km = 140.0;  // per arc of 1-3-4
  double upper_h = 1.0;
  double lower_h = 1.05;
  double capacity = 60.0;
  double floor2 = 300.0, floor3 = 200.0;
  double a = -0.002;
  double b = 0.5;
  double gen2_d = 0.0005, gen2_e = 0.08;
  double gen3_d = 0.0008, gen3_e = 0.10;
  double tso_max = 400.0;
  double rating = 1e4;  // line 2-3
  double fee = 0.01;
  bool two_lses = true;
};

inline Model charging(const ChargingSpec& s) {
  TransportNetwork net = network(
      {1, 2, 3, 4},
      {arc(1, 2, s.upper_h, s.upper_km, 0.2, s.capacity), arc(2, 4, s.upper_h, s.upper_km, 0.2, s.capacity),
       arc(1, 3, s.lower_h, s.lower_km, 0.2, s.capacity), arc(3, 4, s.lower_h, s.lower_km, 0.2, s.capacity)},
      {{2, station(2)}, {3, station(3)}}, {{{1, 4}, {s.ev_demand, s.fv_demand}}});
  PowerFeeder f = feeder({plain_bus(1), demand_bus(2, s.floor2, s.a, s.b), demand_bus(3, s.floor3, s.a, s.b)},
                         {line(1, 2), line(2, 3, s.rating)}, s.tso_max);
  MarketParams market;
  market.stations[2] = StationMarket{s.fee, s.fee, -1e4, 1e4};
  market.stations[3] = StationMarket{s.fee, s.fee, -1e4, 1e4};
  if (s.two_lses) {
    market.lses.push_back({"LSE1", {generator(2, s.gen2_d, s.gen2_e, 2000.0)}});
    market.lses.push_back({"LSE2", {generator(3, s.gen3_d, s.gen3_e, 2000.0)}});
  } else {
    market.lses.push_back({"LSE1", {generator(2, s.gen2_d, s.gen2_e, 2000.0),
                                    generator(3, s.gen3_d, s.gen3_e, 2000.0)}});
  }
  market.shedding_penalty = 2.0;
  return model(std::move(net), std::move(f), std::move(market));
}

struct Solved {
  Assembly a;
  SolveResult r;
  VerifyReport v;
};

inline Solved solve_model(const Model& m, SolverConfig cfg = {}) {
  Solved out{assemble_mcp(m), {}, {}};
  std::vector<StartPoint> starts;
  const auto zs = default_starts(out.a);
  const auto names = default_start_names();
  for (std::size_t k = 0; k < zs.size(); ++k) starts.push_back({names[k], zs[k]});
  out.r = solve(out.a.mcp, cfg, starts);
  normalize_prices(out.a, out.r.z);
  out.v = verify_solution(out.a, out.r.z);
  return out;
}

inline double at(const Eigen::VectorXd& z, std::size_t k) {
  return z[static_cast<Eigen::Index>(k)];
}

}  // namespace toys
