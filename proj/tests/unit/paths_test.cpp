#include <algorithm>
#include <limits>
#include <queue>
#include <set>
#include <vector>

#include <doctest.h>

#include "support/toys.hpp"
#include "v2geq/link_costs.hpp"
#include "v2geq/paths.hpp"

using namespace v2geq;
using toys::arc;

namespace {

// r - n - s with 5 kWh per arc and a station at n.
TransportNetwork rns(double second_arc_kwh = 5.0) {
  return toys::network({1, 2, 3}, {arc(1, 2, 0.25, 25.0), arc(2, 3, 0.25, second_arc_kwh / 0.2)},
                       {{2, toys::station(2)}}, {{{1, 3}, {10.0, 0.0}}});
}

EvParams small_battery() {
  EvParams ev = toys::ev_params();
  ev.battery_kwh = 10.0;
  ev.range_anxiety = 0.2;  // reserve 2 kWh
  ev.post_discharge_kwh = 4.0;
  return ev;
}

// Plain Dijkstra on free-flow time.
double shortest_time(const TransportNetwork& net, NodeId r, NodeId s) {
  std::map<NodeId, double> dist;
  for (NodeId n : net.nodes) dist[n] = std::numeric_limits<double>::infinity();
  using Item = std::pair<double, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[r] = 0.0;
  pq.push({0.0, r});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    for (const Arc& a : net.arcs) {
      if (a.tail != u) continue;
      if (d + a.free_flow_time_h < dist[a.head]) {
        dist[a.head] = d + a.free_flow_time_h;
        pq.push({dist[a.head], a.head});
      }
    }
  }
  return dist[s];
}

}  // namespace

TEST_CASE("expand_network adds two virtual nodes per station") {
  const TransportNetwork two = toys::network(
      {1, 2, 3, 4}, {arc(1, 2, 0.1, 5), arc(2, 3, 0.1, 5), arc(3, 4, 0.1, 5), arc(2, 4, 0.1, 5)},
      {{2, toys::station(2)}, {3, toys::station(3)}});
  const ExpandedNetwork x = expand_network(two);
  CHECK(x.nodes.size() == two.nodes.size() + 4);

  // Dummy arcs are free; virtual exits copy the physical outgoing arcs.
  for (const ExpandedArc& a : x.arcs) {
    if (!a.base_arc) {
      CHECK(a.distance_km == 0.0);
      CHECK(a.consumption_kwh_per_km == 0.0);
    } else {
      const Arc& b = two.arcs[*a.base_arc];
      CHECK(a.distance_km == b.distance_km);
      CHECK(a.consumption_kwh_per_km == b.consumption_kwh_per_km);
    }
  }

  TransportNetwork none = two;
  none.stations.clear();
  const ExpandedNetwork y = expand_network(none);
  CHECK(y.nodes.size() == none.nodes.size());
  CHECK(y.arcs.size() == none.arcs.size());
  for (const ExpandedNode& n : y.nodes) CHECK(n.role == NodeRole::Physical);
}

TEST_CASE("Sioux Falls expansion adds 12 virtual nodes") {
  RunInputs in;
  const std::string data = V2GEQ_DATA_DIR;
  in.net_path = data + "/sioux_falls/net.tntp";
  in.trips_path = data + "/sioux_falls/trips.tntp";
  in.case_path = data + "/sioux_falls/case.json";
  in.feeder_path = data + "/ieee123/feeder.json";
  const LoadedCase c = load_case(in);
  CHECK(expand_network(c.net).nodes.size() == 24 + 12);

  SUBCASE("FV cost of 1 -> 20 at free flow is the shortest time") {
    const auto base = k_shortest_paths(c.net, 1, 20, 1);
    REQUIRE(base.size() == 1);
    ExpandedPath p;
    p.od = {1, 20};
    p.nodes = base[0].nodes;
    p.arcs = base[0].arcs;
    std::vector<double> t0;
    for (const Arc& a : c.net.arcs) t0.push_back(a.free_flow_time_h);
    CHECK(path_cost_fv(p, t0, c.config.ev) ==
          doctest::Approx(shortest_time(c.net, 1, 20) * c.config.ev.value_of_time_fv));
  }
}

TEST_CASE("SoC on r-n-s") {
  const TransportNetwork net = rns();
  const EvParams ev = small_battery();
  const std::vector<NodeId> nodes{1, 2, 3};

  SUBCASE("charge at n") {
    const std::vector<StationAction> act{{2, ActionKind::Charge, 1}};
    const auto t = simulate_soc(nodes, act, ev, net);
    REQUIRE(t);
    CHECK(t->arrival[1] == doctest::Approx(5.0));
    CHECK(t->departure[1] == doctest::Approx(10.0));
    CHECK(t->action_energy[0] == doctest::Approx(5.0));
    CHECK(t->arrival[2] == doctest::Approx(5.0));
  }
  SUBCASE("discharge at n is infeasible") {
    const std::vector<StationAction> act{{2, ActionKind::Discharge, 1}};
    CHECK_FALSE(simulate_soc(nodes, act, ev, net));
  }
  SUBCASE("no action needs the whole range") {
    CHECK_FALSE(simulate_soc(nodes, {}, ev, net));
    const TransportNetwork short_trip = rns(2.0);
    const auto t = simulate_soc(nodes, {}, ev, short_trip);
    REQUIRE(t);
    CHECK(t->arrival[2] == doctest::Approx(3.0));
  }
  SUBCASE("action at a node without a station") {
    const std::vector<StationAction> act{{3, ActionKind::Charge, 2}};
    CHECK_THROWS_AS(simulate_soc(nodes, act, ev, net), std::invalid_argument);
  }
}

TEST_CASE("generate_paths on r-n-s keeps only the charge path") {
  const auto paths = generate_paths({1, 3}, rns(), small_battery(), {});
  REQUIRE(paths.size() == 1);
  CHECK(paths[0].pattern == Pattern::Charge);
  CHECK(pattern_label(paths[0].pattern) == "1-1");
  CHECK(paths[0].energy_at(2, ActionKind::Charge) == doctest::Approx(5.0));

  // With range to spare the plain path joins it.
  const auto more = generate_paths({1, 3}, rns(2.0), small_battery(), {});
  std::set<Pattern> kinds;
  for (const auto& p : more) kinds.insert(p.pattern);
  CHECK(kinds.count(Pattern::None) == 1);
  CHECK(kinds.count(Pattern::Charge) == 1);
}

TEST_CASE("generate_paths without stations returns the base paths") {
  const TransportNetwork net = toys::network(
      {1, 2, 3, 4}, {arc(1, 2, 0.1, 5), arc(2, 4, 0.1, 5), arc(1, 3, 0.2, 5), arc(3, 4, 0.2, 5)});
  const auto paths = generate_paths({1, 4}, net, toys::ev_params(), {});
  const auto base = k_shortest_paths(net, 1, 4, 10);
  REQUIRE(paths.size() == base.size());
  for (std::size_t k = 0; k < paths.size(); ++k) {
    CHECK(paths[k].pattern == Pattern::None);
    CHECK(paths[k].nodes == base[k].nodes);
  }
}

TEST_CASE("generate_paths is empty when one arc exceeds the usable range") {
  // 9 kWh on the last arc against 10 - 2 usable even after a full charge.
  CHECK(generate_paths({1, 3}, rns(9.0), small_battery(), {}).empty());
  CHECK_THROWS(generate_paths({1, 9}, rns(), small_battery(), {}));
}

TEST_CASE("V2G off drops discharge patterns; larger batteries never lose paths") {
  const TransportNetwork net = toys::network(
      {1, 2, 3, 4}, {arc(1, 2, 0.1, 40), arc(2, 3, 0.1, 40), arc(3, 4, 0.1, 40), arc(1, 3, 0.3, 70)},
      {{2, toys::station(2)}, {3, toys::station(3)}});
  EvParams ev = toys::ev_params();
  PathGenOptions on, off;
  off.v2g = false;
  const auto with = generate_paths({1, 4}, net, ev, on);
  const auto without = generate_paths({1, 4}, net, ev, off);
  bool any_discharge = false;
  for (const auto& p : with) any_discharge = any_discharge || p.has_discharge();
  CHECK(any_discharge);
  for (const auto& p : without) CHECK_FALSE(p.has_discharge());

  std::set<std::string> keys;
  for (const auto& p : with) keys.insert(p.key());
  CHECK(keys.size() == with.size());

  EvParams bigger = ev;
  bigger.battery_kwh = 90.0;
  bigger.range_anxiety = ev.reserve_kwh() / bigger.battery_kwh;  // same reserve
  std::set<std::string> big_keys;
  for (const auto& p : generate_paths({1, 4}, net, bigger, on)) big_keys.insert(p.key());
  for (const std::string& k : keys) CHECK(big_keys.count(k) == 1);
}

TEST_CASE("EV path cost") {
  EvParams ev = toys::ev_params();
  ev.value_of_time_ev = 20.0;
  ev.degradation_per_kwh = 0.05;
  ev.pile_kw = 50.0;
  ExpandedPath p;
  p.od = {1, 3};
  p.nodes = {1, 2, 3};
  p.arcs = {0, 1};
  const std::vector<double> times{0.25, 0.25};

  SUBCASE("pattern 0 is time only") {
    PathCostInputs in{times, {}, {}};
    CHECK(path_cost_ev(p, in, ev) == doctest::Approx(20.0 * 0.5));
  }
  SUBCASE("one charge") {
    p.actions = {{2, ActionKind::Charge, 1}};
    p.energy = {5.0};
    p.pattern = Pattern::Charge;
    PathCostInputs in{times, {{2, 0.1}}, {{2, {0.3, 0.0}}}};
    CHECK(path_cost_ev(p, in, ev) == doctest::Approx(15.75));
  }
  SUBCASE("discharge earns revenue") {
    p.actions = {{2, ActionKind::Discharge, 1}};
    p.energy = {8.4};
    p.pattern = Pattern::Discharge;
    PathCostInputs in{times, {{2, 0.1}}, {{2, {0.3, 0.4}}}};
    const double time_part = 20.0 * (0.5 + 0.1 + 8.4 / 50.0);
    const double cost = path_cost_ev(p, in, ev);
    CHECK(cost - time_part == doctest::Approx(-8.4 * (0.4 - 0.05)));
    CHECK(cost < time_part);
  }
}

TEST_CASE("FV path cost") {
  EvParams ev = toys::ev_params();
  ev.value_of_time_fv = 15.0;
  ExpandedPath empty;
  CHECK(path_cost_fv(empty, {}, ev) == 0.0);
  ExpandedPath one;
  one.nodes = {1, 2};
  one.arcs = {0};
  const std::vector<double> t{1.0};
  CHECK(path_cost_fv(one, t, ev) == doctest::Approx(15.0));
}

TEST_CASE("BPR and the smoothed wait") {
  CHECK(bpr_time(0.5, 100.0, 100.0) == doctest::Approx(1.15 * 0.5));
  CHECK(bpr_time(0.5, 100.0, -3.0) == 0.5);

  Station st = toys::station(2, 0.1, 20.0);
  st.congestion_h = 0.02;
  const double dt = 0.5;
  const double eps = 1.0 / dt;
  const double x = (st.piles + eps) / dt;  // excess exactly eps
  CHECK(smoothed_wait(st, dt, x) == doctest::Approx(st.base_wait_h + st.congestion_h / (2 * dt * dt)));
  const double h = 1e-7;
  CHECK(smoothed_wait(st, dt, x - h) == doctest::Approx(smoothed_wait(st, dt, x + h)).epsilon(1e-6));
  CHECK(smoothed_wait_slope(st, dt, x - h) == doctest::Approx(smoothed_wait_slope(st, dt, x + h)).epsilon(1e-5));
  // Below the pile count the wait is flat.
  CHECK(smoothed_wait(st, dt, 10.0) == st.base_wait_h);
}
