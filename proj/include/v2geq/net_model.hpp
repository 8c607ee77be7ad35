#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace v2geq {

using NodeId = int;
using BusId = int;
using OdPair = std::pair<NodeId, NodeId>;

// ---------------------------------------------------------------- transport

struct Arc {
  NodeId tail = 0;
  NodeId head = 0;
  double free_flow_time_h = 0.0;
  double capacity = 0.0;  // vehicles per period
  double distance_km = 0.0;
  double consumption_kwh_per_km = 0.0;

  double energy_kwh() const { return consumption_kwh_per_km * distance_km; }
  friend bool operator==(const Arc&, const Arc&) = default;
};

struct Station {
  double base_wait_h = 0.0;
  double congestion_h = 0.0;  // hours per excess vehicle
  double piles = 1.0;
  BusId bus = 0;
  friend bool operator==(const Station&, const Station&) = default;
};

struct OdDemand {
  double ev = 0.0;  // vehicles per period
  double fv = 0.0;
  friend bool operator==(const OdDemand&, const OdDemand&) = default;
};

struct TransportNetwork {
  std::vector<NodeId> nodes;  // sorted, unique
  std::vector<Arc> arcs;
  std::map<NodeId, Station> stations;
  std::map<OdPair, OdDemand> od_demands;
  double period_h = 1.0;

  bool has_node(NodeId n) const;
  bool is_station(NodeId n) const { return stations.count(n) != 0; }
  // Index of the arc tail -> head, if any.
  std::optional<std::size_t> find_arc(NodeId tail, NodeId head) const;
  // Throws InputError on any invariant violation.
  void validate() const;

  friend bool operator==(const TransportNetwork&,
                         const TransportNetwork&) = default;
};

// Everything TNTP does not carry: units, the EV share of demand, the
// consumption rate and the charging stations.
struct TransportSidecar {
  double time_to_hours = 1.0 / 60.0;  // TNTP free-flow time column unit
  double length_to_km = 1.0;
  double capacity_scale = 1.0;
  double consumption_kwh_per_km = 0.2;
  double ev_share = 0.5;
  double demand_scale = 1.0;
  double period_h = 1.0;
  std::optional<std::vector<NodeId>> origins;
  std::optional<std::vector<NodeId>> destinations;
  std::map<OdPair, double> consumption_overrides;  // per arc, kWh/km
  std::map<NodeId, Station> stations;
};

TransportNetwork load_transport_tntp(std::istream& net, std::istream& trips,
                                     const TransportSidecar& sidecar,
                                     const std::string& net_name = "net",
                                     const std::string& trips_name = "trips");
TransportNetwork load_transport_tntp_files(const std::string& net_path,
                                           const std::string& trips_path,
                                           const TransportSidecar& sidecar);

// Writes TNTP files that load back into the same network when paired with
// `sidecar_for(net)`.
void write_tntp_net(std::ostream& out, const TransportNetwork& net);
void write_tntp_trips(std::ostream& out, const TransportNetwork& net);
TransportSidecar sidecar_for(const TransportNetwork& net);

// Re-splits every OD total between EVs and FVs.
void apply_ev_share(TransportNetwork& net, double ev_share);

// Lossless JSON form of the whole network.
nlohmann::json transport_to_json(const TransportNetwork& net);
TransportNetwork transport_from_json(const nlohmann::json& j,
                                     const std::string& source = "transport");

// ------------------------------------------------------------------- feeder

struct InverseDemand {
  double slope = 0.0;      // a < 0, $/kWh per kW
  double intercept = 0.0;  // b > 0, $/kWh
  friend bool operator==(const InverseDemand&, const InverseDemand&) = default;
};

struct Bus {
  BusId id = 0;
  double q_load_kvar = 0.0;
  double demand_floor_kw = 0.0;
  double q_min_kvar = 0.0;
  double q_max_kvar = 0.0;
  std::optional<InverseDemand> demand;
  friend bool operator==(const Bus&, const Bus&) = default;
};

struct Line {
  BusId from = 0;
  BusId to = 0;
  double r_pu = 0.0;
  double x_pu = 0.0;
  double rating_kw = 0.0;
  friend bool operator==(const Line&, const Line&) = default;
};

struct PowerFeeder {
  std::string name;
  double base_kv = 4.16;
  double base_kva = 1000.0;
  std::vector<Bus> buses;  // sorted by id
  std::vector<Line> lines;
  BusId tso_bus = 0;
  double u2_min = 0.9025;
  double u2_max = 1.1025;
  double tso_p_min_kw = 0.0;
  double tso_p_max_kw = 0.0;
  double tso_q_min_kvar = 0.0;
  double tso_q_max_kvar = 0.0;
  double wholesale_price = 0.0;

  std::optional<std::size_t> bus_index(BusId id) const;
  const Bus& bus(BusId id) const;
  friend bool operator==(const PowerFeeder&, const PowerFeeder&) = default;
};

// Connected components of the in-service line graph.
struct Islands {
  std::vector<int> component;  // parallel to PowerFeeder::buses
  int count = 0;
  int root_component = 0;
  bool connected_to_tso(std::size_t bus_index) const {
    return component[bus_index] == root_component;
  }
};

Islands find_islands(const PowerFeeder& feeder);

// Checks bus/line references and that every island is a tree. With
// `require_connected` the whole feeder must be a single tree.
void validate_feeder(const PowerFeeder& feeder, bool require_connected,
                     const std::string& source = "feeder");

PowerFeeder load_feeder(std::istream& in, const std::string& source = "feeder");
PowerFeeder load_feeder_file(const std::string& path);
nlohmann::json feeder_to_json(const PowerFeeder& feeder);
PowerFeeder feeder_from_json(const nlohmann::json& j,
                             const std::string& source = "feeder");

// --------------------------------------------------------------- parameters

struct EvParams {
  double battery_kwh = 60.0;
  double post_discharge_kwh = 20.0;
  double range_anxiety = 0.2;
  double value_of_time_ev = 20.0;  // $/h
  double value_of_time_fv = 20.0;
  double degradation_per_kwh = 0.05;
  double pile_kw = 50.0;

  double reserve_kwh() const { return range_anxiety * battery_kwh; }
  void validate() const;
  friend bool operator==(const EvParams&, const EvParams&) = default;
};

struct StationMarket {
  double fee_charge = 0.0;
  double fee_discharge = 0.0;
  double net_min_kw = -1e4;
  double net_max_kw = 1e4;
  friend bool operator==(const StationMarket&, const StationMarket&) = default;
};

// Cost C(g) = d g + e per kWh, so total cost is d g^2 + e g.
struct Generator {
  BusId bus = 0;
  double quad_coeff = 0.0;
  double lin_coeff = 0.0;
  double min_kw = 0.0;
  double max_kw = 0.0;
  friend bool operator==(const Generator&, const Generator&) = default;
};

struct Lse {
  std::string name;
  std::vector<Generator> generators;
  friend bool operator==(const Lse&, const Lse&) = default;
};

struct MarketParams {
  std::map<NodeId, StationMarket> stations;
  std::vector<Lse> lses;
  double shedding_penalty = 1.0;  // $/kWh

  const StationMarket& station(NodeId n) const;
  void validate(const PowerFeeder& feeder, const TransportNetwork& net) const;
  friend bool operator==(const MarketParams&, const MarketParams&) = default;
};

// ---------------------------------------------------------------- scenarios

struct ScenarioSpec {
  std::string name = "base";
  double load_scale = 1.0;
  std::vector<std::pair<BusId, BusId>> outages;
  std::optional<bool> v2g;
  std::optional<double> ev_share;
};

// Scenario files are JSON, or TOML restricted to top-level scalar keys and
// arrays of integer pairs.
ScenarioSpec load_scenario(std::istream& in, const std::string& source);
ScenarioSpec load_scenario_file(const std::string& path);
ScenarioSpec scenario_from_json(const nlohmann::json& j,
                                const std::string& source);

PowerFeeder apply_scenario(const PowerFeeder& feeder,
                           const ScenarioSpec& scenario);

// ------------------------------------------------------------------ cases

struct PathOptions {
  std::size_t k = 10;
  bool by_distance = false;  // rank base paths by distance, not time
};

// One JSON file bundling everything that is not network topology.
struct CaseConfig {
  TransportSidecar transport;
  EvParams ev;
  MarketParams market;
  PathOptions paths;
  nlohmann::json solver = nlohmann::json::object();
};

CaseConfig case_from_json(const nlohmann::json& j, const std::string& source);
CaseConfig load_case_file(const std::string& path);

}  // namespace v2geq
