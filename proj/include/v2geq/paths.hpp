#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "v2geq/net_model.hpp"

namespace v2geq {

// ------------------------------------------------------- expanded network

enum class NodeRole { Physical, Charge, Discharge };

struct ExpandedNode {
  NodeId base = 0;
  NodeRole role = NodeRole::Physical;
};

struct ExpandedArc {
  std::size_t tail = 0;  // indices into ExpandedNetwork::nodes
  std::size_t head = 0;
  double distance_km = 0.0;
  double consumption_kwh_per_km = 0.0;
  std::optional<std::size_t> base_arc;  // empty for the dummy station arcs
};

struct ExpandedNetwork {
  std::vector<ExpandedNode> nodes;
  std::vector<ExpandedArc> arcs;
};

// Adds a charge node n' and a discharge node n'' per station, joined to n by
// zero-length dummy arcs and leaving through copies of n's outgoing arcs.
ExpandedNetwork expand_network(const TransportNetwork& net);

// ------------------------------------------------------------ base paths

struct BasePath {
  std::vector<NodeId> nodes;
  std::vector<std::size_t> arcs;
  double cost = 0.0;
};

// Yen's algorithm on free-flow time (or distance). Equal-cost paths are
// ordered lexicographically by node sequence. `k` may exceed the number of
// simple paths.
std::vector<BasePath> k_shortest_paths(const TransportNetwork& net, NodeId r,
                                       NodeId s, std::size_t k,
                                       bool by_distance = false);

// ------------------------------------------------------------- SoC model

enum class ActionKind { Charge, Discharge };

struct StationAction {
  NodeId station = 0;
  ActionKind kind = ActionKind::Charge;
  std::size_t position = 0;  // index into the node sequence
  friend bool operator==(const StationAction&, const StationAction&) = default;
  friend auto operator<=>(const StationAction&, const StationAction&) = default;
};

struct SocTrace {
  std::vector<double> arrival;    // kWh, per node
  std::vector<double> departure;  // kWh, per node
  std::vector<double> action_energy;  // kWh, per action (E+ or E-)
};

// Battery feasibility along a base node sequence. Returns nothing when any
// segment between the origin, the actions and the destination cannot be
// covered. Throws std::invalid_argument for an action at a non-station node
// or a sequence that is not a path of `net`.
std::optional<SocTrace> simulate_soc(std::span<const NodeId> nodes,
                                     std::span<const StationAction> actions,
                                     const EvParams& ev,
                                     const TransportNetwork& net);

// ------------------------------------------------------ expanded paths

enum class Pattern { None, Charge, ChargeCharge, Discharge, ChargeDischarge, DischargeCharge };

// Pattern labels: "0", "1-1", "1-2", "2", "3", "4".
std::string pattern_label(Pattern p);
Pattern pattern_of(std::span<const StationAction> actions);

struct ExpandedPath {
  OdPair od;
  std::vector<NodeId> nodes;
  std::vector<std::size_t> arcs;  // base arc indices in travel order
  std::vector<StationAction> actions;
  std::vector<double> energy;  // kWh per vehicle, parallel to actions
  Pattern pattern = Pattern::None;

  double charge_energy() const;
  double discharge_energy() const;
  double energy_at(NodeId station, ActionKind kind) const;
  bool has_discharge() const;
  double distance_km(const TransportNetwork& net) const;
  // Node sequence with n' / n'' inserted after each acting station.
  std::vector<ExpandedNode> expanded_nodes() const;
  std::string key() const;
};

struct PathGenOptions {
  std::size_t k = 10;
  bool by_distance = false;
  bool v2g = true;  // off: no discharge actions
};

// Energy-feasible augmentations of the K shortest base paths.
std::vector<ExpandedPath> generate_paths(const OdPair& od,
                                         const TransportNetwork& net,
                                         const EvParams& ev,
                                         const PathGenOptions& options);

struct OdPaths {
  OdPair od;
  std::vector<ExpandedPath> ev;  // charging-aware
  std::vector<ExpandedPath> fv;  // base paths only
};

struct PathCatalog {
  std::vector<OdPaths> ods;  // sorted by OD
};

// Paths for every OD with positive demand. OD pairs are processed on up to
// `threads` workers and merged in OD order.
PathCatalog build_path_catalog(const TransportNetwork& net, const EvParams& ev,
                               const PathGenOptions& options,
                               unsigned threads = 1);

nlohmann::json path_to_json(const ExpandedPath& p);
nlohmann::json catalog_to_json(const PathCatalog& catalog);

// ------------------------------------------------------------ path costs

struct StationPrice {
  double charge = 0.0;     // alpha+
  double discharge = 0.0;  // alpha-
};

struct PathCostInputs {
  std::span<const double> arc_times;  // hours, indexed by base arc
  std::map<NodeId, double> waits;     // hours
  std::map<NodeId, StationPrice> prices;
};

double path_cost_ev(const ExpandedPath& path, const PathCostInputs& in,
                    const EvParams& ev);
double path_cost_fv(const ExpandedPath& path, std::span<const double> arc_times,
                    const EvParams& ev);

}  // namespace v2geq
