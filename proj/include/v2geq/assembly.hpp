#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "v2geq/mcp.hpp"
#include "v2geq/net_model.hpp"
#include "v2geq/paths.hpp"

namespace v2geq {

struct Model {
  TransportNetwork net;
  PowerFeeder feeder;  // after the scenario is applied
  EvParams ev;
  MarketParams market;
  PathCatalog paths;
};

enum class BlockKind { Primal, Price, EqualityMultiplier, InequalityMultiplier };

struct CatalogBlock {
  std::string name;
  BlockKind kind = BlockKind::Primal;
  std::size_t offset = 0;  // into z
  std::size_t size = 0;
};

struct VariableCatalog {
  std::vector<CatalogBlock> blocks;  // disjoint, in z order

  const CatalogBlock& block(std::string_view name) const;
  bool has(std::string_view name) const;
  nlohmann::json to_json() const;
};

using Slot = std::optional<std::size_t>;  // index into z, if the symbol exists

struct PathRef {
  std::size_t od = 0;     // index into PathCatalog::ods
  std::size_t index = 0;  // index into that OD's ev or fv list
};

// Where every symbol lives in z.
struct Layout {
  // CNO, per station (Assembly::stations order)
  std::vector<std::size_t> p_charge, p_discharge;
  // traffic
  std::vector<std::size_t> f_ev, f_fv;  // parallel to ev_paths / fv_paths
  std::vector<PathRef> ev_paths, fv_paths;
  std::vector<Slot> cost_ev, cost_fv;   // per OD
  std::vector<Slot> station_capacity;   // per station
  // DSO, per bus (PowerFeeder::buses order) or per line
  std::vector<Slot> p_dso, p_tso, u2;
  std::vector<std::size_t> line_p, line_q;
  // LSE, [lse][bus] or [lse][generator]
  std::vector<std::vector<Slot>> sell, phi_charge, phi_discharge, phi_tso;
  std::vector<std::vector<std::size_t>> gen;
  std::vector<Slot> shed;
  // prices
  std::vector<Slot> w, m, price_charge, price_discharge;  // per bus
  std::vector<std::size_t> alpha_charge, alpha_discharge;  // per station
  // player equality multipliers
  std::vector<std::size_t> voltage_drop;  // per line
  std::vector<Slot> nodal_balance;        // per bus
  Slot root_balance;
  std::vector<std::size_t> lse_balance;   // per LSE
  std::vector<Slot> demand_floor;         // per bus
};

struct Assembly {
  McpInstance mcp;
  VariableCatalog catalog;
  Layout layout;
  Model model;
  Islands islands;
  std::vector<NodeId> stations;  // sorted
  std::vector<std::size_t> station_bus;  // bus index per station
  // Per line, bus indices of the end nearer the island root and the far end.
  std::vector<std::pair<std::size_t, std::size_t>> line_ends;
  std::size_t root_bus = 0;  // index of the TSO bus
  double fv_row_scale = 1.0;     // FV rows are multiplied by w_EV / w_FV
  std::size_t arc_links = 0;     // links [0, arc_links) are arcs, then stations
  std::vector<std::string> warnings;

  // Indices of the station link and its station among `stations`.
  std::size_t station_position(NodeId n) const;
};

// Builds the complete instance. Throws ModelError with the block name on any
// inconsistency (e.g. an OD with EV demand but no feasible path).
Assembly assemble_mcp(const Model& model);

// ------------------------------------------------------------ the blocks

class McpBuilder;

struct AssemblyContext {
  const Model& model;
  Assembly& out;
  McpBuilder& builder;
};

// Each block declares its own variables in `declare_*` and then adds rows
// and map entries once every variable exists.
void declare_cno_block(AssemblyContext& ctx);
void declare_traffic_block(AssemblyContext& ctx);
void declare_dso_block(AssemblyContext& ctx);
void declare_lse_block(AssemblyContext& ctx);
void declare_clearing_block(AssemblyContext& ctx);
void assemble_cno_block(AssemblyContext& ctx);
void assemble_traffic_block(AssemblyContext& ctx);
void assemble_dso_block(AssemblyContext& ctx);
void assemble_lse_block(AssemblyContext& ctx);
void assemble_clearing_block(AssemblyContext& ctx);

// ------------------------------------------------------ helpers on z

// Shifts prices along the one direction the clearing rows leave free (w and
// nodal multipliers up, m and LSE balance prices down) so that m = 0: w then
// reads as the delivered energy price at each bus.
void normalize_prices(const Assembly& a, Eigen::VectorXd& z);

// Starting points: zero, free-flow traffic assignment, uniform prices.
std::vector<Eigen::VectorXd> default_starts(const Assembly& a);
std::vector<std::string> default_start_names();

// Bound propagation over the constraint rows (demand rows read as
// equalities). Returns labels of primal variables left without a finite
// upper or lower bound.
std::vector<std::string> unbounded_primal_directions(const Assembly& a);

nlohmann::json dump_mcp(const Assembly& a);

}  // namespace v2geq
