#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>

#include "v2geq/assembly.hpp"
#include "v2geq/error.hpp"
#include "v2geq/mcp_builder.hpp"

namespace v2geq {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string od_tag(const OdPair& od) {
  return std::to_string(od.first) + "-" + std::to_string(od.second);
}

std::string indexed(const std::string& name, const std::string& key) {
  return name + "[" + key + "]";
}

std::string indexed(const std::string& name, long long key) {
  return indexed(name, std::to_string(key));
}

bool is_root(const Assembly& a, std::size_t bus) { return bus == a.root_bus; }

// Lines oriented away from the TSO bus, or away from the smallest bus of an
// island without it.
void orient_lines(Assembly& a) {
  const PowerFeeder& f = a.model.feeder;
  const std::size_t nb = f.buses.size();
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(nb);  // (bus, line)
  for (std::size_t l = 0; l < f.lines.size(); ++l) {
    const std::size_t u = *f.bus_index(f.lines[l].from);
    const std::size_t v = *f.bus_index(f.lines[l].to);
    adj[u].emplace_back(v, l);
    adj[v].emplace_back(u, l);
  }
  a.line_ends.assign(f.lines.size(), {0, 0});
  std::vector<char> seen(nb, 0);
  auto bfs = [&](std::size_t start) {
    std::queue<std::size_t> q;
    q.push(start);
    seen[start] = 1;
    while (!q.empty()) {
      const std::size_t u = q.front();
      q.pop();
      for (const auto& [v, l] : adj[u]) {
        if (seen[v]) continue;
        seen[v] = 1;
        a.line_ends[l] = {u, v};
        q.push(v);
      }
    }
  };
  bfs(a.root_bus);
  for (std::size_t b = 0; b < nb; ++b) {
    if (!seen[b]) bfs(b);  // buses are sorted, so this is the island's smallest id
  }
}

std::vector<std::size_t> fcs_buses(const Assembly& a) {
  std::set<std::size_t> s(a.station_bus.begin(), a.station_bus.end());
  return {s.begin(), s.end()};
}

double fv_scale(const EvParams& ev) { return ev.value_of_time_ev / ev.value_of_time_fv; }

}  // namespace

// ------------------------------------------------------------------ catalog

const CatalogBlock& VariableCatalog::block(std::string_view name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw ModelError("no catalog block " + std::string(name));
}

bool VariableCatalog::has(std::string_view name) const {
  return std::any_of(blocks.begin(), blocks.end(),
                     [&](const CatalogBlock& b) { return b.name == name; });
}

nlohmann::json VariableCatalog::to_json() const {
  static const char* kinds[] = {"primal", "price", "equality_multiplier",
                                "inequality_multiplier"};
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : blocks) {
    out.push_back({{"name", b.name},
                   {"kind", kinds[static_cast<int>(b.kind)]},
                   {"offset", b.offset},
                   {"size", b.size}});
  }
  return out;
}

std::size_t Assembly::station_position(NodeId n) const {
  const auto it = std::lower_bound(stations.begin(), stations.end(), n);
  if (it == stations.end() || *it != n) {
    throw ModelError("node " + std::to_string(n) + " is not a charging station");
  }
  return static_cast<std::size_t>(it - stations.begin());
}

// ---------------------------------------------------------------- declare

void declare_cno_block(AssemblyContext& ctx) {
  Assembly& a = ctx.out;
  McpBuilder& b = ctx.builder;
  Layout& L = a.layout;
  b.begin_block("cno.p_charge", BlockKind::Primal);
  for (NodeId n : a.stations) L.p_charge.push_back(b.add_primal(indexed("p_charge", n), 0.0, kInf));
  b.begin_block("cno.p_discharge", BlockKind::Primal);
  for (NodeId n : a.stations) {
    L.p_discharge.push_back(b.add_primal(indexed("p_discharge", n), 0.0, kInf));
  }
}

void declare_traffic_block(AssemblyContext& ctx) {
  Assembly& a = ctx.out;
  McpBuilder& b = ctx.builder;
  Layout& L = a.layout;
  const auto& ods = ctx.model.paths.ods;
  b.begin_block("traffic.f_ev", BlockKind::Primal);
  for (std::size_t o = 0; o < ods.size(); ++o) {
    const OdDemand& d = ctx.model.net.od_demands.at(ods[o].od);
    if (d.ev <= 0.0) continue;
    if (ods[o].ev.empty()) {
      throw ModelError("traffic block: OD " + od_tag(ods[o].od) +
                       " has EV demand but no energy-feasible path");
    }
    for (std::size_t q = 0; q < ods[o].ev.size(); ++q) {
      L.f_ev.push_back(b.add_primal(
          indexed("f_ev", od_tag(ods[o].od) + "#" + std::to_string(q)), 0.0, kInf));
      L.ev_paths.push_back({o, q});
    }
  }
  b.begin_block("traffic.f_fv", BlockKind::Primal);
  for (std::size_t o = 0; o < ods.size(); ++o) {
    const OdDemand& d = ctx.model.net.od_demands.at(ods[o].od);
    if (d.fv <= 0.0) continue;
    if (ods[o].fv.empty()) {
      throw ModelError("traffic block: OD " + od_tag(ods[o].od) + " has no path");
    }
    for (std::size_t q = 0; q < ods[o].fv.size(); ++q) {
      L.f_fv.push_back(b.add_primal(
          indexed("f_fv", od_tag(ods[o].od) + "#" + std::to_string(q)), 0.0, kInf));
      L.fv_paths.push_back({o, q});
    }
  }
}

void declare_dso_block(AssemblyContext& ctx) {
  Assembly& a = ctx.out;
  McpBuilder& b = ctx.builder;
  Layout& L = a.layout;
  const PowerFeeder& f = ctx.model.feeder;
  const std::size_t nb = f.buses.size();
  L.p_dso.assign(nb, std::nullopt);
  L.p_tso.assign(nb, std::nullopt);
  L.u2.assign(nb, std::nullopt);
  b.begin_block("dso.p_dso", BlockKind::Primal);
  for (std::size_t i = 0; i < nb; ++i) {
    if (is_root(a, i)) continue;
    L.p_dso[i] = b.add_primal(indexed("p_dso", f.buses[i].id), -kInf, kInf);
  }
  b.begin_block("dso.p_tso", BlockKind::Primal);
  for (std::size_t i = 0; i < nb; ++i) {
    if (is_root(a, i) || !a.islands.connected_to_tso(i)) continue;
    L.p_tso[i] = b.add_primal(indexed("p_tso", f.buses[i].id), -kInf, kInf);
  }
  b.begin_block("dso.u2", BlockKind::Primal);
  for (std::size_t i = 0; i < nb; ++i) {
    L.u2[i] = b.add_primal(indexed("u2", f.buses[i].id), 0.0, kInf);
  }
  auto line_tag = [&](std::size_t l) {
    return std::to_string(f.buses[a.line_ends[l].first].id) + "-" +
           std::to_string(f.buses[a.line_ends[l].second].id);
  };
  b.begin_block("dso.line_p", BlockKind::Primal);
  for (std::size_t l = 0; l < f.lines.size(); ++l) {
    L.line_p.push_back(b.add_primal(indexed("line_p", line_tag(l)), -kInf, kInf));
  }
  b.begin_block("dso.line_q", BlockKind::Primal);
  for (std::size_t l = 0; l < f.lines.size(); ++l) {
    L.line_q.push_back(b.add_primal(indexed("line_q", line_tag(l)), -kInf, kInf));
  }
}

void declare_lse_block(AssemblyContext& ctx) {
  Assembly& a = ctx.out;
  McpBuilder& b = ctx.builder;
  Layout& L = a.layout;
  const PowerFeeder& f = ctx.model.feeder;
  const auto& lses = ctx.model.market.lses;
  const std::size_t nb = f.buses.size();
  const auto fcs = fcs_buses(a);
  L.sell.assign(lses.size(), std::vector<Slot>(nb));
  L.phi_charge.assign(lses.size(), std::vector<Slot>(nb));
  L.phi_discharge.assign(lses.size(), std::vector<Slot>(nb));
  L.phi_tso.assign(lses.size(), std::vector<Slot>(nb));
  L.gen.assign(lses.size(), {});
  L.shed.assign(nb, std::nullopt);
  auto tag = [&](std::size_t k, std::size_t i) {
    return lses[k].name + "," + std::to_string(f.buses[i].id);
  };
  b.begin_block("lse.sell", BlockKind::Primal);
  for (std::size_t k = 0; k < lses.size(); ++k) {
    for (std::size_t i = 0; i < nb; ++i) {
      if (f.buses[i].demand) L.sell[k][i] = b.add_primal(indexed("sell", tag(k, i)), 0.0, kInf);
    }
  }
  b.begin_block("lse.gen", BlockKind::Primal);
  for (std::size_t k = 0; k < lses.size(); ++k) {
    for (std::size_t g = 0; g < lses[k].generators.size(); ++g) {
      const std::size_t i = *f.bus_index(lses[k].generators[g].bus);
      L.gen[k].push_back(b.add_primal(
          indexed("gen", tag(k, i) + "#" + std::to_string(g)), 0.0, kInf));
    }
  }
  b.begin_block("lse.phi_charge", BlockKind::Primal);
  for (std::size_t k = 0; k < lses.size(); ++k) {
    for (std::size_t i : fcs) L.phi_charge[k][i] = b.add_primal(indexed("phi_charge", tag(k, i)), 0.0, kInf);
  }
  b.begin_block("lse.phi_discharge", BlockKind::Primal);
  for (std::size_t k = 0; k < lses.size(); ++k) {
    for (std::size_t i : fcs) {
      L.phi_discharge[k][i] = b.add_primal(indexed("phi_discharge", tag(k, i)), 0.0, kInf);
    }
  }
  b.begin_block("lse.phi_tso", BlockKind::Primal);
  for (std::size_t k = 0; k < lses.size(); ++k) {
    for (std::size_t i = 0; i < nb; ++i) {
      if (is_root(a, i) || !a.islands.connected_to_tso(i)) continue;
      L.phi_tso[k][i] = b.add_primal(indexed("phi_tso", tag(k, i)), 0.0, kInf);
    }
  }
  b.begin_block("lse.shed", BlockKind::Primal);
  for (std::size_t i = 0; i < nb; ++i) {
    if (f.buses[i].demand_floor_kw > 0.0) {
      L.shed[i] = b.add_primal(indexed("shed", f.buses[i].id), 0.0, kInf);
    }
  }
}

void declare_clearing_block(AssemblyContext&) {
  // Prices are the multipliers of the clearing rows; nothing primal to add.
}

// --------------------------------------------------------------- assemble

void assemble_cno_block(AssemblyContext& ctx) {
  Assembly& a = ctx.out;
  McpBuilder& b = ctx.builder;
  const Layout& L = a.layout;
  for (std::size_t s = 0; s < a.stations.size(); ++s) {
    const StationMarket& sm = ctx.model.market.station(a.stations[s]);
    b.add_h_const(L.p_charge[s], -sm.fee_charge);
    b.add_h_const(L.p_discharge[s], -sm.fee_discharge);
  }
  b.begin_block("cno.net_upper", BlockKind::InequalityMultiplier);
  for (std::size_t s = 0; s < a.stations.size(); ++s) {
    const StationMarket& sm = ctx.model.market.station(a.stations[s]);
    const auto r = b.add_ineq_row(indexed("net_upper", a.stations[s]), sm.net_max_kw);
    b.ineq_coef(r, L.p_charge[s], 1.0);
    b.ineq_coef(r, L.p_discharge[s], -1.0);
  }
  b.begin_block("cno.net_lower", BlockKind::InequalityMultiplier);
  for (std::size_t s = 0; s < a.stations.size(); ++s) {
    const StationMarket& sm = ctx.model.market.station(a.stations[s]);
    const auto r = b.add_ineq_row(indexed("net_lower", a.stations[s]), -sm.net_min_kw);
    b.ineq_coef(r, L.p_charge[s], -1.0);
    b.ineq_coef(r, L.p_discharge[s], 1.0);
  }
}

void assemble_traffic_block(AssemblyContext& ctx) {
  Assembly& a = ctx.out;
  McpBuilder& b = ctx.builder;
  Layout& L = a.layout;
  const TransportNetwork& net = ctx.model.net;
  const EvParams& ev = ctx.model.ev;
  const auto& ods = ctx.model.paths.ods;
  const double s = a.fv_row_scale;

  // Links: base arcs, then stations.
  for (const Arc& arc : net.arcs) {
    LinkFunction lf;
    lf.kind = LinkFunction::Kind::Bpr;
    lf.t0 = arc.free_flow_time_h;
    lf.capacity = arc.capacity;
    b.add_link(lf);
  }
  a.arc_links = net.arcs.size();
  for (NodeId n : a.stations) {
    LinkFunction lf;
    lf.kind = LinkFunction::Kind::Wait;
    lf.station = net.stations.at(n);
    lf.period_h = net.period_h;
    b.add_link(lf);
  }

  for (std::size_t j = 0; j < L.f_ev.size(); ++j) {
    const ExpandedPath& p = ods[L.ev_paths[j].od].ev[L.ev_paths[j].index];
    const std::size_t v = L.f_ev[j];
    for (std::size_t arc : p.arcs) {
      b.link_flow(arc, v, 1.0);
      b.link_weight(v, arc, ev.value_of_time_ev);
    }
    std::set<NodeId> visited;
    double energy = 0.0;
    for (std::size_t k = 0; k < p.actions.size(); ++k) {
      energy += p.energy[k];
      if (visited.insert(p.actions[k].station).second) {
        const std::size_t link = a.arc_links + a.station_position(p.actions[k].station);
        b.link_flow(link, v, 1.0);
        b.link_weight(v, link, ev.value_of_time_ev);
      }
    }
    b.add_h_const(v, ev.value_of_time_ev * energy / ev.pile_kw +
                         ev.degradation_per_kwh * energy);
  }
  for (std::size_t j = 0; j < L.f_fv.size(); ++j) {
    const ExpandedPath& p = ods[L.fv_paths[j].od].fv[L.fv_paths[j].index];
    for (std::size_t arc : p.arcs) {
      b.link_flow(arc, L.f_fv[j], 1.0);
      b.link_weight(L.f_fv[j], arc, s * ev.value_of_time_fv);
    }
  }

  L.cost_ev.assign(ods.size(), std::nullopt);
  L.cost_fv.assign(ods.size(), std::nullopt);
  b.begin_block("traffic.cost_ev", BlockKind::InequalityMultiplier);
  for (std::size_t j = 0; j < L.f_ev.size(); ++j) {
    const std::size_t o = L.ev_paths[j].od;
    if (!L.cost_ev[o]) {
      L.cost_ev[o] = b.add_ineq_row(indexed("C_ev", od_tag(ods[o].od)),
                                    -net.od_demands.at(ods[o].od).ev);
    }
    b.ineq_coef(*L.cost_ev[o], L.f_ev[j], -1.0);
  }
  b.begin_block("traffic.cost_fv", BlockKind::InequalityMultiplier);
  for (std::size_t j = 0; j < L.f_fv.size(); ++j) {
    const std::size_t o = L.fv_paths[j].od;
    if (!L.cost_fv[o]) {
      L.cost_fv[o] = b.add_ineq_row(indexed("C_fv", od_tag(ods[o].od)),
                                    -s * net.od_demands.at(ods[o].od).fv);
    }
    b.ineq_coef(*L.cost_fv[o], L.f_fv[j], -s);
  }

  // Station energy capacity: EF+ + EF- <= P_pile * piles * dt.
  L.station_capacity.assign(a.stations.size(), std::nullopt);
  std::vector<std::vector<std::pair<std::size_t, double>>> users(a.stations.size());
  for (std::size_t j = 0; j < L.f_ev.size(); ++j) {
    const ExpandedPath& p = ods[L.ev_paths[j].od].ev[L.ev_paths[j].index];
    for (std::size_t k = 0; k < p.actions.size(); ++k) {
      users[a.station_position(p.actions[k].station)].emplace_back(L.f_ev[j], p.energy[k]);
    }
  }
  b.begin_block("traffic.station_capacity", BlockKind::InequalityMultiplier);
  for (std::size_t st = 0; st < a.stations.size(); ++st) {
    if (users[st].empty()) continue;
    const Station& station = net.stations.at(a.stations[st]);
    const auto r = b.add_ineq_row(indexed("capacity", a.stations[st]),
                                  ev.pile_kw * station.piles * net.period_h);
    L.station_capacity[st] = r;
    for (const auto& [v, e] : users[st]) b.ineq_coef(r, v, e);
  }
}

void assemble_dso_block(AssemblyContext& ctx) {
  Assembly& a = ctx.out;
  McpBuilder& b = ctx.builder;
  Layout& L = a.layout;
  const PowerFeeder& f = ctx.model.feeder;
  const std::size_t nb = f.buses.size();
  const std::size_t nl = f.lines.size();

  for (std::size_t i = 0; i < nb; ++i) {
    if (L.p_tso[i]) b.add_h_const(*L.p_tso[i], f.wholesale_price);
  }

  std::vector<std::vector<std::size_t>> in(nb), out(nb);
  for (std::size_t l = 0; l < nl; ++l) {
    out[a.line_ends[l].first].push_back(l);
    in[a.line_ends[l].second].push_back(l);
  }

  b.begin_block("dso.voltage_drop", BlockKind::EqualityMultiplier);
  for (std::size_t l = 0; l < nl; ++l) {
    const auto [u, v] = a.line_ends[l];
    const Line& line = f.lines[l];
    const auto r = b.add_eq_row(indexed("voltage_drop", std::to_string(f.buses[u].id) + "-" +
                                                         std::to_string(f.buses[v].id)));
    L.voltage_drop.push_back(r);
    b.eq_coef(r, *L.u2[u], 1.0);
    b.eq_coef(r, *L.u2[v], -1.0);
    b.eq_coef(r, L.line_p[l], -2.0 * line.r_pu / f.base_kva);
    b.eq_coef(r, L.line_q[l], -2.0 * line.x_pu / f.base_kva);
  }
  L.nodal_balance.assign(nb, std::nullopt);
  b.begin_block("dso.nodal_balance", BlockKind::EqualityMultiplier);
  for (std::size_t i = 0; i < nb; ++i) {
    if (is_root(a, i)) continue;
    const auto r = b.add_eq_row(indexed("nodal_balance", f.buses[i].id));
    L.nodal_balance[i] = r;
    b.eq_coef(r, *L.p_dso[i], 1.0);
    for (std::size_t l : in[i]) b.eq_coef(r, L.line_p[l], -1.0);
    for (std::size_t l : out[i]) b.eq_coef(r, L.line_p[l], 1.0);
  }
  b.begin_block("dso.root_balance", BlockKind::EqualityMultiplier);
  {
    const auto r = b.add_eq_row("root_balance");
    L.root_balance = r;
    for (std::size_t l : out[a.root_bus]) b.eq_coef(r, L.line_p[l], 1.0);
    for (std::size_t l : in[a.root_bus]) b.eq_coef(r, L.line_p[l], -1.0);
    for (std::size_t i = 0; i < nb; ++i) {
      if (L.p_tso[i]) b.eq_coef(r, *L.p_tso[i], -1.0);
    }
  }

  auto bound_pair = [&](const std::string& name, const std::vector<std::size_t>& vars,
                        auto label_of, auto limit_of) {
    b.begin_block("dso." + name + "_upper", BlockKind::InequalityMultiplier);
    for (std::size_t k = 0; k < vars.size(); ++k) {
      const auto r = b.add_ineq_row(label_of(k) + "<=", limit_of(k).second);
      b.ineq_coef(r, vars[k], 1.0);
    }
    b.begin_block("dso." + name + "_lower", BlockKind::InequalityMultiplier);
    for (std::size_t k = 0; k < vars.size(); ++k) {
      const auto r = b.add_ineq_row(label_of(k) + ">=", -limit_of(k).first);
      b.ineq_coef(r, vars[k], -1.0);
    }
  };
  auto line_label = [&](const std::string& what) {
    return [&, what](std::size_t l) {
      return indexed(what, std::to_string(f.buses[a.line_ends[l].first].id) + "-" +
                               std::to_string(f.buses[a.line_ends[l].second].id));
    };
  };
  auto rating = [&](std::size_t l) {
    return std::pair{-f.lines[l].rating_kw, f.lines[l].rating_kw};
  };
  bound_pair("line_p", L.line_p, line_label("line_p"), rating);
  bound_pair("line_q", L.line_q, line_label("line_q"), rating);
  std::vector<std::size_t> u2;
  for (const auto& s : L.u2) u2.push_back(*s);
  bound_pair("voltage", u2,
             [&](std::size_t i) { return indexed("u2", f.buses[i].id); },
             [&](std::size_t) { return std::pair{f.u2_min, f.u2_max}; });

  // TSO active import, summed over the buses it sells to.
  std::vector<std::size_t> tso_vars;
  for (const auto& s : L.p_tso) {
    if (s) tso_vars.push_back(*s);
  }
  if (!tso_vars.empty()) {
    b.begin_block("dso.tso_p_upper", BlockKind::InequalityMultiplier);
    const auto up = b.add_ineq_row("tso_p<=", f.tso_p_max_kw);
    for (std::size_t v : tso_vars) b.ineq_coef(up, v, 1.0);
    b.begin_block("dso.tso_p_lower", BlockKind::InequalityMultiplier);
    const auto lo = b.add_ineq_row("tso_p>=", -f.tso_p_min_kw);
    for (std::size_t v : tso_vars) b.ineq_coef(lo, v, -1.0);
  }

  // Reactive corridor q_min <= q_load + out - in <= q_max at non-root buses.
  b.begin_block("dso.q_corridor_upper", BlockKind::InequalityMultiplier);
  for (std::size_t i = 0; i < nb; ++i) {
    if (is_root(a, i)) continue;
    const Bus& bus = f.buses[i];
    const auto r = b.add_ineq_row(indexed("q_corridor", bus.id) + "<=",
                                  bus.q_max_kvar - bus.q_load_kvar);
    for (std::size_t l : out[i]) b.ineq_coef(r, L.line_q[l], 1.0);
    for (std::size_t l : in[i]) b.ineq_coef(r, L.line_q[l], -1.0);
  }
  b.begin_block("dso.q_corridor_lower", BlockKind::InequalityMultiplier);
  for (std::size_t i = 0; i < nb; ++i) {
    if (is_root(a, i)) continue;
    const Bus& bus = f.buses[i];
    const auto r = b.add_ineq_row(indexed("q_corridor", bus.id) + ">=",
                                  bus.q_load_kvar - bus.q_min_kvar);
    for (std::size_t l : out[i]) b.ineq_coef(r, L.line_q[l], -1.0);
    for (std::size_t l : in[i]) b.ineq_coef(r, L.line_q[l], 1.0);
  }
  if (!out[a.root_bus].empty() || !in[a.root_bus].empty()) {
    b.begin_block("dso.tso_q_upper", BlockKind::InequalityMultiplier);
    const auto up = b.add_ineq_row("tso_q<=", f.tso_q_max_kvar);
    for (std::size_t l : out[a.root_bus]) b.ineq_coef(up, L.line_q[l], 1.0);
    for (std::size_t l : in[a.root_bus]) b.ineq_coef(up, L.line_q[l], -1.0);
    b.begin_block("dso.tso_q_lower", BlockKind::InequalityMultiplier);
    const auto lo = b.add_ineq_row("tso_q>=", -f.tso_q_min_kvar);
    for (std::size_t l : out[a.root_bus]) b.ineq_coef(lo, L.line_q[l], -1.0);
    for (std::size_t l : in[a.root_bus]) b.ineq_coef(lo, L.line_q[l], 1.0);
  }
}

void assemble_lse_block(AssemblyContext& ctx) {
  Assembly& a = ctx.out;
  McpBuilder& b = ctx.builder;
  Layout& L = a.layout;
  const PowerFeeder& f = ctx.model.feeder;
  const auto& lses = ctx.model.market.lses;
  const std::size_t nb = f.buses.size();

  // Cournot marginal revenue: own-quantity term plus the market price.
  for (std::size_t i = 0; i < nb; ++i) {
    if (!f.buses[i].demand) continue;
    const InverseDemand& d = *f.buses[i].demand;
    for (std::size_t k = 0; k < lses.size(); ++k) {
      const std::size_t v = *L.sell[k][i];
      b.add_h_const(v, -d.intercept);
      for (std::size_t k2 = 0; k2 < lses.size(); ++k2) {
        b.add_h_linear(v, *L.sell[k2][i], -d.slope * (k2 == k ? 2.0 : 1.0));
      }
    }
  }
  for (std::size_t k = 0; k < lses.size(); ++k) {
    for (std::size_t g = 0; g < lses[k].generators.size(); ++g) {
      const Generator& gen = lses[k].generators[g];
      b.add_h_const(L.gen[k][g], gen.lin_coeff);
      b.add_h_linear(L.gen[k][g], L.gen[k][g], 2.0 * gen.quad_coeff);
    }
  }
  for (std::size_t i = 0; i < nb; ++i) {
    if (L.shed[i]) b.add_h_const(*L.shed[i], ctx.model.market.shedding_penalty);
  }

  b.begin_block("lse.balance", BlockKind::EqualityMultiplier);
  for (std::size_t k = 0; k < lses.size(); ++k) {
    const auto r = b.add_eq_row(indexed("lse_balance", lses[k].name));
    L.lse_balance.push_back(r);
    for (std::size_t i = 0; i < nb; ++i) {
      if (L.sell[k][i]) b.eq_coef(r, *L.sell[k][i], 1.0);
      if (L.phi_charge[k][i]) b.eq_coef(r, *L.phi_charge[k][i], 1.0);
      if (L.phi_discharge[k][i]) b.eq_coef(r, *L.phi_discharge[k][i], -1.0);
      if (L.phi_tso[k][i]) b.eq_coef(r, *L.phi_tso[k][i], -1.0);
    }
    for (std::size_t v : L.gen[k]) b.eq_coef(r, v, -1.0);
  }
  b.begin_block("lse.gen_upper", BlockKind::InequalityMultiplier);
  for (std::size_t k = 0; k < lses.size(); ++k) {
    for (std::size_t g = 0; g < L.gen[k].size(); ++g) {
      const auto r = b.add_ineq_row(indexed("gen_upper", lses[k].name + "#" + std::to_string(g)),
                                    lses[k].generators[g].max_kw);
      b.ineq_coef(r, L.gen[k][g], 1.0);
    }
  }
  b.begin_block("lse.gen_lower", BlockKind::InequalityMultiplier);
  for (std::size_t k = 0; k < lses.size(); ++k) {
    for (std::size_t g = 0; g < L.gen[k].size(); ++g) {
      const auto r = b.add_ineq_row(indexed("gen_lower", lses[k].name + "#" + std::to_string(g)),
                                    -lses[k].generators[g].min_kw);
      b.ineq_coef(r, L.gen[k][g], -1.0);
    }
  }
  L.demand_floor.assign(nb, std::nullopt);
  b.begin_block("lse.demand_floor", BlockKind::InequalityMultiplier);
  for (std::size_t i = 0; i < nb; ++i) {
    if (!L.shed[i]) continue;
    const auto r = b.add_ineq_row(indexed("demand_floor", f.buses[i].id),
                                  -f.buses[i].demand_floor_kw);
    L.demand_floor[i] = r;
    b.ineq_coef(r, *L.shed[i], -1.0);
    for (std::size_t k = 0; k < lses.size(); ++k) {
      if (L.sell[k][i]) b.ineq_coef(r, *L.sell[k][i], -1.0);
    }
  }
}

void assemble_clearing_block(AssemblyContext& ctx) {
  Assembly& a = ctx.out;
  McpBuilder& b = ctx.builder;
  Layout& L = a.layout;
  const PowerFeeder& f = ctx.model.feeder;
  const auto& lses = ctx.model.market.lses;
  const auto& ods = ctx.model.paths.ods;
  const std::size_t nb = f.buses.size();

  // Bus withdrawal: sales and CNO purchases less generation and CNO sales.
  L.w.assign(nb, std::nullopt);
  b.begin_block("price.w", BlockKind::Price);
  for (std::size_t i = 0; i < nb; ++i) {
    if (is_root(a, i)) continue;
    const auto r = b.add_eq_row(indexed("w", f.buses[i].id));
    L.w[i] = r;
    b.eq_coef(r, *L.p_dso[i], -1.0);
    for (std::size_t k = 0; k < lses.size(); ++k) {
      if (L.sell[k][i]) b.eq_coef(r, *L.sell[k][i], 1.0);
      if (L.phi_charge[k][i]) b.eq_coef(r, *L.phi_charge[k][i], 1.0);
      if (L.phi_discharge[k][i]) b.eq_coef(r, *L.phi_discharge[k][i], -1.0);
      for (std::size_t g = 0; g < L.gen[k].size(); ++g) {
        if (*f.bus_index(lses[k].generators[g].bus) == i) b.eq_coef(r, L.gen[k][g], -1.0);
      }
    }
  }

  // Station energy: what the vehicles take (give) is what the CNO buys (sells).
  std::vector<std::vector<std::pair<std::size_t, double>>> charge(a.stations.size()),
      discharge(a.stations.size());
  for (std::size_t j = 0; j < L.f_ev.size(); ++j) {
    const ExpandedPath& p = ods[L.ev_paths[j].od].ev[L.ev_paths[j].index];
    for (std::size_t k = 0; k < p.actions.size(); ++k) {
      auto& dst = p.actions[k].kind == ActionKind::Charge ? charge : discharge;
      dst[a.station_position(p.actions[k].station)].emplace_back(L.f_ev[j], p.energy[k]);
    }
  }
  b.begin_block("price.alpha_charge", BlockKind::Price);
  for (std::size_t s = 0; s < a.stations.size(); ++s) {
    const auto r = b.add_eq_row(indexed("alpha_charge", a.stations[s]));
    L.alpha_charge.push_back(r);
    for (const auto& [v, e] : charge[s]) b.eq_coef(r, v, e);
    b.eq_coef(r, L.p_charge[s], -1.0);
  }
  b.begin_block("price.alpha_discharge", BlockKind::Price);
  for (std::size_t s = 0; s < a.stations.size(); ++s) {
    const auto r = b.add_eq_row(indexed("alpha_discharge", a.stations[s]));
    L.alpha_discharge.push_back(r);
    for (const auto& [v, e] : discharge[s]) b.eq_coef(r, v, -e);
    b.eq_coef(r, L.p_discharge[s], 1.0);
  }

  L.price_charge.assign(nb, std::nullopt);
  L.price_discharge.assign(nb, std::nullopt);
  const auto fcs = fcs_buses(a);
  b.begin_block("price.M_charge", BlockKind::Price);
  for (std::size_t i : fcs) {
    const auto r = b.add_eq_row(indexed("M_charge", f.buses[i].id));
    L.price_charge[i] = r;
    for (std::size_t s = 0; s < a.stations.size(); ++s) {
      if (a.station_bus[s] == i) b.eq_coef(r, L.p_charge[s], 1.0);
    }
    for (std::size_t k = 0; k < lses.size(); ++k) b.eq_coef(r, *L.phi_charge[k][i], -1.0);
  }
  b.begin_block("price.M_discharge", BlockKind::Price);
  for (std::size_t i : fcs) {
    const auto r = b.add_eq_row(indexed("M_discharge", f.buses[i].id));
    L.price_discharge[i] = r;
    for (std::size_t s = 0; s < a.stations.size(); ++s) {
      if (a.station_bus[s] == i) b.eq_coef(r, L.p_discharge[s], -1.0);
    }
    for (std::size_t k = 0; k < lses.size(); ++k) b.eq_coef(r, *L.phi_discharge[k][i], 1.0);
  }

  L.m.assign(nb, std::nullopt);
  b.begin_block("price.m", BlockKind::Price);
  for (std::size_t i = 0; i < nb; ++i) {
    if (!L.p_tso[i]) continue;
    const auto r = b.add_eq_row(indexed("m", f.buses[i].id));
    L.m[i] = r;
    b.eq_coef(r, *L.p_tso[i], -1.0);
    for (std::size_t k = 0; k < lses.size(); ++k) b.eq_coef(r, *L.phi_tso[k][i], 1.0);
  }
}

// ------------------------------------------------------------------- mcp

Assembly assemble_mcp(const Model& model) {
  Assembly a;
  a.model = model;
  const PowerFeeder& f = a.model.feeder;
  const auto root = f.bus_index(f.tso_bus);
  if (!root) throw ModelError("dso block: TSO bus " + std::to_string(f.tso_bus) + " missing");
  a.root_bus = *root;
  a.islands = find_islands(f);
  a.fv_row_scale = fv_scale(a.model.ev);
  for (const auto& [n, st] : a.model.net.stations) {
    const auto bi = f.bus_index(st.bus);
    if (!bi) {
      throw ModelError("cno block: station " + std::to_string(n) + " maps to unknown bus " +
                       std::to_string(st.bus));
    }
    if (*bi == a.root_bus) {
      throw ModelError("cno block: station " + std::to_string(n) + " sits on the TSO bus");
    }
    a.stations.push_back(n);
    a.station_bus.push_back(*bi);
  }
  orient_lines(a);

  // Islands that can only balance through shedding.
  for (int c = 0; c < a.islands.count; ++c) {
    if (c == a.islands.root_component) continue;
    bool has_gen = false;
    BusId smallest = 0;
    bool first = true;
    for (std::size_t i = 0; i < f.buses.size(); ++i) {
      if (a.islands.component[i] != c) continue;
      if (first) smallest = f.buses[i].id, first = false;
      for (const Lse& lse : a.model.market.lses) {
        for (const Generator& g : lse.generators) has_gen |= g.bus == f.buses[i].id;
      }
    }
    if (!has_gen) {
      a.warnings.push_back("island " + std::to_string(c) + " (bus " + std::to_string(smallest) +
                           ") has neither a generator nor the TSO; only shedding and V2G "
                           "can balance it");
    }
  }

  McpBuilder builder;
  AssemblyContext ctx{a.model, a, builder};
  declare_cno_block(ctx);
  declare_traffic_block(ctx);
  declare_dso_block(ctx);
  declare_lse_block(ctx);
  declare_clearing_block(ctx);
  assemble_cno_block(ctx);
  assemble_traffic_block(ctx);
  assemble_dso_block(ctx);
  assemble_lse_block(ctx);
  assemble_clearing_block(ctx);
  a.mcp = builder.build(a.catalog);

  // Row indices recorded above become z indices.
  Layout& L = a.layout;
  const std::size_t eq0 = builder.eq_z(0);
  const std::size_t in0 = builder.ineq_z(0);
  auto shift = [](auto& v, std::size_t by) {
    for (auto& x : v) {
      if constexpr (std::is_same_v<std::decay_t<decltype(x)>, Slot>) {
        if (x) *x += by;
      } else {
        x += by;
      }
    }
  };
  shift(L.w, eq0);
  shift(L.m, eq0);
  shift(L.price_charge, eq0);
  shift(L.price_discharge, eq0);
  shift(L.alpha_charge, eq0);
  shift(L.alpha_discharge, eq0);
  shift(L.voltage_drop, eq0);
  shift(L.nodal_balance, eq0);
  if (L.root_balance) *L.root_balance += eq0;
  shift(L.lse_balance, eq0);
  shift(L.cost_ev, in0);
  shift(L.cost_fv, in0);
  shift(L.station_capacity, in0);
  shift(L.demand_floor, in0);
  return a;
}

// ------------------------------------------------------------- helpers on z

void normalize_prices(const Assembly& a, Eigen::VectorXd& z) {
  const Layout& L = a.layout;
  double c = 0.0;
  int count = 0;
  for (const auto& s : L.m) {
    if (s) c += z[static_cast<Eigen::Index>(*s)], ++count;
  }
  if (count > 0) {
    c /= count;
  } else if (!L.lse_balance.empty()) {
    c = z[static_cast<Eigen::Index>(L.lse_balance.front())];
  } else {
    return;
  }
  auto add = [&](std::size_t k, double by) { z[static_cast<Eigen::Index>(k)] += by; };
  for (const auto& s : L.w) if (s) add(*s, c);
  for (const auto& s : L.nodal_balance) if (s) add(*s, c);
  if (L.root_balance) add(*L.root_balance, c);
  for (const auto& s : L.m) if (s) add(*s, -c);
  for (std::size_t s : L.lse_balance) add(s, -c);
}

std::vector<std::string> default_start_names() {
  return {"zero", "free-flow", "uniform-price"};
}

std::vector<Eigen::VectorXd> default_starts(const Assembly& a) {
  const auto n = static_cast<Eigen::Index>(a.mcp.size());
  const Layout& L = a.layout;
  const Model& m = a.model;
  const auto& ods = m.paths.ods;
  const double price = m.feeder.wholesale_price;

  Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);

  // All of each OD's demand on its cheapest path at free-flow times and the
  // wholesale price.
  Eigen::VectorXd ff = zero;
  std::vector<double> t0;
  for (const Arc& arc : m.net.arcs) t0.push_back(arc.free_flow_time_h);
  PathCostInputs in{t0, {}, {}};
  for (const auto& [node, st] : m.net.stations) {
    in.waits[node] = st.base_wait_h;
    in.prices[node] = {price, price};
  }
  auto pick = [&](const std::vector<std::size_t>& vars, const std::vector<PathRef>& refs,
                  bool ev_class, const std::vector<Slot>& cost_slots) {
    std::size_t j = 0;
    while (j < vars.size()) {
      const std::size_t o = refs[j].od;
      std::size_t best = j;
      double best_cost = kInf;
      std::size_t end = j;
      for (; end < vars.size() && refs[end].od == o; ++end) {
        const ExpandedPath& p = ev_class ? ods[o].ev[refs[end].index] : ods[o].fv[refs[end].index];
        const double c = ev_class ? path_cost_ev(p, in, m.ev) : path_cost_fv(p, t0, m.ev);
        if (c < best_cost) best_cost = c, best = end;
      }
      const OdDemand& d = m.net.od_demands.at(ods[o].od);
      ff[static_cast<Eigen::Index>(vars[best])] = ev_class ? d.ev : d.fv;
      if (cost_slots[o]) ff[static_cast<Eigen::Index>(*cost_slots[o])] = best_cost;
      j = end;
    }
  };
  pick(L.f_ev, L.ev_paths, true, L.cost_ev);
  pick(L.f_fv, L.fv_paths, false, L.cost_fv);
  for (std::size_t j = 0; j < L.f_ev.size(); ++j) {
    const ExpandedPath& p = ods[L.ev_paths[j].od].ev[L.ev_paths[j].index];
    const double flow = ff[static_cast<Eigen::Index>(L.f_ev[j])];
    for (std::size_t k = 0; k < p.actions.size(); ++k) {
      const std::size_t s = a.station_position(p.actions[k].station);
      const std::size_t v = p.actions[k].kind == ActionKind::Charge ? L.p_charge[s] : L.p_discharge[s];
      ff[static_cast<Eigen::Index>(v)] += flow * p.energy[k];
    }
  }

  Eigen::VectorXd up = ff;
  auto set = [&](const Slot& s, double v) {
    if (s) up[static_cast<Eigen::Index>(*s)] = v;
  };
  for (const auto& s : L.w) set(s, price);
  for (const auto& s : L.nodal_balance) set(s, price);
  set(L.root_balance, price);
  for (const auto& s : L.price_charge) set(s, price);
  for (const auto& s : L.price_discharge) set(s, price);
  for (std::size_t s : L.alpha_charge) set(s, price);
  for (std::size_t s : L.alpha_discharge) set(s, price);
  for (const auto& s : L.u2) set(s, 1.0);
  return {zero, ff, up};
}

std::vector<std::string> unbounded_primal_directions(const Assembly& a) {
  const McpInstance& mcp = a.mcp;
  const std::size_t nv = mcp.primal_size;
  std::vector<double> lo(nv), hi(nv);
  for (std::size_t j = 0; j < nv; ++j) {
    lo[j] = mcp.lower[static_cast<Eigen::Index>(j)];
    hi[j] = mcp.upper[static_cast<Eigen::Index>(j)];
  }
  struct Row {
    std::vector<std::pair<std::size_t, double>> terms;
    double lo, hi;
  };
  std::vector<Row> rows;
  auto collect = [&](const SparseMatrix& b, const Eigen::VectorXd& rhs, bool eq,
                     std::size_t z_offset) {
    Eigen::SparseMatrix<double, Eigen::RowMajor> rm = b;
    for (int r = 0; r < rm.outerSize(); ++r) {
      Row row;
      const std::size_t z = z_offset + static_cast<std::size_t>(r);
      bool demand = false;
      for (const char* name : {"traffic.cost_ev", "traffic.cost_fv"}) {
        if (!a.catalog.has(name)) continue;
        const auto& blk = a.catalog.block(name);
        demand |= z >= blk.offset && z < blk.offset + blk.size;
      }
      row.hi = rhs[r];
      row.lo = eq || demand ? rhs[r] : -kInf;
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(rm, r); it; ++it) {
        row.terms.emplace_back(static_cast<std::size_t>(it.col()), it.value());
      }
      rows.push_back(std::move(row));
    }
  };
  collect(mcp.b_eq, mcp.rhs_eq, true, nv);
  collect(mcp.b_ineq, mcp.rhs_ineq, false, nv + mcp.eq_size);

  // Only infinite bounds are ever replaced, so the loop terminates.
  for (bool changed = true; changed;) {
    changed = false;
    for (const Row& row : rows) {
      // Activity range with infinite terms counted separately.
      double min_sum = 0.0, max_sum = 0.0;
      int min_inf = 0, max_inf = 0;
      for (const auto& [j, c] : row.terms) {
        const double a1 = c > 0 ? c * lo[j] : c * hi[j];
        const double a2 = c > 0 ? c * hi[j] : c * lo[j];
        if (std::isinf(a1)) ++min_inf; else min_sum += a1;
        if (std::isinf(a2)) ++max_inf; else max_sum += a2;
      }
      for (const auto& [j, c] : row.terms) {
        const double a1 = c > 0 ? c * lo[j] : c * hi[j];
        const double a2 = c > 0 ? c * hi[j] : c * lo[j];
        const bool a1_inf = std::isinf(a1), a2_inf = std::isinf(a2);
        const int others_min_inf = min_inf - (a1_inf ? 1 : 0);
        const int others_max_inf = max_inf - (a2_inf ? 1 : 0);
        // c x_j <= hi - min(others)
        if (std::isfinite(row.hi) && others_min_inf == 0) {
          const double bound = (row.hi - (min_sum - (a1_inf ? 0.0 : a1))) / c;
          if (c > 0 && std::isinf(hi[j])) hi[j] = bound, changed = true;
          if (c < 0 && std::isinf(lo[j])) lo[j] = bound, changed = true;
        }
        // c x_j >= lo - max(others)
        if (std::isfinite(row.lo) && others_max_inf == 0) {
          const double bound = (row.lo - (max_sum - (a2_inf ? 0.0 : a2))) / c;
          if (c > 0 && std::isinf(lo[j])) lo[j] = bound, changed = true;
          if (c < 0 && std::isinf(hi[j])) hi[j] = bound, changed = true;
        }
      }
    }
  }
  std::vector<std::string> out;
  for (std::size_t j = 0; j < nv; ++j) {
    // Growth of a variable with a strictly positive own cost is not a ray
    // along which the equilibrium can escape (e.g. shedding).
    const bool penalized = mcp.h_const[static_cast<Eigen::Index>(j)] > 0.0 && lo[j] >= 0.0;
    if (std::isinf(lo[j]) || (std::isinf(hi[j]) && !penalized)) out.push_back(mcp.labels[j]);
  }
  return out;
}

nlohmann::json dump_mcp(const Assembly& a) {
  const McpInstance& m = a.mcp;
  auto bound = [](double v) -> nlohmann::json {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
  };
  auto entries = [](const SparseMatrix& s) {
    nlohmann::json out = nlohmann::json::array();
    Eigen::SparseMatrix<double, Eigen::RowMajor> rm = s;
    for (int r = 0; r < rm.outerSize(); ++r) {
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(rm, r); it; ++it) {
        out.push_back({r, it.col(), it.value()});
      }
    }
    return out;
  };
  nlohmann::json vars = nlohmann::json::array();
  for (std::size_t k = 0; k < m.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    vars.push_back({m.labels[k], bound(m.lower[i]), bound(m.upper[i])});
  }
  nlohmann::json links = nlohmann::json::array();
  for (const LinkFunction& lf : m.links) {
    if (lf.kind == LinkFunction::Kind::Bpr) {
      links.push_back({{"kind", "bpr"}, {"t0", lf.t0}, {"capacity", lf.capacity}});
    } else {
      links.push_back({{"kind", "wait"},
                       {"base_wait_h", lf.station.base_wait_h},
                       {"congestion_h", lf.station.congestion_h},
                       {"piles", lf.station.piles},
                       {"period_h", lf.period_h}});
    }
  }
  std::vector<double> hc(m.h_const.data(), m.h_const.data() + m.h_const.size());
  std::vector<double> r1(m.rhs_eq.data(), m.rhs_eq.data() + m.rhs_eq.size());
  std::vector<double> r2(m.rhs_ineq.data(), m.rhs_ineq.data() + m.rhs_ineq.size());
  return {{"dimension", m.size()},
          {"primal_size", m.primal_size},
          {"eq_size", m.eq_size},
          {"ineq_size", m.ineq_size},
          {"catalog", a.catalog.to_json()},
          {"variables", vars},
          {"h_const", hc},
          {"h_linear", entries(m.h_linear)},
          {"links", links},
          {"link_flow", entries(m.link_flow)},
          {"link_weight", entries(m.link_weight)},
          {"b_eq", entries(m.b_eq)},
          {"rhs_eq", r1},
          {"b_ineq", entries(m.b_ineq)},
          {"rhs_ineq", r2},
          {"warnings", a.warnings}};
}

}  // namespace v2geq
