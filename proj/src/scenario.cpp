#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "v2geq/error.hpp"
#include "v2geq/link_costs.hpp"
#include "v2geq/scenario.hpp"

namespace v2geq {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double get(const Eigen::VectorXd& z, std::size_t k) { return z[static_cast<Eigen::Index>(k)]; }
double get(const Eigen::VectorXd& z, const Slot& s) { return s ? get(z, *s) : 0.0; }

const ExpandedPath& ev_path(const Assembly& a, std::size_t j) {
  return a.model.paths.ods[a.layout.ev_paths[j].od].ev[a.layout.ev_paths[j].index];
}
const ExpandedPath& fv_path(const Assembly& a, std::size_t j) {
  return a.model.paths.ods[a.layout.fv_paths[j].od].fv[a.layout.fv_paths[j].index];
}

std::string fmt(double v, const char* spec = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Report cells: solver noise below 1e-9 prints as 0.
std::string cell(double v) { return fmt(std::abs(v) < 1e-9 ? 0.0 : v); }

std::string od_name(const OdPair& od) {
  return std::to_string(od.first) + "-" + std::to_string(od.second);
}

std::string join_nodes(const std::vector<NodeId>& nodes) {
  std::string s;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (k) s += ' ';
    s += std::to_string(nodes[k]);
  }
  return s;
}

std::string action_text(const ExpandedPath& p) {
  std::string s;
  for (std::size_t k = 0; k < p.actions.size(); ++k) {
    if (k) s += ' ';
    s += p.actions[k].kind == ActionKind::Charge ? '+' : '-';
    s += std::to_string(p.actions[k].station) + "(" + fmt(p.energy[k], "%.1f") + ")";
  }
  return s;
}

// Arc times, station waits and effective station prices at z.
struct Congestion {
  std::vector<double> arc_flow, times, station_flow, waits;
  std::map<NodeId, double> wait_by_node;
  std::map<NodeId, StationPrice> prices;
};

Congestion congestion(const Assembly& a, const Eigen::VectorXd& z) {
  const Layout& L = a.layout;
  const TransportNetwork& net = a.model.net;
  Congestion c;
  c.arc_flow.assign(net.arcs.size(), 0.0);
  c.station_flow.assign(a.stations.size(), 0.0);
  for (std::size_t j = 0; j < L.f_ev.size(); ++j) {
    const ExpandedPath& p = ev_path(a, j);
    const double f = get(z, L.f_ev[j]);
    for (std::size_t arc : p.arcs) c.arc_flow[arc] += f;
    std::set<NodeId> seen;
    for (const StationAction& act : p.actions) {
      if (seen.insert(act.station).second) c.station_flow[a.station_position(act.station)] += f;
    }
  }
  for (std::size_t j = 0; j < L.f_fv.size(); ++j) {
    for (std::size_t arc : fv_path(a, j).arcs) c.arc_flow[arc] += get(z, L.f_fv[j]);
  }
  for (std::size_t k = 0; k < net.arcs.size(); ++k) {
    const Arc& arc = net.arcs[k];
    c.times.push_back(bpr_time(arc.free_flow_time_h, arc.capacity, c.arc_flow[k]));
  }
  for (std::size_t k = 0; k < a.stations.size(); ++k) {
    const NodeId n = a.stations[k];
    const double w = smoothed_wait(net.stations.at(n), net.period_h, c.station_flow[k]);
    c.waits.push_back(w);
    c.wait_by_node[n] = w;
    const double kappa = get(z, L.station_capacity[k]);
    c.prices[n] = {get(z, L.alpha_charge[k]) + kappa, get(z, L.alpha_discharge[k]) - kappa};
  }
  return c;
}

double ev_cost(const Assembly& a, const Congestion& c, const ExpandedPath& p) {
  return path_cost_ev(p, PathCostInputs{c.times, c.wait_by_node, c.prices}, a.model.ev);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char ch : s) {
    switch (ch) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += ch;
    }
  }
  return o;
}

}  // namespace

// ------------------------------------------------------------- solution

EquilibriumSolution extract_solution(const Assembly& a, const Eigen::VectorXd& z) {
  const Layout& L = a.layout;
  const Model& m = a.model;
  const PowerFeeder& f = m.feeder;
  EquilibriumSolution s;
  s.z = z;
  const Congestion c = congestion(a, z);

  for (std::size_t k = 0; k < m.net.arcs.size(); ++k) {
    s.arcs.push_back({m.net.arcs[k].tail, m.net.arcs[k].head, c.arc_flow[k], c.times[k]});
  }
  for (std::size_t k = 0; k < a.stations.size(); ++k) {
    StationState st;
    st.node = a.stations[k];
    st.bus = f.buses[a.station_bus[k]].id;
    st.flow = c.station_flow[k];
    st.wait_h = c.waits[k];
    st.p_charge = get(z, L.p_charge[k]);
    st.p_discharge = get(z, L.p_discharge[k]);
    st.alpha_charge = get(z, L.alpha_charge[k]);
    st.alpha_discharge = get(z, L.alpha_discharge[k]);
    st.capacity_price = get(z, L.station_capacity[k]);
    s.stations.push_back(st);
  }

  const auto& lses = m.market.lses;
  for (std::size_t i = 0; i < f.buses.size(); ++i) {
    const Bus& bus = f.buses[i];
    BusState b;
    b.id = bus.id;
    b.root = i == a.root_bus;
    b.energized = a.islands.connected_to_tso(i);
    b.dlmp = b.root ? get(z, L.root_balance) : get(z, L.w[i]);
    b.p_dso = get(z, L.p_dso[i]);
    b.p_tso = get(z, L.p_tso[i]);
    b.u2 = get(z, L.u2[i]);
    b.shed = get(z, L.shed[i]);
    b.floor = bus.demand_floor_kw;
    for (std::size_t k = 0; k < lses.size(); ++k) {
      b.sales += get(z, L.sell[k][i]);
      for (std::size_t g = 0; g < L.gen[k].size(); ++g) {
        if (lses[k].generators[g].bus == bus.id) b.generation += get(z, L.gen[k][g]);
      }
    }
    if (bus.demand) b.retail_price = bus.demand->intercept + bus.demand->slope * b.sales;
    s.tso_import += b.p_tso;
    s.buses.push_back(b);
  }
  for (std::size_t l = 0; l < f.lines.size(); ++l) {
    s.lines.push_back({f.buses[a.line_ends[l].first].id, f.buses[a.line_ends[l].second].id,
                       get(z, L.line_p[l]), get(z, L.line_q[l])});
  }
  for (std::size_t j = 0; j < L.f_ev.size(); ++j) {
    const ExpandedPath& p = ev_path(a, j);
    s.paths.push_back({p.od, true, L.ev_paths[j].index, get(z, L.f_ev[j]), ev_cost(a, c, p)});
  }
  for (std::size_t j = 0; j < L.f_fv.size(); ++j) {
    const ExpandedPath& p = fv_path(a, j);
    s.paths.push_back({p.od, false, L.fv_paths[j].index, get(z, L.f_fv[j]),
                       path_cost_fv(p, c.times, m.ev)});
  }
  for (std::size_t o = 0; o < m.paths.ods.size(); ++o) {
    const OdPair& od = m.paths.ods[o].od;
    const OdDemand& d = m.net.od_demands.at(od);
    s.ods.push_back({od, d.ev, d.fv, get(z, L.cost_ev[o]), get(z, L.cost_fv[o])});
  }
  for (std::size_t k = 0; k < lses.size(); ++k) {
    LseState ls;
    ls.name = lses[k].name;
    for (std::size_t v : L.gen[k]) ls.generation += get(z, v);
    for (std::size_t i = 0; i < f.buses.size(); ++i) {
      ls.sales += get(z, L.sell[k][i]);
      ls.to_cno += get(z, L.phi_charge[k][i]);
      ls.from_cno += get(z, L.phi_discharge[k][i]);
      ls.from_tso += get(z, L.phi_tso[k][i]);
    }
    ls.balance_price = get(z, L.lse_balance[k]);
    s.lses.push_back(ls);
  }
  return s;
}

// --------------------------------------------------------------- checks

VerifyReport verify_solution(const Assembly& a, const Eigen::VectorXd& z,
                             const VerifyTolerances& tol) {
  VerifyReport r;
  const McpInstance& mcp = a.mcp;
  const Layout& L = a.layout;
  const Model& m = a.model;
  const PowerFeeder& f = m.feeder;
  const auto& lses = m.market.lses;
  if (static_cast<std::size_t>(z.size()) != mcp.size()) {
    r.failures.push_back("point has dimension " + std::to_string(z.size()) + ", model needs " +
                         std::to_string(mcp.size()));
    r.natural_residual = r.wardrop_gap = r.clearing_residual = r.voltage_residual = kInf;
    return r;
  }
  if (!z.allFinite()) {
    r.failures.push_back("point has non-finite entries");
    r.natural_residual = kInf;
    return r;
  }

  r.natural_residual = natural_residual(mcp, z).lpNorm<Eigen::Infinity>();
  r.complementarity = complementarity_violation(mcp, z);
  if (!(r.natural_residual <= tol.natural)) {
    r.failures.push_back("natural residual " + fmt(r.natural_residual, "%.3e"));
  }

  // Bounds on every coordinate and the inequality rows.
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    r.bound_violation = std::max({r.bound_violation, mcp.lower[k] - z[k], z[k] - mcp.upper[k]});
  }
  const Eigen::VectorXd slack =
      mcp.rhs_ineq - mcp.b_ineq * z.head(static_cast<Eigen::Index>(mcp.primal_size));
  for (Eigen::Index k = 0; k < slack.size(); ++k) {
    r.bound_violation =
        std::max(r.bound_violation, -slack[k] / (1.0 + std::abs(mcp.rhs_ineq[k])));
  }
  if (!(r.bound_violation <= tol.bounds)) {
    r.failures.push_back("bound violation " + fmt(r.bound_violation, "%.3e"));
  }

  // Wardrop: used paths at the OD cost, none below it.
  const Congestion c = congestion(a, z);
  auto wardrop = [&](bool ev, std::size_t o, double cost, double flow, double rs_cost) {
    const double scale = 1.0 + std::abs(rs_cost);
    double gap = std::max(0.0, (rs_cost - cost) / scale);
    if (flow > tol.used_flow) gap = std::max(gap, std::abs(cost - rs_cost) / scale);
    if (gap > r.wardrop_gap) r.wardrop_gap = gap;
    if (gap > tol.wardrop) {
      r.failures.push_back(std::string(ev ? "EV" : "FV") + " Wardrop gap " + fmt(gap, "%.3e") +
                           " on OD " + od_name(m.paths.ods[o].od));
    }
  };
  std::vector<double> served_ev(m.paths.ods.size(), 0.0), served_fv(m.paths.ods.size(), 0.0);
  for (std::size_t j = 0; j < L.f_ev.size(); ++j) {
    const std::size_t o = L.ev_paths[j].od;
    const double flow = get(z, L.f_ev[j]);
    served_ev[o] += flow;
    wardrop(true, o, ev_cost(a, c, ev_path(a, j)), flow, get(z, L.cost_ev[o]));
  }
  for (std::size_t j = 0; j < L.f_fv.size(); ++j) {
    const std::size_t o = L.fv_paths[j].od;
    const double flow = get(z, L.f_fv[j]);
    served_fv[o] += flow;
    wardrop(false, o, path_cost_fv(fv_path(a, j), c.times, m.ev), flow, get(z, L.cost_fv[o]));
  }

  auto clearing = [&](const std::string& what, double residual) {
    r.clearing_residual = std::max(r.clearing_residual, std::abs(residual));
    if (!(std::abs(residual) <= tol.clearing)) {
      r.failures.push_back(what + " residual " + fmt(residual, "%.3e"));
    }
  };
  // Demand is met, and exceeded only at a zero OD cost.
  auto demand = [&](const std::string& what, const Slot& cost, double served, double d) {
    if (!cost) return;
    const double c = get(z, cost);
    const double surplus = served - d;
    clearing(what, surplus >= 0.0 ? std::min(surplus, c) : surplus);
  };
  for (std::size_t o = 0; o < m.paths.ods.size(); ++o) {
    const OdDemand& d = m.net.od_demands.at(m.paths.ods[o].od);
    const std::string od = od_name(m.paths.ods[o].od);
    demand("EV demand " + od, L.cost_ev[o], served_ev[o], d.ev);
    demand("FV demand " + od, L.cost_fv[o], served_fv[o], d.fv);
  }

  // Station energy.
  std::vector<double> ef_c(a.stations.size(), 0.0), ef_d(a.stations.size(), 0.0);
  for (std::size_t j = 0; j < L.f_ev.size(); ++j) {
    const ExpandedPath& p = ev_path(a, j);
    for (std::size_t k = 0; k < p.actions.size(); ++k) {
      auto& dst = p.actions[k].kind == ActionKind::Charge ? ef_c : ef_d;
      dst[a.station_position(p.actions[k].station)] += get(z, L.f_ev[j]) * p.energy[k];
    }
  }
  std::vector<double> bus_c(f.buses.size(), 0.0), bus_d(f.buses.size(), 0.0);
  for (std::size_t k = 0; k < a.stations.size(); ++k) {
    clearing("charge energy at " + std::to_string(a.stations[k]), ef_c[k] - get(z, L.p_charge[k]));
    clearing("discharge energy at " + std::to_string(a.stations[k]),
             ef_d[k] - get(z, L.p_discharge[k]));
    bus_c[a.station_bus[k]] += get(z, L.p_charge[k]);
    bus_d[a.station_bus[k]] += get(z, L.p_discharge[k]);
  }

  // Bus balances.
  std::vector<double> in_p(f.buses.size(), 0.0), out_p(f.buses.size(), 0.0);
  for (std::size_t l = 0; l < f.lines.size(); ++l) {
    out_p[a.line_ends[l].first] += get(z, L.line_p[l]);
    in_p[a.line_ends[l].second] += get(z, L.line_p[l]);
  }
  double tso_total = 0.0;
  for (std::size_t i = 0; i < f.buses.size(); ++i) {
    const std::string id = std::to_string(f.buses[i].id);
    double withdrawal = 0.0, phi_c = 0.0, phi_d = 0.0, phi_t = 0.0;
    for (std::size_t k = 0; k < lses.size(); ++k) {
      withdrawal += get(z, L.sell[k][i]) + get(z, L.phi_charge[k][i]) -
                    get(z, L.phi_discharge[k][i]);
      for (std::size_t g = 0; g < L.gen[k].size(); ++g) {
        if (lses[k].generators[g].bus == f.buses[i].id) withdrawal -= get(z, L.gen[k][g]);
      }
      phi_c += get(z, L.phi_charge[k][i]);
      phi_d += get(z, L.phi_discharge[k][i]);
      phi_t += get(z, L.phi_tso[k][i]);
    }
    tso_total += get(z, L.p_tso[i]);
    if (i == a.root_bus) continue;
    clearing("injection balance at bus " + id, withdrawal - get(z, L.p_dso[i]));
    clearing("nodal flow balance at bus " + id, get(z, L.p_dso[i]) - (in_p[i] - out_p[i]));
    if (L.price_charge[i]) clearing("CNO purchase at bus " + id, bus_c[i] - phi_c);
    if (L.price_discharge[i]) clearing("CNO sale at bus " + id, bus_d[i] - phi_d);
    if (L.m[i]) clearing("TSO sale at bus " + id, phi_t - get(z, L.p_tso[i]));
  }
  clearing("root balance", out_p[a.root_bus] - in_p[a.root_bus] - tso_total);
  for (std::size_t k = 0; k < lses.size(); ++k) {
    double balance = 0.0;
    for (std::size_t i = 0; i < f.buses.size(); ++i) {
      balance += get(z, L.sell[k][i]) + get(z, L.phi_charge[k][i]) -
                 get(z, L.phi_discharge[k][i]) - get(z, L.phi_tso[k][i]);
    }
    for (std::size_t v : L.gen[k]) balance -= get(z, v);
    clearing("energy balance of " + lses[k].name, balance);
  }

  for (std::size_t l = 0; l < f.lines.size(); ++l) {
    const Line& line = f.lines[l];
    const auto [u, v] = a.line_ends[l];
    const double res = get(z, L.u2[u]) - get(z, L.u2[v]) -
                       2.0 * (line.r_pu * get(z, L.line_p[l]) + line.x_pu * get(z, L.line_q[l])) /
                           f.base_kva;
    r.voltage_residual = std::max(r.voltage_residual, std::abs(res));
    if (!(std::abs(res) <= tol.voltage)) {
      r.failures.push_back("voltage drop on line " + std::to_string(f.buses[u].id) + "-" +
                           std::to_string(f.buses[v].id) + " residual " + fmt(res, "%.3e"));
    }
  }
  return r;
}

// -------------------------------------------------------------- metrics

std::map<BusId, double> compute_dlmp(const EquilibriumSolution& s) {
  std::map<BusId, double> out;
  for (const BusState& b : s.buses) {
    if (!b.root) out[b.id] = b.dlmp;
  }
  return out;
}

SocialCost compute_social_cost(const Assembly& a, const EquilibriumSolution& s) {
  const Layout& L = a.layout;
  const Model& m = a.model;
  SocialCost sc;
  for (std::size_t k = 0; k < m.market.lses.size(); ++k) {
    for (std::size_t g = 0; g < L.gen[k].size(); ++g) {
      const Generator& gen = m.market.lses[k].generators[g];
      const double q = get(s.z, L.gen[k][g]);
      sc.generation += (gen.quad_coeff * q + gen.lin_coeff) * q;
    }
  }
  std::vector<double> times;
  for (const ArcState& arc : s.arcs) times.push_back(arc.time_h);
  std::map<NodeId, double> waits;
  for (const StationState& st : s.stations) waits[st.node] = st.wait_h;
  for (std::size_t j = 0; j < L.f_ev.size(); ++j) {
    const ExpandedPath& p = ev_path(a, j);
    const double flow = get(s.z, L.f_ev[j]);
    double hours = 0.0;
    for (std::size_t arc : p.arcs) hours += times[arc];
    std::set<NodeId> seen;
    for (const StationAction& act : p.actions) {
      if (seen.insert(act.station).second) hours += waits[act.station];
    }
    const double energy = p.charge_energy() + p.discharge_energy();
    hours += energy / m.ev.pile_kw;
    sc.travel_time += flow * m.ev.value_of_time_ev * hours;
    sc.degradation += flow * m.ev.degradation_per_kwh * energy;
  }
  for (std::size_t j = 0; j < L.f_fv.size(); ++j) {
    double hours = 0.0;
    for (std::size_t arc : fv_path(a, j).arcs) hours += times[arc];
    sc.travel_time += get(s.z, L.f_fv[j]) * m.ev.value_of_time_fv * hours;
  }
  double shed = 0.0;
  for (const BusState& b : s.buses) shed += b.shed;
  sc.shedding = m.market.shedding_penalty * shed;
  return sc;
}

EvStats report_ev_behavior(const Assembly& a, const EquilibriumSolution& s) {
  const Layout& L = a.layout;
  const Model& m = a.model;
  EvStats st;
  double demand = 0.0;
  for (const OdState& od : s.ods) demand += od.demand_ev;
  std::map<NodeId, double> waits;
  for (const StationState& x : s.stations) {
    waits[x.node] = x.wait_h;
    st.gross_charge_kwh += x.p_charge;
    st.gross_discharge_kwh += x.p_discharge;
  }
  std::map<std::size_t, double> discharge_by_od;
  double visiting = 0.0, discharging = 0.0;
  for (std::size_t j = 0; j < L.f_ev.size(); ++j) {
    const ExpandedPath& p = ev_path(a, j);
    const double flow = get(s.z, L.f_ev[j]);
    if (p.actions.empty()) continue;
    visiting += flow;
    if (p.has_discharge()) {
      discharging += flow;
      discharge_by_od[L.ev_paths[j].od] += flow;
    }
    std::set<NodeId> seen;
    double hours = 0.0;
    for (std::size_t k = 0; k < p.actions.size(); ++k) {
      if (seen.insert(p.actions[k].station).second) hours += waits[p.actions[k].station];
      hours += p.energy[k] / m.ev.pile_kw;
    }
    st.dwell_hours += flow * hours;
  }
  if (demand > 0.0) {
    st.visitation_share = std::clamp(visiting / demand, 0.0, 1.0);
    st.v2g_share = std::clamp(discharging / demand, 0.0, 1.0);
  }
  for (const auto& [od, flow] : discharge_by_od) {
    if (flow > kActiveDischargeFlow) ++st.active_discharge_ods;
  }
  return st;
}

std::vector<DominantPath> dominant_paths(const Assembly& a, const EquilibriumSolution& s) {
  const Layout& L = a.layout;
  const Model& m = a.model;
  std::map<NodeId, double> waits;
  std::map<NodeId, StationPrice> prices;
  for (const StationState& x : s.stations) {
    waits[x.node] = x.wait_h;
    prices[x.node] = {x.alpha_charge + x.capacity_price, x.alpha_discharge - x.capacity_price};
  }
  std::vector<double> times;
  for (const ArcState& arc : s.arcs) times.push_back(arc.time_h);
  std::vector<DominantPath> out;
  std::size_t j = 0;
  while (j < L.f_ev.size()) {
    const std::size_t o = L.ev_paths[j].od;
    std::size_t best = j;
    double total = 0.0;
    for (; j < L.f_ev.size() && L.ev_paths[j].od == o; ++j) {
      const double f = get(s.z, L.f_ev[j]);
      total += f;
      if (f > get(s.z, L.f_ev[best])) best = j;
    }
    const ExpandedPath& p = ev_path(a, best);
    DominantPath d;
    d.od = p.od;
    d.nodes = p.nodes;
    d.actions = action_text(p);
    d.pattern = pattern_label(p.pattern);
    d.flow = get(s.z, L.f_ev[best]);
    d.share = total > 0.0 ? d.flow / total : 0.0;
    d.distance_km = p.distance_km(m.net);
    double hours = 0.0;
    for (std::size_t arc : p.arcs) hours += times[arc];
    std::set<NodeId> seen;
    for (std::size_t k = 0; k < p.actions.size(); ++k) {
      const NodeId n = p.actions[k].station;
      if (seen.insert(n).second) hours += waits[n];
      hours += p.energy[k] / m.ev.pile_kw;
      if (p.actions[k].kind == ActionKind::Charge) {
        d.energy_cost += p.energy[k] * (prices[n].charge + m.ev.degradation_per_kwh);
      } else {
        d.energy_cost -= p.energy[k] * (prices[n].discharge - m.ev.degradation_per_kwh);
      }
    }
    d.time_cost = m.ev.value_of_time_ev * hours;
    d.cost = d.time_cost + d.energy_cost;
    out.push_back(std::move(d));
  }
  return out;
}

MetricsReport compute_metrics(const Assembly& a, const EquilibriumSolution& s) {
  MetricsReport r;
  r.dlmp = compute_dlmp(s);
  r.max_dlmp = -kInf;
  for (const auto& [bus, price] : r.dlmp) r.max_dlmp = std::max(r.max_dlmp, price);
  if (r.dlmp.empty()) r.max_dlmp = 0.0;
  for (const BusState& b : s.buses) {
    r.total_shed += b.shed;
    r.generation += b.generation;
  }
  r.tso_import = s.tso_import;
  for (const StationState& st : s.stations) {
    r.v2g_supply += st.p_discharge;
    r.station_net_load[st.node] = st.net_load();
  }
  r.social_cost = compute_social_cost(a, s);
  r.ev = report_ev_behavior(a, s);
  r.dominant = dominant_paths(a, s);
  return r;
}

// ------------------------------------------------------------- pipeline

LoadedCase load_case(const RunInputs& in) {
  LoadedCase c;
  c.config = load_case_file(in.case_path);
  c.net = load_transport_tntp_files(in.net_path, in.trips_path, c.config.transport);
  c.feeder = load_feeder_file(in.feeder_path);
  validate_feeder(c.feeder, true, in.feeder_path);
  c.config.ev.validate();
  c.config.market.validate(c.feeder, c.net);
  return c;
}

Model build_model(const LoadedCase& c, const ScenarioSpec& scenario, bool v2g,
                  unsigned path_threads) {
  Model m;
  m.net = c.net;
  if (scenario.ev_share) apply_ev_share(m.net, *scenario.ev_share);
  m.feeder = apply_scenario(c.feeder, scenario);
  m.ev = c.config.ev;
  m.market = c.config.market;
  m.market.validate(m.feeder, m.net);
  PathGenOptions po;
  po.k = c.config.paths.k;
  po.by_distance = c.config.paths.by_distance;
  po.v2g = v2g;
  m.paths = build_path_catalog(m.net, m.ev, po, path_threads);
  return m;
}

RunResult run_scenario(const LoadedCase& c, const RunInputs& inputs,
                       const ScenarioSpec& scenario, bool v2g, const SolverConfig& solver,
                       unsigned path_threads) {
  RunResult r;
  r.inputs = inputs;
  r.scenario = scenario;
  r.v2g = v2g;
  r.id = scenario.name + "-v2g-" + (v2g ? "on" : "off");
  r.assembly = assemble_mcp(build_model(c, scenario, v2g, path_threads));
  r.unbounded = unbounded_primal_directions(r.assembly);

  std::vector<StartPoint> starts;
  const auto zs = default_starts(r.assembly);
  const auto names = default_start_names();
  for (std::size_t k = 0; k < zs.size(); ++k) starts.push_back({names[k], zs[k]});
  r.solve = solve(r.assembly.mcp, solver, starts);
  normalize_prices(r.assembly, r.solve.z);

  r.solution = extract_solution(r.assembly, r.solve.z);
  r.verify = verify_solution(r.assembly, r.solve.z);
  r.solve.report.wardrop_gap = r.verify.wardrop_gap;
  r.solve.report.clearing_residual = r.verify.clearing_residual;
  r.solve.report.natural_residual = r.verify.natural_residual;
  r.metrics = compute_metrics(r.assembly, r.solution);
  r.metrics.scenario = scenario.name;
  r.metrics.v2g = v2g;
  r.metrics.status = status_name(r.solve.report.status);
  return r;
}

unsigned thread_budget() {
  if (const char* env = std::getenv("V2GEQ_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<RunResult> run_sweep(const LoadedCase& c, const RunInputs& inputs,
                                 const std::vector<std::string>& scenario_paths,
                                 const SolverConfig& solver, unsigned threads) {
  struct Job {
    RunInputs inputs;
    ScenarioSpec scenario;
    bool v2g;
  };
  std::vector<Job> jobs;
  for (const std::string& path : scenario_paths) {
    const ScenarioSpec spec = load_scenario_file(path);
    for (bool v2g : {false, true}) {
      RunInputs in = inputs;
      in.scenario_path = path;
      in.v2g = v2g;
      jobs.push_back({in, spec, v2g});
    }
  }
  if (threads == 0) threads = thread_budget();
  std::vector<RunResult> out(jobs.size());
  for (std::size_t start = 0; start < jobs.size(); start += threads) {
    const std::size_t end = std::min(jobs.size(), start + threads);
    std::vector<std::future<RunResult>> running;
    for (std::size_t k = start; k < end; ++k) {
      running.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred,
                                   [&, k] {
                                     return run_scenario(c, jobs[k].inputs, jobs[k].scenario,
                                                         jobs[k].v2g, solver);
                                   }));
    }
    for (std::size_t k = start; k < end; ++k) out[k] = running[k - start].get();
  }
  return out;
}

// --------------------------------------------------------------- output

nlohmann::json solution_to_json(const RunResult& r) {
  using nlohmann::json;
  const EquilibriumSolution& s = r.solution;
  json inputs = {{"net", r.inputs.net_path},
                 {"trips", r.inputs.trips_path},
                 {"case", r.inputs.case_path},
                 {"feeder", r.inputs.feeder_path},
                 {"scenario", r.inputs.scenario_path ? json(*r.inputs.scenario_path) : json()},
                 {"v2g", r.v2g}};
  json arcs = json::array();
  for (const ArcState& x : s.arcs) {
    arcs.push_back({{"tail", x.tail}, {"head", x.head}, {"flow", x.flow}, {"time_h", x.time_h}});
  }
  json stations = json::array();
  for (const StationState& x : s.stations) {
    stations.push_back({{"node", x.node},
                        {"bus", x.bus},
                        {"flow", x.flow},
                        {"wait_h", x.wait_h},
                        {"p_charge_kw", x.p_charge},
                        {"p_discharge_kw", x.p_discharge},
                        {"net_load_kw", x.net_load()},
                        {"alpha_charge", x.alpha_charge},
                        {"alpha_discharge", x.alpha_discharge},
                        {"capacity_price", x.capacity_price}});
  }
  json buses = json::array();
  for (const BusState& x : s.buses) {
    buses.push_back({{"id", x.id},
                     {"root", x.root},
                     {"energized", x.energized},
                     {"dlmp", x.dlmp},
                     {"p_dso_kw", x.p_dso},
                     {"p_tso_kw", x.p_tso},
                     {"u2", x.u2},
                     {"sales_kw", x.sales},
                     {"generation_kw", x.generation},
                     {"shed_kw", x.shed},
                     {"floor_kw", x.floor},
                     {"retail_price", x.retail_price}});
  }
  json lines = json::array();
  for (const LineState& x : s.lines) {
    lines.push_back({{"from", x.from}, {"to", x.to}, {"p_kw", x.p}, {"q_kvar", x.q}});
  }
  json paths = json::array();
  for (const PathState& x : s.paths) {
    if (x.flow <= 1e-9) continue;
    const auto& od = r.assembly.model.paths.ods;
    const auto it = std::find_if(od.begin(), od.end(), [&](const OdPaths& p) { return p.od == x.od; });
    const ExpandedPath& p = x.ev ? it->ev[x.index] : it->fv[x.index];
    paths.push_back({{"od", {x.od.first, x.od.second}},
                     {"class", x.ev ? "EV" : "FV"},
                     {"index", x.index},
                     {"nodes", p.nodes},
                     {"actions", action_text(p)},
                     {"pattern", pattern_label(p.pattern)},
                     {"flow", x.flow},
                     {"cost", x.cost}});
  }
  json ods = json::array();
  for (const OdState& x : s.ods) {
    ods.push_back({{"od", {x.od.first, x.od.second}},
                   {"demand_ev", x.demand_ev},
                   {"demand_fv", x.demand_fv},
                   {"cost_ev", x.cost_ev},
                   {"cost_fv", x.cost_fv}});
  }
  json lses = json::array();
  for (const LseState& x : s.lses) {
    lses.push_back({{"name", x.name},
                    {"generation_kw", x.generation},
                    {"sales_kw", x.sales},
                    {"to_cno_kw", x.to_cno},
                    {"from_cno_kw", x.from_cno},
                    {"from_tso_kw", x.from_tso},
                    {"balance_price", x.balance_price}});
  }
  const MetricsReport& m = r.metrics;
  json dominant = json::array();
  for (const DominantPath& d : m.dominant) {
    dominant.push_back({{"od", {d.od.first, d.od.second}},
                        {"nodes", d.nodes},
                        {"actions", d.actions},
                        {"pattern", d.pattern},
                        {"flow", d.flow},
                        {"share", d.share},
                        {"distance_km", d.distance_km},
                        {"cost", d.cost},
                        {"time_cost", d.time_cost},
                        {"energy_cost", d.energy_cost}});
  }
  json metrics = {
      {"max_dlmp", m.max_dlmp},
      {"total_shed_kw", m.total_shed},
      {"generation_kw", m.generation},
      {"tso_import_kw", m.tso_import},
      {"v2g_supply_kw", m.v2g_supply},
      {"social_cost",
       {{"generation", m.social_cost.generation},
        {"travel_time", m.social_cost.travel_time},
        {"degradation", m.social_cost.degradation},
        {"shedding", m.social_cost.shedding},
        {"total", m.social_cost.total()}}},
      {"ev",
       {{"visitation_share", m.ev.visitation_share},
        {"v2g_share", m.ev.v2g_share},
        {"gross_charge_kwh", m.ev.gross_charge_kwh},
        {"gross_discharge_kwh", m.ev.gross_discharge_kwh},
        {"dwell_hours", m.ev.dwell_hours},
        {"active_discharge_ods", m.ev.active_discharge_ods}}},
      {"dominant_paths", dominant}};
  json verify = {{"pass", r.verify.pass()},
                 {"natural_residual", r.verify.natural_residual},
                 {"complementarity", r.verify.complementarity},
                 {"wardrop_gap", r.verify.wardrop_gap},
                 {"clearing_residual", r.verify.clearing_residual},
                 {"voltage_residual", r.verify.voltage_residual},
                 {"bound_violation", r.verify.bound_violation},
                 {"failures", r.verify.failures}};
  std::vector<double> z(s.z.data(), s.z.data() + s.z.size());
  return {{"id", r.id},
          {"scenario", r.scenario.name},
          {"v2g", r.v2g},
          {"inputs", inputs},
          {"warnings", r.assembly.warnings},
          {"unbounded_directions", r.unbounded},
          {"report", report_to_json(r.solve.report)},
          {"verify", verify},
          {"metrics", metrics},
          {"arcs", arcs},
          {"stations", stations},
          {"buses", buses},
          {"lines", lines},
          {"paths", paths},
          {"ods", ods},
          {"lses", lses},
          {"catalog", r.assembly.catalog.to_json()},
          {"labels", r.assembly.mcp.labels},
          {"z", z}};
}

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& categories,
                          const std::vector<BarSeries>& series, bool stacked) {
  static const char* palette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44",
                                  "#66ccee", "#aa3377", "#bbbbbb"};
  const double width = 760, height = 420, left = 70, right = 170, top = 40, bottom = 90;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  double hi = 0.0, lo = 0.0;
  for (std::size_t c = 0; c < categories.size(); ++c) {
    double pos = 0.0, neg = 0.0;
    for (const BarSeries& s : series) {
      const double v = c < s.values.size() ? s.values[c] : 0.0;
      if (stacked) {
        (v >= 0 ? pos : neg) += v;
      } else {
        pos = std::max(pos, v);
        neg = std::min(neg, v);
      }
    }
    hi = std::max(hi, pos);
    lo = std::min(lo, neg);
  }
  if (hi == lo) hi = lo + 1.0;
  const double span = hi - lo;
  hi += 0.05 * span;
  if (lo < 0) lo -= 0.05 * span;
  auto y_of = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(title) << "</text>\n";
  o << "<text transform=\"translate(16," << top + plot_h / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(y_label) << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    const double y = y_of(v);
    o << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << y << "\" y2=\"" << y
      << "\" stroke=\"#dddddd\"/>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(v, "%.4g")
      << "</text>\n";
  }
  o << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << y_of(0) << "\" y2=\""
    << y_of(0) << "\" stroke=\"black\"/>\n";
  const double slot = categories.empty() ? plot_w : plot_w / static_cast<double>(categories.size());
  const double bar_w = stacked || series.empty() ? slot * 0.6
                                                 : slot * 0.8 / static_cast<double>(series.size());
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double x0 = left + slot * static_cast<double>(c);
    double pos = 0.0, neg = 0.0;
    for (std::size_t k = 0; k < series.size(); ++k) {
      const double v = c < series[k].values.size() ? series[k].values[c] : 0.0;
      double base = 0.0, x = 0.0;
      if (stacked) {
        base = v >= 0 ? pos : neg;
        (v >= 0 ? pos : neg) += v;
        x = x0 + slot * 0.2;
      } else {
        x = x0 + slot * 0.1 + bar_w * static_cast<double>(k);
      }
      const double ya = y_of(base), yb = y_of(base + v);
      o << "<rect x=\"" << x << "\" y=\"" << std::min(ya, yb) << "\" width=\"" << bar_w
        << "\" height=\"" << std::abs(yb - ya) << "\" fill=\"" << palette[k % 7] << "\"><title>"
        << xml_escape(series[k].name) << ": " << fmt(v, "%.6g") << "</title></rect>\n";
    }
    o << "<text transform=\"translate(" << x0 + slot / 2 << "," << top + plot_h + 14
      << ") rotate(30)\">" << xml_escape(categories[c]) << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double y = top + 16.0 * static_cast<double>(k);
    o << "<rect x=\"" << left + plot_w + 16 << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\""
      << palette[k % 7] << "\"/>\n";
    o << "<text x=\"" << left + plot_w + 32 << "\" y=\"" << y + 9 << "\">" << xml_escape(series[k].name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void emit_outputs(const std::vector<RunResult>& runs, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw std::runtime_error("cannot create " + root.string() + ": " + ec.message());

  std::ostringstream metrics, dlmp, used, dominant;
  metrics << "scenario,v2g,status,max_dlmp,total_shed_kw,generation_kw,tso_import_kw,"
             "v2g_supply_kw,cost_generation,cost_travel_time,cost_degradation,cost_shedding,"
             "cost_total,visitation_share,v2g_share,gross_charge_kwh,gross_discharge_kwh,"
             "dwell_hours,active_discharge_ods,verified\n";
  dlmp << "scenario,v2g,bus,energized,dlmp\n";
  used << "scenario,v2g,od,class,path,pattern,nodes,actions,flow,cost,distance_km\n";
  dominant << "scenario,v2g,od,nodes,actions,pattern,flow,share,distance_km,cost,time_cost,"
              "energy_cost\n";
  for (const RunResult& r : runs) {
    const MetricsReport& m = r.metrics;
    const std::string head = r.scenario.name + "," + (r.v2g ? "on" : "off") + ",";
    metrics << head << m.status << ',' << cell(m.max_dlmp) << ',' << cell(m.total_shed) << ','
            << cell(m.generation) << ',' << cell(m.tso_import) << ',' << cell(m.v2g_supply) << ','
            << cell(m.social_cost.generation) << ',' << cell(m.social_cost.travel_time) << ','
            << cell(m.social_cost.degradation) << ',' << cell(m.social_cost.shedding) << ','
            << cell(m.social_cost.total()) << ',' << cell(m.ev.visitation_share) << ','
            << cell(m.ev.v2g_share) << ',' << cell(m.ev.gross_charge_kwh) << ','
            << cell(m.ev.gross_discharge_kwh) << ',' << cell(m.ev.dwell_hours) << ','
            << m.ev.active_discharge_ods << ',' << (r.verify.pass() ? "yes" : "no") << '\n';
    for (const BusState& b : r.solution.buses) {
      if (b.root) continue;
      dlmp << head << b.id << ',' << (b.energized ? "yes" : "no") << ',' << cell(b.dlmp) << '\n';
    }
    for (const PathState& p : r.solution.paths) {
      if (p.flow <= 1e-6) continue;
      const auto& ods = r.assembly.model.paths.ods;
      const auto it =
          std::find_if(ods.begin(), ods.end(), [&](const OdPaths& x) { return x.od == p.od; });
      const ExpandedPath& path = p.ev ? it->ev[p.index] : it->fv[p.index];
      used << head << od_name(p.od) << ',' << (p.ev ? "EV" : "FV") << ',' << p.index << ','
           << (p.ev ? pattern_label(path.pattern) : "-") << ',' << join_nodes(path.nodes) << ','
           << action_text(path) << ',' << cell(p.flow) << ',' << cell(p.cost) << ','
           << cell(path.distance_km(r.assembly.model.net)) << '\n';
    }
    for (const DominantPath& d : m.dominant) {
      dominant << head << od_name(d.od) << ',' << join_nodes(d.nodes) << ',' << d.actions << ','
               << d.pattern << ',' << cell(d.flow) << ',' << cell(d.share) << ','
               << cell(d.distance_km) << ',' << cell(d.cost) << ',' << cell(d.time_cost) << ','
               << cell(d.energy_cost) << '\n';
    }
    const fs::path dir = runs.size() == 1 ? root : root / r.id;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
    write_file(dir / "solution.json", solution_to_json(r).dump(1) + "\n");
  }
  write_file(root / "metrics.csv", metrics.str());
  write_file(root / "dlmp.csv", dlmp.str());
  write_file(root / "paths_used.csv", used.str());
  write_file(root / "dominant_paths.csv", dominant.str());

  std::vector<std::string> ids;
  for (const RunResult& r : runs) ids.push_back(r.id);
  auto series_of = [&](const std::string& name, auto get_value) {
    BarSeries s{name, {}};
    for (const RunResult& r : runs) s.values.push_back(get_value(r));
    return s;
  };
  write_file(root / "supply_mix.svg",
             bar_chart_svg("Supply mix", "kW", ids,
                           {series_of("LSE generation", [](const RunResult& r) { return r.metrics.generation; }),
                            series_of("TSO import", [](const RunResult& r) { return r.metrics.tso_import; }),
                            series_of("V2G discharge", [](const RunResult& r) { return r.metrics.v2g_supply; })},
                           true));
  std::vector<BarSeries> station_series;
  if (!runs.empty()) {
    for (const auto& [node, load] : runs.front().metrics.station_net_load) {
      station_series.push_back(series_of("FCS " + std::to_string(node), [node = node](const RunResult& r) {
        const auto it = r.metrics.station_net_load.find(node);
        return it == r.metrics.station_net_load.end() ? 0.0 : it->second;
      }));
    }
  }
  write_file(root / "station_net_load.svg",
             bar_chart_svg("Station net load", "kW", ids, station_series, false));
  write_file(root / "load_shedding.svg",
             bar_chart_svg("Load shedding", "kW", ids,
                           {series_of("total LS", [](const RunResult& r) { return r.metrics.total_shed; })},
                           false));
  write_file(root / "max_dlmp.svg",
             bar_chart_svg("Maximum DLMP", "$/kWh", ids,
                           {series_of("max DLMP", [](const RunResult& r) { return r.metrics.max_dlmp; })},
                           false));
  write_file(root / "social_cost.svg",
             bar_chart_svg("Social cost", "$", ids,
                           {series_of("generation", [](const RunResult& r) { return r.metrics.social_cost.generation; }),
                            series_of("travel time", [](const RunResult& r) { return r.metrics.social_cost.travel_time; }),
                            series_of("degradation", [](const RunResult& r) { return r.metrics.social_cost.degradation; }),
                            series_of("shedding", [](const RunResult& r) { return r.metrics.social_cost.shedding; })},
                           true));
}

VerifyReport verify_solution_file(const std::string& path, std::string* summary) {
  std::ifstream in(path);
  if (!in) throw InputError(path, 0, "cannot open solution file");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path, 0, std::string("malformed JSON: ") + e.what());
  }
  const auto& ij = j.at("inputs");
  RunInputs inputs;
  inputs.net_path = ij.at("net").get<std::string>();
  inputs.trips_path = ij.at("trips").get<std::string>();
  inputs.case_path = ij.at("case").get<std::string>();
  inputs.feeder_path = ij.at("feeder").get<std::string>();
  if (!ij.at("scenario").is_null()) inputs.scenario_path = ij.at("scenario").get<std::string>();
  const bool v2g = ij.at("v2g").get<bool>();
  const LoadedCase c = load_case(inputs);
  const ScenarioSpec spec =
      inputs.scenario_path ? load_scenario_file(*inputs.scenario_path) : ScenarioSpec{};
  const Assembly a = assemble_mcp(build_model(c, spec, v2g));
  const auto values = j.at("z").get<std::vector<double>>();
  const auto labels = j.at("labels").get<std::vector<std::string>>();
  VerifyReport r;
  if (labels != a.mcp.labels) {
    r.failures.push_back("variable labels differ from the rebuilt model");
    if (summary) *summary = "label mismatch";
    return r;
  }
  const Eigen::VectorXd z =
      Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  r = verify_solution(a, z);
  if (summary) {
    *summary = "natural residual " + fmt(r.natural_residual, "%.3e") + ", Wardrop gap " +
               fmt(r.wardrop_gap, "%.3e") + ", clearing " + fmt(r.clearing_residual, "%.3e") +
               ", voltage " + fmt(r.voltage_residual, "%.3e") + ", bounds " +
               fmt(r.bound_violation, "%.3e");
  }
  return r;
}

}  // namespace v2geq
