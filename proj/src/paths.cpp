#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "v2geq/error.hpp"
#include "v2geq/paths.hpp"

namespace v2geq {
namespace {

constexpr double kEnergyTol = 1e-9;

// Path costs are compared after rounding so that mathematically equal
// totals accumulated in different orders tie, and ties fall through to the
// node sequence.
long long cost_key(double c) { return std::llround(c * 1e9); }

struct Label {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<NodeId> nodes;
  std::vector<std::size_t> arcs;
  bool reached = false;
};

bool label_less(const Label& a, const Label& b) {
  if (!b.reached) return a.reached;
  if (!a.reached) return false;
  const auto ka = cost_key(a.cost), kb = cost_key(b.cost);
  if (ka != kb) return ka < kb;
  return a.nodes < b.nodes;
}

// Dense Dijkstra over node indices with lexicographic tie-breaking.
std::optional<BasePath> shortest_path(const TransportNetwork& net,
                                      const std::vector<double>& weight,
                                      std::size_t src, std::size_t dst,
                                      const std::vector<char>& node_blocked,
                                      const std::vector<char>& arc_blocked,
                                      const std::vector<std::vector<std::size_t>>& out_arcs,
                                      const std::map<NodeId, std::size_t>& index) {
  const std::size_t n = net.nodes.size();
  std::vector<Label> label(n);
  std::vector<char> done(n, 0);
  label[src].cost = 0.0;
  label[src].nodes = {net.nodes[src]};
  label[src].reached = true;
  for (;;) {
    std::size_t best = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (done[v] || !label[v].reached) continue;
      if (best == n || label_less(label[v], label[best])) best = v;
    }
    if (best == n) return std::nullopt;
    if (best == dst) break;
    done[best] = 1;
    for (std::size_t a : out_arcs[best]) {
      if (arc_blocked[a]) continue;
      const std::size_t h = index.at(net.arcs[a].head);
      if (done[h] || node_blocked[h]) continue;
      Label cand;
      cand.reached = true;
      cand.cost = label[best].cost + weight[a];
      cand.nodes = label[best].nodes;
      cand.nodes.push_back(net.nodes[h]);
      cand.arcs = label[best].arcs;
      cand.arcs.push_back(a);
      if (label_less(cand, label[h])) label[h] = std::move(cand);
    }
  }
  BasePath p;
  p.cost = label[dst].cost;
  p.nodes = std::move(label[dst].nodes);
  p.arcs = std::move(label[dst].arcs);
  return p;
}

struct CandidateLess {
  bool operator()(const BasePath& a, const BasePath& b) const {
    const auto ka = cost_key(a.cost), kb = cost_key(b.cost);
    if (ka != kb) return ka < kb;
    return a.nodes < b.nodes;
  }
};

void require_node(const TransportNetwork& net, NodeId n) {
  if (!net.has_node(n)) {
    throw InputError("paths", 0, "node " + std::to_string(n) + " is not in the network");
  }
}

}  // namespace

ExpandedNetwork expand_network(const TransportNetwork& net) {
  ExpandedNetwork ex;
  std::map<NodeId, std::size_t> idx;
  for (NodeId n : net.nodes) {
    idx[n] = ex.nodes.size();
    ex.nodes.push_back({n, NodeRole::Physical});
  }
  for (std::size_t a = 0; a < net.arcs.size(); ++a) {
    const Arc& arc = net.arcs[a];
    ex.arcs.push_back({idx[arc.tail], idx[arc.head], arc.distance_km,
                       arc.consumption_kwh_per_km, a});
  }
  for (const auto& [n, st] : net.stations) {
    for (NodeRole role : {NodeRole::Charge, NodeRole::Discharge}) {
      const std::size_t v = ex.nodes.size();
      ex.nodes.push_back({n, role});
      ex.arcs.push_back({idx[n], v, 0.0, 0.0, std::nullopt});
      for (std::size_t a = 0; a < net.arcs.size(); ++a) {
        const Arc& arc = net.arcs[a];
        if (arc.tail != n) continue;
        ex.arcs.push_back({v, idx[arc.head], arc.distance_km,
                           arc.consumption_kwh_per_km, a});
      }
    }
  }
  return ex;
}

std::vector<BasePath> k_shortest_paths(const TransportNetwork& net, NodeId r,
                                       NodeId s, std::size_t k,
                                       bool by_distance) {
  require_node(net, r);
  require_node(net, s);
  std::vector<BasePath> accepted;
  if (k == 0 || r == s) return accepted;

  std::map<NodeId, std::size_t> index;
  for (std::size_t i = 0; i < net.nodes.size(); ++i) index[net.nodes[i]] = i;
  std::vector<std::vector<std::size_t>> out_arcs(net.nodes.size());
  std::vector<double> weight(net.arcs.size());
  for (std::size_t a = 0; a < net.arcs.size(); ++a) {
    out_arcs[index[net.arcs[a].tail]].push_back(a);
    weight[a] = by_distance ? net.arcs[a].distance_km : net.arcs[a].free_flow_time_h;
  }

  std::vector<char> node_blocked(net.nodes.size(), 0);
  std::vector<char> arc_blocked(net.arcs.size(), 0);
  auto first = shortest_path(net, weight, index[r], index[s], node_blocked,
                             arc_blocked, out_arcs, index);
  if (!first) return accepted;
  accepted.push_back(*first);

  std::set<BasePath, CandidateLess> candidates;
  std::set<std::vector<NodeId>> seen{first->nodes};
  while (accepted.size() < k) {
    const BasePath prev = accepted.back();
    for (std::size_t i = 0; i + 1 < prev.nodes.size(); ++i) {
      std::fill(node_blocked.begin(), node_blocked.end(), 0);
      std::fill(arc_blocked.begin(), arc_blocked.end(), 0);
      for (const BasePath& p : accepted) {
        if (p.nodes.size() > i &&
            std::equal(p.nodes.begin(), p.nodes.begin() + i + 1, prev.nodes.begin())) {
          arc_blocked[p.arcs[i]] = 1;
        }
      }
      for (std::size_t j = 0; j < i; ++j) node_blocked[index[prev.nodes[j]]] = 1;
      auto spur = shortest_path(net, weight, index[prev.nodes[i]], index[s],
                                node_blocked, arc_blocked, out_arcs, index);
      if (!spur) continue;
      BasePath total;
      total.nodes.assign(prev.nodes.begin(), prev.nodes.begin() + i);
      total.nodes.insert(total.nodes.end(), spur->nodes.begin(), spur->nodes.end());
      total.arcs.assign(prev.arcs.begin(), prev.arcs.begin() + i);
      total.arcs.insert(total.arcs.end(), spur->arcs.begin(), spur->arcs.end());
      total.cost = 0.0;
      for (std::size_t a : total.arcs) total.cost += weight[a];
      if (seen.insert(total.nodes).second) candidates.insert(std::move(total));
    }
    if (candidates.empty()) break;
    accepted.push_back(*candidates.begin());
    candidates.erase(candidates.begin());
  }
  return accepted;
}

std::optional<SocTrace> simulate_soc(std::span<const NodeId> nodes,
                                     std::span<const StationAction> actions,
                                     const EvParams& ev,
                                     const TransportNetwork& net) {
  if (nodes.empty()) throw std::invalid_argument("empty node sequence");
  if (actions.size() > 2) throw std::invalid_argument("more than two station actions");
  std::vector<double> step(nodes.size(), 0.0);
  for (std::size_t k = 1; k < nodes.size(); ++k) {
    auto a = net.find_arc(nodes[k - 1], nodes[k]);
    if (!a) {
      throw std::invalid_argument("no arc " + std::to_string(nodes[k - 1]) + "->" +
                                  std::to_string(nodes[k]));
    }
    step[k] = net.arcs[*a].energy_kwh();
  }
  std::vector<const StationAction*> at(nodes.size(), nullptr);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const StationAction& act = actions[i];
    if (act.position >= nodes.size() || nodes[act.position] != act.station) {
      throw std::invalid_argument("action position does not match the node sequence");
    }
    if (!net.is_station(act.station)) {
      throw std::invalid_argument("action at non-station node " + std::to_string(act.station));
    }
    if (i > 0 && act.position <= actions[i - 1].position) {
      throw std::invalid_argument("actions must be ordered along the path");
    }
    at[act.position] = &act;
  }

  SocTrace trace;
  trace.arrival.resize(nodes.size());
  trace.departure.resize(nodes.size());
  const double reserve = ev.reserve_kwh();
  double e = ev.battery_kwh;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    e -= step[k];
    trace.arrival[k] = e;
    if (const StationAction* act = at[k]) {
      if (act->kind == ActionKind::Charge) {
        if (e < reserve - kEnergyTol) return std::nullopt;
        const double amount = ev.battery_kwh - e;
        if (amount <= kEnergyTol) return std::nullopt;
        trace.action_energy.push_back(amount);
        e = ev.battery_kwh;
      } else {
        if (e < ev.post_discharge_kwh - kEnergyTol) return std::nullopt;
        const double amount = e - ev.post_discharge_kwh;
        if (amount <= kEnergyTol) return std::nullopt;
        trace.action_energy.push_back(amount);
        e = ev.post_discharge_kwh;
      }
    } else if (k + 1 == nodes.size() && e < reserve - kEnergyTol) {
      return std::nullopt;
    }
    trace.departure[k] = e;
  }
  return trace;
}

std::string pattern_label(Pattern p) {
  switch (p) {
    case Pattern::None: return "0";
    case Pattern::Charge: return "1-1";
    case Pattern::ChargeCharge: return "1-2";
    case Pattern::Discharge: return "2";
    case Pattern::ChargeDischarge: return "3";
    case Pattern::DischargeCharge: return "4";
  }
  return "?";
}

Pattern pattern_of(std::span<const StationAction> actions) {
  using K = ActionKind;
  if (actions.empty()) return Pattern::None;
  if (actions.size() == 1) {
    return actions[0].kind == K::Charge ? Pattern::Charge : Pattern::Discharge;
  }
  if (actions.size() != 2) throw std::invalid_argument("more than two station actions");
  const K a = actions[0].kind, b = actions[1].kind;
  if (a == K::Charge && b == K::Charge) return Pattern::ChargeCharge;
  if (a == K::Charge && b == K::Discharge) return Pattern::ChargeDischarge;
  if (a == K::Discharge && b == K::Charge) return Pattern::DischargeCharge;
  throw std::invalid_argument("two discharges on one path are not admissible");
}

double ExpandedPath::charge_energy() const {
  double s = 0.0;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i].kind == ActionKind::Charge) s += energy[i];
  }
  return s;
}

double ExpandedPath::discharge_energy() const {
  double s = 0.0;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i].kind == ActionKind::Discharge) s += energy[i];
  }
  return s;
}

double ExpandedPath::energy_at(NodeId station, ActionKind kind) const {
  double s = 0.0;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i].station == station && actions[i].kind == kind) s += energy[i];
  }
  return s;
}

bool ExpandedPath::has_discharge() const {
  return std::any_of(actions.begin(), actions.end(), [](const StationAction& a) {
    return a.kind == ActionKind::Discharge;
  });
}

double ExpandedPath::distance_km(const TransportNetwork& net) const {
  double d = 0.0;
  for (std::size_t a : arcs) d += net.arcs[a].distance_km;
  return d;
}

std::vector<ExpandedNode> ExpandedPath::expanded_nodes() const {
  std::vector<ExpandedNode> out;
  std::size_t next = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    out.push_back({nodes[k], NodeRole::Physical});
    if (next < actions.size() && actions[next].position == k) {
      out.push_back({nodes[k], actions[next].kind == ActionKind::Charge
                                   ? NodeRole::Charge
                                   : NodeRole::Discharge});
      ++next;
    }
  }
  return out;
}

std::string ExpandedPath::key() const {
  std::ostringstream os;
  for (NodeId n : nodes) os << n << ',';
  os << '|';
  for (const StationAction& a : actions) {
    os << a.position << (a.kind == ActionKind::Charge ? '+' : '-') << ',';
  }
  return os.str();
}

std::vector<ExpandedPath> generate_paths(const OdPair& od,
                                         const TransportNetwork& net,
                                         const EvParams& ev,
                                         const PathGenOptions& options) {
  if (options.k < 1) throw std::invalid_argument("K must be at least 1");
  require_node(net, od.first);
  require_node(net, od.second);
  const auto base = k_shortest_paths(net, od.first, od.second, options.k, options.by_distance);

  using K = ActionKind;
  std::vector<ExpandedPath> out;
  std::set<std::string> keys;
  for (const BasePath& bp : base) {
    std::vector<std::size_t> stops;
    for (std::size_t i = 0; i < bp.nodes.size(); ++i) {
      if (net.is_station(bp.nodes[i])) stops.push_back(i);
    }
    std::vector<std::vector<StationAction>> cands;
    cands.push_back({});
    for (std::size_t i : stops) {
      cands.push_back({{bp.nodes[i], K::Charge, i}});
      if (options.v2g) cands.push_back({{bp.nodes[i], K::Discharge, i}});
    }
    for (std::size_t x = 0; x < stops.size(); ++x) {
      for (std::size_t y = x + 1; y < stops.size(); ++y) {
        const std::size_t i = stops[x], j = stops[y];
        cands.push_back({{bp.nodes[i], K::Charge, i}, {bp.nodes[j], K::Charge, j}});
        if (options.v2g) {
          cands.push_back({{bp.nodes[i], K::Discharge, i}, {bp.nodes[j], K::Charge, j}});
          cands.push_back({{bp.nodes[i], K::Charge, i}, {bp.nodes[j], K::Discharge, j}});
        }
      }
    }
    for (auto& acts : cands) {
      auto trace = simulate_soc(bp.nodes, acts, ev, net);
      if (!trace) continue;
      ExpandedPath p;
      p.od = od;
      p.nodes = bp.nodes;
      p.arcs = bp.arcs;
      p.actions = std::move(acts);
      p.energy = trace->action_energy;
      p.pattern = pattern_of(p.actions);
      if (keys.insert(p.key()).second) out.push_back(std::move(p));
    }
  }
  return out;
}

PathCatalog build_path_catalog(const TransportNetwork& net, const EvParams& ev,
                               const PathGenOptions& options, unsigned threads) {
  std::vector<std::pair<OdPair, OdDemand>> ods;
  for (const auto& [od, d] : net.od_demands) {
    if (d.ev > 0.0 || d.fv > 0.0) ods.emplace_back(od, d);
  }
  auto work = [&](std::size_t i) {
    OdPaths out;
    out.od = ods[i].first;
    if (ods[i].second.ev > 0.0) out.ev = generate_paths(out.od, net, ev, options);
    if (ods[i].second.fv > 0.0) {
      for (BasePath& bp : k_shortest_paths(net, out.od.first, out.od.second,
                                           options.k, options.by_distance)) {
        ExpandedPath p;
        p.od = out.od;
        p.nodes = std::move(bp.nodes);
        p.arcs = std::move(bp.arcs);
        out.fv.push_back(std::move(p));
      }
    }
    return out;
  };
  PathCatalog cat;
  cat.ods.resize(ods.size());
  threads = std::max(1u, threads);
  for (std::size_t start = 0; start < ods.size(); start += threads) {
    std::vector<std::future<OdPaths>> jobs;
    const std::size_t end = std::min(ods.size(), start + threads);
    for (std::size_t i = start; i < end; ++i) {
      jobs.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred,
                                work, i));
    }
    for (std::size_t i = start; i < end; ++i) cat.ods[i] = jobs[i - start].get();
  }
  return cat;
}

nlohmann::json path_to_json(const ExpandedPath& p) {
  nlohmann::json acts = nlohmann::json::array();
  for (std::size_t i = 0; i < p.actions.size(); ++i) {
    acts.push_back({{"station", p.actions[i].station},
                    {"kind", p.actions[i].kind == ActionKind::Charge ? "charge" : "discharge"},
                    {"position", p.actions[i].position},
                    {"energy_kwh", p.energy[i]}});
  }
  return {{"od", {p.od.first, p.od.second}},
          {"nodes", p.nodes},
          {"actions", acts},
          {"pattern", pattern_label(p.pattern)}};
}

nlohmann::json catalog_to_json(const PathCatalog& catalog) {
  nlohmann::json out = nlohmann::json::array();
  for (const OdPaths& od : catalog.ods) {
    nlohmann::json ev = nlohmann::json::array(), fv = nlohmann::json::array();
    for (const auto& p : od.ev) ev.push_back(path_to_json(p));
    for (const auto& p : od.fv) fv.push_back(p.nodes);
    out.push_back({{"od", {od.od.first, od.od.second}}, {"ev_paths", ev}, {"fv_paths", fv}});
  }
  return out;
}

double path_cost_ev(const ExpandedPath& path, const PathCostInputs& in,
                    const EvParams& ev) {
  double time = 0.0;
  for (std::size_t a : path.arcs) time += in.arc_times[a];
  double energy_total = 0.0, money = 0.0;
  std::set<NodeId> visited;
  for (std::size_t i = 0; i < path.actions.size(); ++i) {
    const StationAction& act = path.actions[i];
    const double e = path.energy[i];
    energy_total += e;
    if (visited.insert(act.station).second) time += in.waits.at(act.station);
    const StationPrice& pr = in.prices.at(act.station);
    if (act.kind == ActionKind::Charge) {
      money += e * (pr.charge + ev.degradation_per_kwh);
    } else {
      money -= e * (pr.discharge - ev.degradation_per_kwh);
    }
  }
  return ev.value_of_time_ev * (time + energy_total / ev.pile_kw) + money;
}

double path_cost_fv(const ExpandedPath& path, std::span<const double> arc_times,
                    const EvParams& ev) {
  double time = 0.0;
  for (std::size_t a : path.arcs) time += arc_times[a];
  return ev.value_of_time_fv * time;
}

}  // namespace v2geq
