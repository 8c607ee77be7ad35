#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "v2geq/link_costs.hpp"
#include "v2geq/oracle.hpp"

namespace v2geq {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Group {
  bool ev = true;
  std::size_t od = 0;
  std::vector<std::size_t> members;  // indices into Layout::f_ev or f_fv
  double demand = 0.0;
};

struct TrafficState {
  std::vector<double> f_ev, f_fv;
  std::vector<double> arc_flow, station_flow;
  std::vector<double> times, waits;
  std::vector<double> cost_ev, cost_fv;
  std::vector<double> slope_ev, slope_fv;  // d cost / d own flow
};

class Traffic {
 public:
  explicit Traffic(const Assembly& a) : a_(a), L_(a.layout), m_(a.model) {
    auto group = [&](const std::vector<PathRef>& refs, bool ev) {
      for (std::size_t j = 0; j < refs.size(); ++j) {
        if (groups_.empty() || groups_.back().ev != ev || groups_.back().od != refs[j].od) {
          const OdDemand& d = m_.net.od_demands.at(m_.paths.ods[refs[j].od].od);
          groups_.push_back({ev, refs[j].od, {}, ev ? d.ev : d.fv});
        }
        groups_.back().members.push_back(j);
      }
    };
    group(L_.ev_paths, true);
    group(L_.fv_paths, false);
  }

  const std::vector<Group>& groups() const { return groups_; }

  const ExpandedPath& ev_path(std::size_t j) const {
    return m_.paths.ods[L_.ev_paths[j].od].ev[L_.ev_paths[j].index];
  }
  const ExpandedPath& fv_path(std::size_t j) const {
    return m_.paths.ods[L_.fv_paths[j].od].fv[L_.fv_paths[j].index];
  }

  void evaluate(TrafficState& s, const std::vector<StationPrice>& prices) const {
    const TransportNetwork& net = m_.net;
    s.arc_flow.assign(net.arcs.size(), 0.0);
    s.station_flow.assign(a_.stations.size(), 0.0);
    for (std::size_t j = 0; j < s.f_ev.size(); ++j) {
      const ExpandedPath& p = ev_path(j);
      for (std::size_t arc : p.arcs) s.arc_flow[arc] += s.f_ev[j];
      std::set<NodeId> seen;
      for (const StationAction& act : p.actions) {
        if (seen.insert(act.station).second) {
          s.station_flow[a_.station_position(act.station)] += s.f_ev[j];
        }
      }
    }
    for (std::size_t j = 0; j < s.f_fv.size(); ++j) {
      for (std::size_t arc : fv_path(j).arcs) s.arc_flow[arc] += s.f_fv[j];
    }
    s.times.resize(net.arcs.size());
    std::vector<double> arc_slope(net.arcs.size());
    for (std::size_t k = 0; k < net.arcs.size(); ++k) {
      const Arc& arc = net.arcs[k];
      s.times[k] = bpr_time(arc.free_flow_time_h, arc.capacity, s.arc_flow[k]);
      arc_slope[k] = bpr_slope(arc.free_flow_time_h, arc.capacity, s.arc_flow[k]);
    }
    PathCostInputs in{s.times, {}, {}};
    std::vector<double> wait_slope(a_.stations.size());
    s.waits.resize(a_.stations.size());
    for (std::size_t k = 0; k < a_.stations.size(); ++k) {
      const Station& st = net.stations.at(a_.stations[k]);
      s.waits[k] = smoothed_wait(st, net.period_h, s.station_flow[k]);
      wait_slope[k] = smoothed_wait_slope(st, net.period_h, s.station_flow[k]);
      in.waits[a_.stations[k]] = s.waits[k];
      in.prices[a_.stations[k]] = prices[k];
    }
    s.cost_ev.resize(s.f_ev.size());
    s.slope_ev.resize(s.f_ev.size());
    for (std::size_t j = 0; j < s.f_ev.size(); ++j) {
      const ExpandedPath& p = ev_path(j);
      s.cost_ev[j] = path_cost_ev(p, in, m_.ev);
      double d = 0.0;
      for (std::size_t arc : p.arcs) d += arc_slope[arc];
      std::set<NodeId> seen;
      for (const StationAction& act : p.actions) {
        if (seen.insert(act.station).second) d += wait_slope[a_.station_position(act.station)];
      }
      s.slope_ev[j] = m_.ev.value_of_time_ev * d;
    }
    s.cost_fv.resize(s.f_fv.size());
    s.slope_fv.resize(s.f_fv.size());
    for (std::size_t j = 0; j < s.f_fv.size(); ++j) {
      const ExpandedPath& p = fv_path(j);
      s.cost_fv[j] = path_cost_fv(p, s.times, m_.ev);
      double d = 0.0;
      for (std::size_t arc : p.arcs) d += arc_slope[arc];
      s.slope_fv[j] = m_.ev.value_of_time_fv * d;
    }
  }

  // Path equilibration: shift flow from the dearest used path to the
  // cheapest one by a Newton step until every OD/class gap is closed.
  bool equilibrate(TrafficState& s, const std::vector<StationPrice>& prices) const {
    for (int sweep = 0; sweep < 2000; ++sweep) {
      double worst = 0.0;
      for (const Group& g : groups_) {
        for (int inner = 0; inner < 50; ++inner) {
          evaluate(s, prices);
          auto& f = g.ev ? s.f_ev : s.f_fv;
          const auto& c = g.ev ? s.cost_ev : s.cost_fv;
          const auto& d = g.ev ? s.slope_ev : s.slope_fv;
          std::size_t lo = g.members.front(), hi = lo;
          double cmin = kInf, cmax = -kInf;
          for (std::size_t j : g.members) {
            if (c[j] < cmin) cmin = c[j], lo = j;
            if (f[j] > 0.0 && c[j] > cmax) cmax = c[j], hi = j;
          }
          const double gap = cmax - cmin;
          const double tol = 1e-12 * (1.0 + std::abs(cmin));
          if (gap <= tol || lo == hi) break;
          worst = std::max(worst, gap / (1.0 + std::abs(cmin)));
          const double denom = d[lo] + d[hi];
          const double shift = denom > 0.0 ? std::min(f[hi], gap / denom) : f[hi];
          f[hi] -= shift;
          f[lo] += shift;
          if (f[hi] < 1e-15 * g.demand) {
            f[lo] += f[hi];
            f[hi] = 0.0;
          }
        }
      }
      if (worst == 0.0) return true;
    }
    return false;
  }

 private:
  const Assembly& a_;
  const Layout& L_;
  const Model& m_;
  std::vector<Group> groups_;
};

double get(const Eigen::VectorXd& z, std::size_t k) { return z[static_cast<Eigen::Index>(k)]; }
double& at(Eigen::VectorXd& z, std::size_t k) { return z[static_cast<Eigen::Index>(k)]; }

}  // namespace

OracleResult diagonalize_oracle(const Assembly& a, int max_rounds, const SolverConfig& config) {
  const Layout& L = a.layout;
  const Model& m = a.model;
  const McpInstance& mcp = a.mcp;
  const std::size_t ns = a.stations.size();
  OracleResult out;
  out.z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mcp.size()));

  SolverConfig cfg = config;
  cfg.tolerance = std::min(cfg.tolerance, 1e-11);
  cfg.starts = 1;
  cfg.trace = nullptr;

  // Traffic coordinates are held fixed while the power side responds.
  std::vector<char> frozen(mcp.size(), 0);
  for (std::size_t v : L.f_ev) frozen[v] = 1;
  for (std::size_t v : L.f_fv) frozen[v] = 1;
  for (const auto* slots : {&L.cost_ev, &L.cost_fv, &L.station_capacity}) {
    for (const Slot& s : *slots) {
      if (s) frozen[*s] = 1;
    }
  }
  const auto& upper = a.catalog.has("cno.net_upper") ? a.catalog.block("cno.net_upper")
                                                     : CatalogBlock{};
  const auto& lower = a.catalog.has("cno.net_lower") ? a.catalog.block("cno.net_lower")
                                                     : CatalogBlock{};

  Traffic traffic(a);
  TrafficState ts;
  ts.f_ev.assign(L.f_ev.size(), 0.0);
  ts.f_fv.assign(L.f_fv.size(), 0.0);
  for (const Group& g : traffic.groups()) (g.ev ? ts.f_ev : ts.f_fv)[g.members.front()] = g.demand;

  Eigen::VectorXd z = out.z;
  for (const Slot& s : L.u2) at(z, *s) = 1.0;

  // Power response to the current traffic state; returns the station prices
  // with idle ones pushed to the edge of their range.
  auto power = [&](const TrafficState& s, Eigen::VectorXd& zp) -> std::optional<std::vector<StationPrice>> {
    for (std::size_t j = 0; j < s.f_ev.size(); ++j) at(zp, L.f_ev[j]) = s.f_ev[j];
    for (std::size_t j = 0; j < s.f_fv.size(); ++j) at(zp, L.f_fv[j]) = s.f_fv[j];
    std::vector<double> ef_c(ns, 0.0), ef_d(ns, 0.0);
    for (std::size_t j = 0; j < s.f_ev.size(); ++j) {
      const ExpandedPath& p = traffic.ev_path(j);
      for (std::size_t k = 0; k < p.actions.size(); ++k) {
        auto& dst = p.actions[k].kind == ActionKind::Charge ? ef_c : ef_d;
        dst[a.station_position(p.actions[k].station)] += s.f_ev[j] * p.energy[k];
      }
    }
    for (std::size_t k = 0; k < ns; ++k) {
      at(zp, L.p_charge[k]) = ef_c[k];
      at(zp, L.p_discharge[k]) = ef_d[k];
    }
    SolveResult r = solve(mcp, cfg, {{"oracle", zp}}, &frozen);
    if (r.report.status == SolveStatus::Failed) {
      // The warm start can sit in a bad basin; retry with the power side cold.
      Eigen::VectorXd cold = zp;
      for (std::size_t k = 0; k < mcp.size(); ++k) {
        if (!frozen[k]) at(cold, k) = 0.0;
      }
      for (std::size_t k = 0; k < ns; ++k) {
        at(cold, L.p_charge[k]) = ef_c[k];
        at(cold, L.p_discharge[k]) = ef_d[k];
      }
      for (const Slot& s : L.u2) at(cold, *s) = 1.0;
      r = solve(mcp, cfg, {{"oracle-cold", cold}}, &frozen);
      if (r.report.status == SolveStatus::Failed) return std::nullopt;
    }
    zp = r.z;

    const auto& lses = m.market.lses;
    auto band = [&](std::size_t bus, bool lowest) {
      double v = lowest ? kInf : -kInf;
      for (std::size_t f = 0; f < lses.size(); ++f) {
        const double p = get(zp, *L.w[bus]) + get(zp, L.lse_balance[f]);
        v = lowest ? std::min(v, p) : std::max(v, p);
      }
      return std::isfinite(v) ? v : get(zp, *L.w[bus]);
    };
    std::vector<double> bus_charge(m.feeder.buses.size(), 0.0), bus_discharge(m.feeder.buses.size(), 0.0);
    for (std::size_t k = 0; k < ns; ++k) {
      bus_charge[a.station_bus[k]] += get(zp, L.p_charge[k]);
      bus_discharge[a.station_bus[k]] += get(zp, L.p_discharge[k]);
    }
    constexpr double idle = 1e-12;
    for (std::size_t i = 0; i < m.feeder.buses.size(); ++i) {
      if (L.price_charge[i] && bus_charge[i] <= idle) at(zp, *L.price_charge[i]) = band(i, true);
      if (L.price_discharge[i] && bus_discharge[i] <= idle) {
        at(zp, *L.price_discharge[i]) = band(i, false);
      }
    }
    std::vector<StationPrice> prices(ns);
    for (std::size_t k = 0; k < ns; ++k) {
      const StationMarket& sm = m.market.station(a.stations[k]);
      const std::size_t i = a.station_bus[k];
      const double mu = get(zp, upper.offset + k) - get(zp, lower.offset + k);
      if (get(zp, L.p_charge[k]) <= idle) {
        at(zp, L.alpha_charge[k]) = get(zp, *L.price_charge[i]) - sm.fee_charge + mu;
      }
      if (get(zp, L.p_discharge[k]) <= idle) {
        at(zp, L.alpha_discharge[k]) = get(zp, *L.price_discharge[i]) + sm.fee_discharge + mu;
      }
      prices[k] = {get(zp, L.alpha_charge[k]), get(zp, L.alpha_discharge[k])};
    }
    return prices;
  };

  // Joint solve of the traffic rows at fixed station prices, for the cases
  // where pairwise flow shifts between classes sharing arcs stall.
  std::vector<char> power_frozen(mcp.size(), 1);
  for (std::size_t v : L.f_ev) power_frozen[v] = 0;
  for (std::size_t v : L.f_fv) power_frozen[v] = 0;
  for (const auto* slots : {&L.cost_ev, &L.cost_fv, &L.station_capacity}) {
    for (const Slot& s : *slots) {
      if (s) power_frozen[*s] = 0;
    }
  }
  auto traffic_block = [&](TrafficState& s, const std::vector<StationPrice>& prices) {
    Eigen::VectorXd zt = z;
    for (std::size_t j = 0; j < s.f_ev.size(); ++j) at(zt, L.f_ev[j]) = s.f_ev[j];
    for (std::size_t j = 0; j < s.f_fv.size(); ++j) at(zt, L.f_fv[j]) = s.f_fv[j];
    for (std::size_t k = 0; k < ns; ++k) {
      at(zt, L.alpha_charge[k]) = prices[k].charge;
      at(zt, L.alpha_discharge[k]) = prices[k].discharge;
    }
    const SolveResult r = solve(mcp, cfg, {{"oracle-traffic", zt}}, &power_frozen);
    if (r.report.status == SolveStatus::Failed) return false;
    for (std::size_t j = 0; j < s.f_ev.size(); ++j) s.f_ev[j] = std::max(0.0, get(r.z, L.f_ev[j]));
    for (std::size_t j = 0; j < s.f_fv.size(); ++j) s.f_fv[j] = std::max(0.0, get(r.z, L.f_fv[j]));
    return true;
  };

  // Prices seen by travellers before any of them moves.
  auto first = power(ts, z);
  if (!first) {
    out.message = "power subproblem failed at the initial state";
    return out;
  }
  std::vector<StationPrice> prices = *first;
  double theta = 1.0;
  double previous_change = kInf;
  for (int round = 1; round <= max_rounds; ++round) {
    out.rounds = round;
    const TrafficState before = ts;
    if (!traffic.equilibrate(ts, prices) && !traffic_block(ts, prices)) {
      out.message = "path equilibration did not close the gaps";
      return out;
    }
    traffic.evaluate(ts, prices);
    for (std::size_t k = 0; k < ns; ++k) {
      if (!L.station_capacity[k]) continue;
      const Station& st = m.net.stations.at(a.stations[k]);
      double used = 0.0;
      for (std::size_t j = 0; j < ts.f_ev.size(); ++j) {
        const ExpandedPath& p = traffic.ev_path(j);
        for (std::size_t q = 0; q < p.actions.size(); ++q) {
          if (p.actions[q].station == a.stations[k]) used += ts.f_ev[j] * p.energy[q];
        }
      }
      if (used > m.ev.pile_kw * st.piles * m.net.period_h + 1e-9) {
        out.message = "station capacity binds at node " + std::to_string(a.stations[k]);
        return out;
      }
    }
    auto next = power(ts, z);
    if (!next) {
      out.message = "power subproblem failed in round " + std::to_string(round);
      return out;
    }
    double change = 0.0, price_gap = 0.0;
    for (std::size_t j = 0; j < ts.f_ev.size(); ++j) {
      change = std::max(change, std::abs(ts.f_ev[j] - before.f_ev[j]));
    }
    for (std::size_t j = 0; j < ts.f_fv.size(); ++j) {
      change = std::max(change, std::abs(ts.f_fv[j] - before.f_fv[j]));
    }
    for (std::size_t k = 0; k < ns; ++k) {
      price_gap = std::max(price_gap, std::abs((*next)[k].charge - prices[k].charge));
      price_gap = std::max(price_gap, std::abs((*next)[k].discharge - prices[k].discharge));
    }
    change = std::max(change, price_gap);
    out.last_change = change;
    if (change <= 1e-9) {
      out.converged = true;
      break;
    }
    // Damping follows the price gap alone: shrink on growth, recover slowly.
    if (price_gap > previous_change) {
      theta = std::max(1e-3, 0.5 * theta);
    } else {
      theta = std::min(1.0, 1.1 * theta);
    }
    previous_change = price_gap;
    for (std::size_t k = 0; k < ns; ++k) {
      prices[k].charge += theta * ((*next)[k].charge - prices[k].charge);
      prices[k].discharge += theta * ((*next)[k].discharge - prices[k].discharge);
    }
  }
  if (!out.converged) {
    out.message = "no convergence after " + std::to_string(max_rounds) + " rounds";
    return out;
  }

  // Equilibrium costs are the cheapest path cost of each OD and class.
  for (const Group& g : traffic.groups()) {
    double best = kInf;
    for (std::size_t j : g.members) best = std::min(best, g.ev ? ts.cost_ev[j] : ts.cost_fv[j]);
    const Slot& slot = g.ev ? L.cost_ev[g.od] : L.cost_fv[g.od];
    at(z, *slot) = best;
  }
  normalize_prices(a, z);
  out.z = z;
  return out;
}

}  // namespace v2geq
