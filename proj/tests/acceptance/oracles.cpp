#include "oracles.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

namespace oracles {

namespace {

// Same slack the library allows on energy comparisons.
constexpr double kTol = 1e-9;

double arc_energy(const TransportNetwork& net, NodeId t, NodeId h) {
  for (const auto& a : net.arcs) {
    if (a.tail == t && a.head == h) return a.consumption_kwh_per_km * a.distance_km;
  }
  throw std::logic_error("missing arc");
}

struct Act {
  std::size_t pos;
  bool charge;
};

// Stops are the origin, the actions and the destination. Each segment must
// reach its end with the arrival minimum of that end: the reserve at the
// destination or before a charge, the post-discharge level before a
// discharge. Departure is full at the origin and after a charge, and the
// post-discharge level after a discharge.
bool feasible(const TransportNetwork& net, const std::vector<NodeId>& nodes, const std::vector<Act>& acts,
              const EvParams& ev, std::vector<double>& energy) {
  const double reserve = ev.range_anxiety * ev.battery_kwh;
  std::vector<double> prefix(nodes.size(), 0.0);
  for (std::size_t k = 1; k < nodes.size(); ++k) prefix[k] = prefix[k - 1] + arc_energy(net, nodes[k - 1], nodes[k]);

  std::size_t from = 0;
  double departure = ev.battery_kwh;
  energy.clear();
  for (const Act& a : acts) {
    const double arrival = departure - (prefix[a.pos] - prefix[from]);
    const double need = a.charge ? reserve : ev.post_discharge_kwh;
    if (arrival < need - kTol) return false;
    const double moved = a.charge ? ev.battery_kwh - arrival : arrival - ev.post_discharge_kwh;
    // A stop that moves no energy is not a visit.
    if (moved <= kTol) return false;
    energy.push_back(moved);
    departure = a.charge ? ev.battery_kwh : ev.post_discharge_kwh;
    from = a.pos;
  }
  const double arrival = departure - (prefix.back() - prefix[from]);
  return arrival >= reserve - kTol;
}

}  // namespace

std::string path_key(const std::vector<NodeId>& nodes, const std::vector<std::pair<std::size_t, bool>>& actions) {
  std::string s;
  for (std::size_t i = 0; i < nodes.size(); ++i) s += (i ? "-" : "") + std::to_string(nodes[i]);
  s += "|";
  for (std::size_t i = 0; i < actions.size(); ++i) {
    s += (i ? ";" : "") + std::string(actions[i].second ? "c@" : "d@") + std::to_string(actions[i].first);
  }
  return s;
}

std::string path_key(const v2geq::ExpandedPath& p) {
  std::vector<std::pair<std::size_t, bool>> acts;
  for (const auto& a : p.actions) acts.emplace_back(a.position, a.kind == v2geq::ActionKind::Charge);
  return path_key(p.nodes, acts);
}

std::vector<std::vector<NodeId>> all_simple_paths(const TransportNetwork& net, NodeId r, NodeId s) {
  std::map<NodeId, std::vector<NodeId>> out;
  for (const auto& a : net.arcs) out[a.tail].push_back(a.head);
  std::vector<std::vector<NodeId>> paths;
  std::vector<NodeId> stack{r};
  std::set<NodeId> on{r};
  auto dfs = [&](auto&& self, NodeId n) -> void {
    if (n == s) {
      paths.push_back(stack);
      return;
    }
    for (NodeId m : out[n]) {
      if (on.count(m)) continue;
      stack.push_back(m);
      on.insert(m);
      self(self, m);
      on.erase(m);
      stack.pop_back();
    }
  };
  dfs(dfs, r);
  return paths;
}

std::map<std::string, std::vector<double>> brute_force_paths(const TransportNetwork& net, OdPair od,
                                                             const EvParams& ev, bool v2g) {
  std::map<std::string, std::vector<double>> found;
  for (const auto& nodes : all_simple_paths(net, od.first, od.second)) {
    std::vector<std::size_t> stops;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (net.stations.count(nodes[i])) stops.push_back(i);
    }
    std::vector<std::vector<Act>> patterns{{}};
    for (std::size_t i : stops) {
      for (bool charge : {true, false}) patterns.push_back({{i, charge}});
    }
    for (std::size_t i : stops) {
      for (std::size_t j : stops) {
        if (j <= i) continue;
        for (bool c1 : {true, false}) {
          for (bool c2 : {true, false}) {
            // One discharge per trip at most.
            if (!c1 && !c2) continue;
            patterns.push_back({{i, c1}, {j, c2}});
          }
        }
      }
    }
    for (const auto& acts : patterns) {
      if (!v2g && std::any_of(acts.begin(), acts.end(), [](const Act& a) { return !a.charge; })) continue;
      std::vector<double> energy;
      if (!feasible(net, nodes, acts, ev, energy)) continue;
      std::vector<std::pair<std::size_t, bool>> key;
      for (const Act& a : acts) key.emplace_back(a.pos, a.charge);
      found.emplace(path_key(nodes, key), energy);
    }
  }
  return found;
}

RandomGraph random_graph(std::mt19937_64& rng) {
  auto uniform = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto pick = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };
  const int n = pick(3, 8);
  RandomGraph g;
  for (int i = 1; i <= n; ++i) g.net.nodes.push_back(static_cast<NodeId>(i));

  // A shuffled ring keeps every node reachable; extra arcs go in at random.
  std::vector<NodeId> ring(g.net.nodes);
  std::shuffle(ring.begin(), ring.end(), rng);
  std::set<std::pair<NodeId, NodeId>> arcs;
  for (std::size_t i = 0; i < ring.size(); ++i) arcs.insert({ring[i], ring[(i + 1) % ring.size()]});
  for (NodeId t : g.net.nodes) {
    for (NodeId h : g.net.nodes) {
      if (t != h && uniform(0.0, 1.0) < 0.3) arcs.insert({t, h});
    }
  }
  for (const auto& [t, h] : arcs) {
    const double km = uniform(5.0, 120.0);
    g.net.arcs.push_back(v2geq::Arc{t, h, km / uniform(40.0, 90.0), 100.0, km, uniform(0.1, 0.3)});
  }

  const int stations = pick(0, 2);
  std::vector<NodeId> order(g.net.nodes);
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < stations; ++i) g.net.stations[order[static_cast<std::size_t>(i)]] = v2geq::Station{0.05, 0.01, 10.0, 1};

  std::shuffle(order.begin(), order.end(), rng);
  g.od = {order[0], order[1]};
  g.net.od_demands[g.od] = {1.0, 0.0};
  g.net.period_h = 1.0;
  return g;
}

std::vector<Eigen::VectorXd> lcp_by_bases(const Eigen::MatrixXd& M, const Eigen::VectorXd& q) {
  const Eigen::Index n = q.size();
  std::vector<Eigen::VectorXd> out;
  for (long mask = 0; mask < (1L << n); ++mask) {
    std::vector<Eigen::Index> basis;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (mask & (1L << i)) basis.push_back(i);
    }
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    if (!basis.empty()) {
      const Eigen::Index b = static_cast<Eigen::Index>(basis.size());
      Eigen::MatrixXd A(b, b);
      Eigen::VectorXd rhs(b);
      for (Eigen::Index r = 0; r < b; ++r) {
        rhs[r] = -q[basis[static_cast<std::size_t>(r)]];
        for (Eigen::Index c = 0; c < b; ++c) A(r, c) = M(basis[static_cast<std::size_t>(r)], basis[static_cast<std::size_t>(c)]);
      }
      Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
      if (!lu.isInvertible()) continue;
      const Eigen::VectorXd zb = lu.solve(rhs);
      for (Eigen::Index r = 0; r < b; ++r) z[basis[static_cast<std::size_t>(r)]] = zb[r];
    }
    const Eigen::VectorXd w = M * z + q;
    if (z.minCoeff() >= -1e-12 && w.minCoeff() >= -1e-12) out.push_back(z);
  }
  return out;
}

}  // namespace oracles
