#include <algorithm>
#include <fstream>
#include <numeric>

#include "v2geq/error.hpp"
#include "v2geq/net_model.hpp"

namespace v2geq {
namespace {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
};

std::string line_name(std::size_t k, const Line& l) {
  return "line #" + std::to_string(k) + " (" + std::to_string(l.from) + "-" +
         std::to_string(l.to) + ")";
}

std::pair<double, double> bounds_pair(const nlohmann::json& j, const char* key,
                                      std::pair<double, double> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) {
    throw InputError("", 0, std::string(key) + " must be a [lower, upper] pair");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

std::optional<std::size_t> PowerFeeder::bus_index(BusId id) const {
  auto it = std::lower_bound(buses.begin(), buses.end(), id,
                             [](const Bus& b, BusId v) { return b.id < v; });
  if (it == buses.end() || it->id != id) return std::nullopt;
  return static_cast<std::size_t>(it - buses.begin());
}

const Bus& PowerFeeder::bus(BusId id) const {
  auto idx = bus_index(id);
  if (!idx) throw ModelError("unknown bus " + std::to_string(id));
  return buses[*idx];
}

Islands find_islands(const PowerFeeder& feeder) {
  DisjointSets sets(feeder.buses.size());
  for (const Line& l : feeder.lines) {
    auto a = feeder.bus_index(l.from);
    auto b = feeder.bus_index(l.to);
    if (a && b) sets.unite(*a, *b);
  }
  Islands out;
  out.component.assign(feeder.buses.size(), -1);
  std::map<std::size_t, int> ids;
  for (std::size_t i = 0; i < feeder.buses.size(); ++i) {
    auto [it, inserted] = ids.emplace(sets.find(i), static_cast<int>(ids.size()));
    out.component[i] = it->second;
  }
  out.count = static_cast<int>(ids.size());
  auto root = feeder.bus_index(feeder.tso_bus);
  out.root_component = root ? out.component[*root] : -1;
  return out;
}

void validate_feeder(const PowerFeeder& feeder, bool require_connected,
                     const std::string& src) {
  if (feeder.buses.empty()) throw InputError(src, 0, "feeder has no buses");
  for (std::size_t i = 1; i < feeder.buses.size(); ++i) {
    if (feeder.buses[i - 1].id >= feeder.buses[i].id) {
      throw InputError(src, 0, "duplicate bus " + std::to_string(feeder.buses[i].id));
    }
  }
  if (!feeder.bus_index(feeder.tso_bus)) {
    throw InputError(src, 0, "missing TSO bus " + std::to_string(feeder.tso_bus));
  }
  if (!(feeder.u2_min < feeder.u2_max) || !(feeder.u2_min >= 0.0)) {
    throw InputError(src, 0, "voltage bounds must satisfy 0 <= lower < upper");
  }
  if (!(feeder.tso_p_min_kw <= feeder.tso_p_max_kw) ||
      !(feeder.tso_q_min_kvar <= feeder.tso_q_max_kvar)) {
    throw InputError(src, 0, "TSO bounds are not ordered");
  }
  if (!(feeder.base_kva > 0.0)) throw InputError(src, 0, "base_kva must be positive");
  for (const Bus& b : feeder.buses) {
    const std::string name = "bus " + std::to_string(b.id);
    if (!(b.q_min_kvar <= b.q_max_kvar)) {
      throw InputError(src, 0, name + " has unordered reactive bounds");
    }
    if (b.demand) {
      if (!(b.demand->slope < 0.0) || !(b.demand->intercept > 0.0)) {
        throw InputError(src, 0, name + " needs inverse demand a < 0, b > 0");
      }
      if (b.id == feeder.tso_bus) {
        throw InputError(src, 0, name + " is the TSO bus and cannot host demand");
      }
    }
    if (b.demand_floor_kw < 0.0) throw InputError(src, 0, name + " has negative demand");
    if (b.demand_floor_kw > 0.0 && !b.demand) {
      throw InputError(src, 0, name + " has a demand floor but no inverse demand");
    }
  }
  DisjointSets sets(feeder.buses.size());
  for (std::size_t k = 0; k < feeder.lines.size(); ++k) {
    const Line& l = feeder.lines[k];
    auto a = feeder.bus_index(l.from);
    auto b = feeder.bus_index(l.to);
    if (!a || !b) {
      throw InputError(src, 0, line_name(k, l) + " references an unknown bus");
    }
    if (*a == *b) throw InputError(src, 0, line_name(k, l) + " is a self-loop");
    if (!(l.rating_kw > 0.0)) {
      throw InputError(src, 0, line_name(k, l) + " needs a positive rating");
    }
    if (!(l.r_pu >= 0.0) || !(l.x_pu >= 0.0)) {
      throw InputError(src, 0, line_name(k, l) + " has negative impedance");
    }
    if (!sets.unite(*a, *b)) {
      throw InputError(src, 0, "cycle detected: " + line_name(k, l) +
                                   " closes a loop (radiality violated)");
    }
  }
  if (require_connected) {
    const std::size_t root = sets.find(*feeder.bus_index(feeder.tso_bus));
    for (std::size_t i = 0; i < feeder.buses.size(); ++i) {
      if (sets.find(i) != root) {
        throw InputError(src, 0, "disconnected bus " +
                                     std::to_string(feeder.buses[i].id) +
                                     " (radiality violated)");
      }
    }
  }
}

nlohmann::json feeder_to_json(const PowerFeeder& f) {
  using nlohmann::json;
  json j;
  j["name"] = f.name;
  j["base_kv"] = f.base_kv;
  j["base_kva"] = f.base_kva;
  j["tso_bus"] = f.tso_bus;
  j["u2_bounds"] = {f.u2_min, f.u2_max};
  j["tso_active_bounds_kw"] = {f.tso_p_min_kw, f.tso_p_max_kw};
  j["tso_reactive_bounds_kvar"] = {f.tso_q_min_kvar, f.tso_q_max_kvar};
  j["wholesale_price"] = f.wholesale_price;
  json buses = json::array();
  for (const Bus& b : f.buses) {
    json jb = {{"id", b.id},
               {"q_load_kvar", b.q_load_kvar},
               {"demand_floor_kw", b.demand_floor_kw},
               {"q_bounds_kvar", {b.q_min_kvar, b.q_max_kvar}}};
    if (b.demand) jb["inverse_demand"] = {{"a", b.demand->slope}, {"b", b.demand->intercept}};
    buses.push_back(jb);
  }
  j["buses"] = buses;
  json lines = json::array();
  for (const Line& l : f.lines) {
    lines.push_back({{"from", l.from},
                     {"to", l.to},
                     {"r_pu", l.r_pu},
                     {"x_pu", l.x_pu},
                     {"rating_kw", l.rating_kw}});
  }
  j["lines"] = lines;
  return j;
}

PowerFeeder feeder_from_json(const nlohmann::json& j, const std::string& src) {
  PowerFeeder f;
  try {
    f.name = j.value("name", std::string{});
    f.base_kv = j.value("base_kv", 4.16);
    f.base_kva = j.value("base_kva", 1000.0);
    if (!j.contains("tso_bus")) throw InputError(src, 0, "missing TSO bus (tso_bus)");
    f.tso_bus = j.at("tso_bus").get<BusId>();
    std::tie(f.u2_min, f.u2_max) = bounds_pair(j, "u2_bounds", {0.9025, 1.1025});
    std::tie(f.tso_p_min_kw, f.tso_p_max_kw) =
        bounds_pair(j, "tso_active_bounds_kw", {0.0, 0.0});
    std::tie(f.tso_q_min_kvar, f.tso_q_max_kvar) =
        bounds_pair(j, "tso_reactive_bounds_kvar", {0.0, 0.0});
    f.wholesale_price = j.value("wholesale_price", 0.0);
    for (const auto& jb : j.at("buses")) {
      Bus b;
      b.id = jb.at("id").get<BusId>();
      b.q_load_kvar = jb.value("q_load_kvar", 0.0);
      b.demand_floor_kw = jb.value("demand_floor_kw", 0.0);
      std::tie(b.q_min_kvar, b.q_max_kvar) = bounds_pair(jb, "q_bounds_kvar", {0.0, 0.0});
      if (jb.contains("inverse_demand")) {
        const auto& d = jb.at("inverse_demand");
        b.demand = InverseDemand{d.at("a").get<double>(), d.at("b").get<double>()};
      }
      f.buses.push_back(b);
    }
    for (const auto& jl : j.at("lines")) {
      f.lines.push_back({jl.at("from").get<BusId>(), jl.at("to").get<BusId>(),
                         jl.value("r_pu", 0.0), jl.value("x_pu", 0.0),
                         jl.at("rating_kw").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(src, 0, e.what());
  }
  std::sort(f.buses.begin(), f.buses.end(),
            [](const Bus& a, const Bus& b) { return a.id < b.id; });
  validate_feeder(f, true, src);
  return f;
}

PowerFeeder load_feeder(std::istream& in, const std::string& src) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(src, 0, e.what());
  }
  return feeder_from_json(j, src);
}

PowerFeeder load_feeder_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path, 0, "cannot open file");
  return load_feeder(in, path);
}

PowerFeeder apply_scenario(const PowerFeeder& feeder,
                           const ScenarioSpec& scenario) {
  if (!(scenario.load_scale >= 0.0)) {
    throw InputError("scenario " + scenario.name, 0, "load_scale must be >= 0");
  }
  PowerFeeder out = feeder;
  for (Bus& b : out.buses) b.demand_floor_kw *= scenario.load_scale;
  for (const auto& [i, j] : scenario.outages) {
    auto it = std::find_if(out.lines.begin(), out.lines.end(), [&](const Line& l) {
      return (l.from == i && l.to == j) || (l.from == j && l.to == i);
    });
    if (it == out.lines.end()) {
      throw InputError("scenario " + scenario.name, 0,
                       "outage names nonexistent line " + std::to_string(i) +
                           "-" + std::to_string(j));
    }
    out.lines.erase(it);
  }
  validate_feeder(out, false, "scenario " + scenario.name);
  return out;
}

}  // namespace v2geq
