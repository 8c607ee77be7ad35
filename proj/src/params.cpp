#include <algorithm>
#include <fstream>
#include <sstream>

#include "v2geq/error.hpp"
#include "v2geq/net_model.hpp"

namespace v2geq {
namespace {

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int bracket_depth(const std::string& s) {
  int depth = 0;
  for (char c : s) depth += (c == '[') - (c == ']');
  return depth;
}

// The scenario TOML subset: `key = value` where value is a number, boolean,
// basic string or (nested) array of those. TOML values of that shape are
// valid JSON once `true`/`false`/strings are taken verbatim.
nlohmann::json parse_toml_subset(std::istream& in, const std::string& src) {
  nlohmann::json out = nlohmann::json::object();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(strip_comment(line));
    if (t.empty()) continue;
    if (t[0] == '[') {
      throw InputError(src, line_no, "tables are not supported in scenario files");
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw InputError(src, line_no, "expected key = value");
    const std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    const std::size_t start = line_no;
    while (bracket_depth(value) > 0 && std::getline(in, line)) {
      ++line_no;
      value += " " + trim(strip_comment(line));
    }
    if (bracket_depth(value) != 0) throw InputError(src, start, "unbalanced brackets");
    // Trailing commas inside arrays are legal TOML but not JSON.
    std::string cleaned;
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (value[i] == ',') {
        std::size_t j = value.find_first_not_of(" \t", i + 1);
        if (j != std::string::npos && value[j] == ']') continue;
      }
      cleaned += value[i];
    }
    try {
      out[key] = nlohmann::json::parse(cleaned);
    } catch (const nlohmann::json::exception&) {
      throw InputError(src, start, "cannot parse value of '" + key + "'");
    }
  }
  return out;
}

std::pair<double, double> pair_or(const nlohmann::json& j, const char* key,
                                  std::pair<double, double> fallback,
                                  const std::string& src) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) {
    throw InputError(src, 0, std::string(key) + " must be a [lower, upper] pair");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

void EvParams::validate() const {
  const std::string src = "ev parameters";
  const double reserve = reserve_kwh();
  if (!(reserve > 0.0 && reserve < post_discharge_kwh &&
        post_discharge_kwh < battery_kwh)) {
    throw InputError(src, 0,
                     "need 0 < reserve (range_anxiety * battery) < "
                     "post_discharge < battery");
  }
  if (value_of_time_ev < 0.0 || value_of_time_fv < 0.0 ||
      degradation_per_kwh < 0.0) {
    throw InputError(src, 0, "monetary parameters must be nonnegative");
  }
  if (!(pile_kw > 0.0)) throw InputError(src, 0, "pile power must be positive");
  if (!(value_of_time_fv > 0.0) || !(value_of_time_ev > 0.0)) {
    throw InputError(src, 0, "values of time must be positive");
  }
}

const StationMarket& MarketParams::station(NodeId n) const {
  static const StationMarket fallback{};
  auto it = stations.find(n);
  return it == stations.end() ? fallback : it->second;
}

void MarketParams::validate(const PowerFeeder& feeder,
                            const TransportNetwork& net) const {
  const std::string src = "market parameters";
  double max_b = 0.0;
  for (const Bus& b : feeder.buses) {
    if (b.demand) max_b = std::max(max_b, b.demand->intercept);
  }
  if (!(shedding_penalty > max_b)) {
    throw InputError(src, 0, "shedding penalty must exceed every inverse-demand intercept");
  }
  for (const auto& [n, m] : stations) {
    if (!net.is_station(n)) {
      throw InputError(src, 0, "market entry for non-station node " + std::to_string(n));
    }
    if (!(m.net_min_kw <= m.net_max_kw)) {
      throw InputError(src, 0, "station " + std::to_string(n) + " has unordered exchange bounds");
    }
  }
  for (const auto& [n, st] : net.stations) {
    if (!feeder.bus_index(st.bus)) {
      throw InputError(src, 0, "station " + std::to_string(n) + " maps to unknown bus " +
                                   std::to_string(st.bus));
    }
    if (st.bus == feeder.tso_bus) {
      throw InputError(src, 0, "station " + std::to_string(n) + " is mapped to the TSO bus");
    }
  }
  for (const Lse& f : lses) {
    if (f.generators.empty()) {
      throw InputError(src, 0, "LSE '" + f.name + "' owns no generator");
    }
    for (const Generator& g : f.generators) {
      const std::string name = "LSE '" + f.name + "' generator at bus " + std::to_string(g.bus);
      if (!feeder.bus_index(g.bus)) throw InputError(src, 0, name + " references an unknown bus");
      if (g.bus == feeder.tso_bus) throw InputError(src, 0, name + " sits on the TSO bus");
      if (!(g.quad_coeff > 0.0) || !(g.lin_coeff > 0.0)) {
        throw InputError(src, 0, name + " needs positive cost coefficients");
      }
      if (!(0.0 <= g.min_kw && g.min_kw <= g.max_kw)) {
        throw InputError(src, 0, name + " has unordered generation bounds");
      }
    }
  }
}

ScenarioSpec scenario_from_json(const nlohmann::json& j, const std::string& src) {
  ScenarioSpec s;
  try {
    s.name = j.value("name", std::string("scenario"));
    s.load_scale = j.value("load_scale", 1.0);
    for (const auto& o : j.value("outages", nlohmann::json::array())) {
      if (!o.is_array() || o.size() != 2) {
        throw InputError(src, 0, "each outage must be a [from, to] pair");
      }
      s.outages.emplace_back(o[0].get<BusId>(), o[1].get<BusId>());
    }
    if (j.contains("v2g")) s.v2g = j.at("v2g").get<bool>();
    if (j.contains("ev_share")) s.ev_share = j.at("ev_share").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(src, 0, e.what());
  }
  if (!(s.load_scale >= 0.0)) throw InputError(src, 0, "load_scale must be >= 0");
  if (s.ev_share && !(*s.ev_share >= 0.0 && *s.ev_share <= 1.0)) {
    throw InputError(src, 0, "ev_share must lie in [0, 1]");
  }
  return s;
}

ScenarioSpec load_scenario(std::istream& in, const std::string& src) {
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  nlohmann::json j;
  if (first != std::string::npos && text[first] == '{') {
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(src, 0, e.what());
    }
  } else {
    std::istringstream toml(text);
    j = parse_toml_subset(toml, src);
  }
  return scenario_from_json(j, src);
}

ScenarioSpec load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path, 0, "cannot open file");
  return load_scenario(in, path);
}

CaseConfig case_from_json(const nlohmann::json& j, const std::string& src) {
  CaseConfig c;
  try {
    const auto& t = j.value("transport", nlohmann::json::object());
    c.transport.time_to_hours = t.value("time_unit_hours", 1.0 / 60.0);
    c.transport.length_to_km = t.value("length_unit_km", 1.0);
    c.transport.capacity_scale = t.value("capacity_scale", 1.0);
    c.transport.consumption_kwh_per_km = t.value("consumption_kwh_per_km", 0.2);
    c.transport.ev_share = t.value("ev_share", 0.5);
    c.transport.demand_scale = t.value("demand_scale", 1.0);
    c.transport.period_h = t.value("period_h", 1.0);
    if (t.contains("origins")) c.transport.origins = t.at("origins").get<std::vector<NodeId>>();
    if (t.contains("destinations")) {
      c.transport.destinations = t.at("destinations").get<std::vector<NodeId>>();
    }
    for (const auto& s : j.value("stations", nlohmann::json::array())) {
      const NodeId n = s.at("node").get<NodeId>();
      Station st;
      st.bus = s.at("bus").get<BusId>();
      st.base_wait_h = s.value("base_wait_h", 0.0);
      st.congestion_h = s.value("congestion_h", 0.0);
      st.piles = s.value("piles", 1.0);
      c.transport.stations[n] = st;
      StationMarket m;
      m.fee_charge = s.value("fee_charge", 0.0);
      m.fee_discharge = s.value("fee_discharge", 0.0);
      std::tie(m.net_min_kw, m.net_max_kw) =
          pair_or(s, "net_bounds_kw", {m.net_min_kw, m.net_max_kw}, src);
      c.market.stations[n] = m;
    }
    const auto& ev = j.value("ev", nlohmann::json::object());
    c.ev.battery_kwh = ev.value("battery_kwh", c.ev.battery_kwh);
    c.ev.post_discharge_kwh = ev.value("post_discharge_kwh", c.ev.post_discharge_kwh);
    c.ev.range_anxiety = ev.value("range_anxiety", c.ev.range_anxiety);
    c.ev.value_of_time_ev = ev.value("value_of_time_ev", c.ev.value_of_time_ev);
    c.ev.value_of_time_fv = ev.value("value_of_time_fv", c.ev.value_of_time_fv);
    c.ev.degradation_per_kwh = ev.value("degradation_per_kwh", c.ev.degradation_per_kwh);
    c.ev.pile_kw = ev.value("pile_kw", c.ev.pile_kw);
    const auto& mk = j.value("market", nlohmann::json::object());
    c.market.shedding_penalty = mk.value("shedding_penalty", c.market.shedding_penalty);
    for (const auto& jf : mk.value("lses", nlohmann::json::array())) {
      Lse f;
      f.name = jf.value("name", "LSE" + std::to_string(c.market.lses.size() + 1));
      for (const auto& jg : jf.at("generators")) {
        Generator g;
        g.bus = jg.at("bus").get<BusId>();
        g.quad_coeff = jg.at("d").get<double>();
        g.lin_coeff = jg.at("e").get<double>();
        std::tie(g.min_kw, g.max_kw) = pair_or(jg, "bounds_kw", {0.0, 0.0}, src);
        f.generators.push_back(g);
      }
      c.market.lses.push_back(f);
    }
    const auto& p = j.value("paths", nlohmann::json::object());
    c.paths.k = p.value("k", std::size_t{10});
    c.paths.by_distance = p.value("metric", std::string("time")) == "distance";
    c.solver = j.value("solver", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(src, 0, e.what());
  }
  c.ev.validate();
  if (c.paths.k < 1) throw InputError(src, 0, "paths.k must be >= 1");
  return c;
}

CaseConfig load_case_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path, 0, "cannot open file");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path, 0, e.what());
  }
  return case_from_json(j, path);
}

}  // namespace v2geq
