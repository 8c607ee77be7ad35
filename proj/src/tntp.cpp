#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "v2geq/error.hpp"
#include "v2geq/net_model.hpp"

namespace v2geq {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& token, double& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_int(const std::string& token, long& out) {
  double d = 0.0;
  if (!parse_double(token, d) || d != std::floor(d)) return false;
  out = static_cast<long>(d);
  return true;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

// Metadata block: `<KEY> value` lines up to `<END OF METADATA>`.
struct Metadata {
  std::map<std::string, std::pair<std::string, std::size_t>> values;
  std::size_t end_line = 0;
};

Metadata read_metadata(std::istream& in, const std::string& src,
                       std::size_t& line_no) {
  Metadata meta;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '~') continue;
    if (t[0] != '<') {
      throw InputError(src, line_no, "expected metadata line, found '" + t + "'");
    }
    const auto close = t.find('>');
    if (close == std::string::npos) {
      throw InputError(src, line_no, "malformed metadata header '" + t + "'");
    }
    const std::string key = t.substr(1, close - 1);
    if (key == "END OF METADATA") {
      meta.end_line = line_no;
      return meta;
    }
    meta.values[key] = {trim(t.substr(close + 1)), line_no};
  }
  throw InputError(src, line_no, "missing <END OF METADATA>");
}

long metadata_count(const Metadata& meta, const std::string& key,
                    const std::string& src) {
  auto it = meta.values.find(key);
  if (it == meta.values.end()) {
    throw InputError(src, meta.end_line, "missing <" + key + "> header");
  }
  long v = 0;
  if (!parse_int(it->second.first, v) || v < 0) {
    throw InputError(src, it->second.second,
                     "malformed <" + key + "> value '" + it->second.first + "'");
  }
  return v;
}

}  // namespace

bool TransportNetwork::has_node(NodeId n) const {
  return std::binary_search(nodes.begin(), nodes.end(), n);
}

std::optional<std::size_t> TransportNetwork::find_arc(NodeId tail,
                                                      NodeId head) const {
  for (std::size_t a = 0; a < arcs.size(); ++a) {
    if (arcs[a].tail == tail && arcs[a].head == head) return a;
  }
  return std::nullopt;
}

void TransportNetwork::validate() const {
  const std::string src = "transport";
  if (!std::is_sorted(nodes.begin(), nodes.end()) ||
      std::adjacent_find(nodes.begin(), nodes.end()) != nodes.end()) {
    throw InputError(src, 0, "node list must be sorted and unique");
  }
  if (!(period_h > 0.0)) throw InputError(src, 0, "period length must be positive");
  std::set<OdPair> seen;
  for (std::size_t a = 0; a < arcs.size(); ++a) {
    const Arc& arc = arcs[a];
    const std::string name = "arc " + std::to_string(arc.tail) + "->" +
                             std::to_string(arc.head);
    if (!has_node(arc.tail) || !has_node(arc.head)) {
      throw InputError(src, 0, name + " references an unknown node");
    }
    if (arc.tail == arc.head) throw InputError(src, 0, name + " is a self-loop");
    if (!seen.insert({arc.tail, arc.head}).second) {
      throw InputError(src, 0, name + " is duplicated");
    }
    if (!(arc.capacity > 0.0) || !(arc.distance_km > 0.0) ||
        !(arc.free_flow_time_h > 0.0)) {
      throw InputError(src, 0,
                       name + " needs positive capacity, distance and time");
    }
    if (!(arc.consumption_kwh_per_km >= 0.0)) {
      throw InputError(src, 0, name + " has negative consumption rate");
    }
  }
  for (const auto& [n, st] : stations) {
    const std::string name = "station " + std::to_string(n);
    if (!has_node(n)) throw InputError(src, 0, name + " is not a network node");
    if (!(st.piles > 0.0) || !(st.base_wait_h >= 0.0) ||
        !(st.congestion_h >= 0.0)) {
      throw InputError(src, 0, name + " has invalid wait parameters");
    }
  }
  for (const auto& [od, d] : od_demands) {
    const std::string name =
        "OD " + std::to_string(od.first) + "->" + std::to_string(od.second);
    if (!has_node(od.first) || !has_node(od.second)) {
      throw InputError(src, 0, name + " references an unknown node");
    }
    if (!(d.ev >= 0.0) || !(d.fv >= 0.0)) {
      throw InputError(src, 0, name + " has negative demand");
    }
  }
}

TransportNetwork load_transport_tntp(std::istream& net_in,
                                     std::istream& trips_in,
                                     const TransportSidecar& sidecar,
                                     const std::string& net_name,
                                     const std::string& trips_name) {
  TransportNetwork net;
  net.period_h = sidecar.period_h;

  std::size_t line_no = 0;
  const Metadata meta = read_metadata(net_in, net_name, line_no);
  const long n_nodes = metadata_count(meta, "NUMBER OF NODES", net_name);
  const long n_links = metadata_count(meta, "NUMBER OF LINKS", net_name);
  for (long i = 1; i <= n_nodes; ++i) net.nodes.push_back(static_cast<NodeId>(i));

  std::string line;
  while (std::getline(net_in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '~') continue;
    if (t.back() == ';') t = trim(t.substr(0, t.size() - 1));
    const auto tok = split_ws(t);
    if (tok.size() < 5) {
      throw InputError(net_name, line_no, "link row needs at least 5 columns");
    }
    long tail = 0, head = 0;
    double cap = 0, len = 0, fft = 0;
    if (!parse_int(tok[0], tail) || !parse_int(tok[1], head) ||
        !parse_double(tok[2], cap) || !parse_double(tok[3], len) ||
        !parse_double(tok[4], fft)) {
      throw InputError(net_name, line_no, "non-numeric link field");
    }
    for (long n : {tail, head}) {
      if (n < 1 || n > n_nodes) {
        throw InputError(net_name, line_no,
                         "dangling node reference " + std::to_string(n));
      }
    }
    if (!(cap > 0.0)) {
      throw InputError(net_name, line_no, "nonpositive capacity");
    }
    if (!(len > 0.0) || !(fft > 0.0)) {
      throw InputError(net_name, line_no, "nonpositive length or free-flow time");
    }
    if (net.find_arc(static_cast<NodeId>(tail), static_cast<NodeId>(head))) {
      throw InputError(net_name, line_no, "duplicate link");
    }
    Arc arc;
    arc.tail = static_cast<NodeId>(tail);
    arc.head = static_cast<NodeId>(head);
    arc.capacity = cap * sidecar.capacity_scale;
    arc.distance_km = len * sidecar.length_to_km;
    arc.free_flow_time_h = fft * sidecar.time_to_hours;
    auto ov = sidecar.consumption_overrides.find({arc.tail, arc.head});
    arc.consumption_kwh_per_km = ov != sidecar.consumption_overrides.end()
                                     ? ov->second
                                     : sidecar.consumption_kwh_per_km;
    net.arcs.push_back(arc);
  }
  if (static_cast<long>(net.arcs.size()) != n_links) {
    throw InputError(net_name, line_no,
                     "<NUMBER OF LINKS> says " + std::to_string(n_links) +
                         " but " + std::to_string(net.arcs.size()) +
                         " link rows were read");
  }

  // Trips: `Origin r` followed by `s : value;` pairs.
  line_no = 0;
  const Metadata tmeta = read_metadata(trips_in, trips_name, line_no);
  (void)tmeta;
  auto wanted = [](const std::optional<std::vector<NodeId>>& set, NodeId n) {
    return !set || std::find(set->begin(), set->end(), n) != set->end();
  };
  long origin = -1;
  while (std::getline(trips_in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '~') continue;
    if (t.rfind("Origin", 0) == 0) {
      if (!parse_int(trim(t.substr(6)), origin) || origin < 1 ||
          origin > n_nodes) {
        throw InputError(trips_name, line_no, "bad origin '" + t + "'");
      }
      continue;
    }
    if (origin < 0) {
      throw InputError(trips_name, line_no, "demand entry before any Origin");
    }
    std::string body = t;
    std::replace(body.begin(), body.end(), ';', ' ');
    std::istringstream entries(body);
    std::string dest_tok, colon, value_tok;
    while (entries >> dest_tok) {
      // Accept both `5 : 10.0` and `5:10.0`.
      std::string d = dest_tok, v;
      if (auto c = d.find(':'); c != std::string::npos) {
        v = d.substr(c + 1);
        d = d.substr(0, c);
      } else {
        if (!(entries >> colon) || colon.empty() || colon[0] != ':') {
          throw InputError(trips_name, line_no, "expected ':' after destination");
        }
        v = colon.substr(1);
      }
      if (v.empty() && !(entries >> v)) {
        throw InputError(trips_name, line_no, "missing demand value");
      }
      long dest = 0;
      double value = 0.0;
      if (!parse_int(d, dest) || !parse_double(v, value)) {
        throw InputError(trips_name, line_no, "non-numeric demand entry");
      }
      if (dest < 1 || dest > n_nodes) {
        throw InputError(trips_name, line_no,
                         "dangling node reference " + std::to_string(dest));
      }
      if (value < 0.0) throw InputError(trips_name, line_no, "negative demand");
      const NodeId r = static_cast<NodeId>(origin);
      const NodeId s = static_cast<NodeId>(dest);
      if (r == s || value == 0.0) continue;
      if (!wanted(sidecar.origins, r) || !wanted(sidecar.destinations, s)) continue;
      const double total = value * sidecar.demand_scale;
      OdDemand& dem = net.od_demands[{r, s}];
      dem.ev = sidecar.ev_share * total;
      dem.fv = total - dem.ev;
    }
  }

  net.stations = sidecar.stations;
  net.validate();
  return net;
}

TransportNetwork load_transport_tntp_files(const std::string& net_path,
                                           const std::string& trips_path,
                                           const TransportSidecar& sidecar) {
  std::ifstream net(net_path);
  if (!net) throw InputError(net_path, 0, "cannot open file");
  std::ifstream trips(trips_path);
  if (!trips) throw InputError(trips_path, 0, "cannot open file");
  return load_transport_tntp(net, trips, sidecar, net_path, trips_path);
}

void write_tntp_net(std::ostream& out, const TransportNetwork& net) {
  const NodeId max_node = net.nodes.empty() ? 0 : net.nodes.back();
  out << std::setprecision(17);
  out << "<NUMBER OF ZONES> " << max_node << "\n"
      << "<NUMBER OF NODES> " << max_node << "\n"
      << "<FIRST THRU NODE> 1\n"
      << "<NUMBER OF LINKS> " << net.arcs.size() << "\n"
      << "<END OF METADATA>\n\n"
      << "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower"
         "\tspeed\ttoll\tlink_type\t;\n";
  for (const Arc& a : net.arcs) {
    out << "\t" << a.tail << "\t" << a.head << "\t" << a.capacity << "\t"
        << a.distance_km << "\t" << a.free_flow_time_h
        << "\t0.15\t4\t0\t0\t1\t;\n";
  }
}

void write_tntp_trips(std::ostream& out, const TransportNetwork& net) {
  const NodeId max_node = net.nodes.empty() ? 0 : net.nodes.back();
  double total = 0.0;
  for (const auto& [od, d] : net.od_demands) total += d.ev + d.fv;
  out << std::setprecision(17);
  out << "<NUMBER OF ZONES> " << max_node << "\n"
      << "<TOTAL OD FLOW> " << total << "\n"
      << "<END OF METADATA>\n";
  NodeId current = -1;
  for (const auto& [od, d] : net.od_demands) {
    if (od.first != current) {
      current = od.first;
      out << "\n\nOrigin \t" << current << "\n";
    }
    out << "    " << od.second << " :\t" << d.ev + d.fv << ";\n";
  }
}

TransportSidecar sidecar_for(const TransportNetwork& net) {
  TransportSidecar sc;
  sc.time_to_hours = 1.0;
  sc.length_to_km = 1.0;
  sc.period_h = net.period_h;
  sc.stations = net.stations;
  double ev = 0.0, total = 0.0;
  for (const auto& [od, d] : net.od_demands) {
    ev += d.ev;
    total += d.ev + d.fv;
  }
  sc.ev_share = total > 0.0 ? ev / total : 0.5;
  if (!net.arcs.empty()) {
    sc.consumption_kwh_per_km = net.arcs.front().consumption_kwh_per_km;
  }
  for (const Arc& a : net.arcs) {
    if (a.consumption_kwh_per_km != sc.consumption_kwh_per_km) {
      sc.consumption_overrides[{a.tail, a.head}] = a.consumption_kwh_per_km;
    }
  }
  return sc;
}

void apply_ev_share(TransportNetwork& net, double ev_share) {
  if (!(ev_share >= 0.0 && ev_share <= 1.0)) {
    throw InputError("scenario", 0, "ev_share must lie in [0, 1]");
  }
  for (auto& [od, d] : net.od_demands) {
    const double total = d.ev + d.fv;
    d.ev = ev_share * total;
    d.fv = total - d.ev;
  }
}

nlohmann::json transport_to_json(const TransportNetwork& net) {
  using nlohmann::json;
  json j;
  j["nodes"] = net.nodes;
  j["period_h"] = net.period_h;
  json arcs = json::array();
  for (const Arc& a : net.arcs) {
    arcs.push_back({{"tail", a.tail},
                    {"head", a.head},
                    {"free_flow_time_h", a.free_flow_time_h},
                    {"capacity", a.capacity},
                    {"distance_km", a.distance_km},
                    {"consumption_kwh_per_km", a.consumption_kwh_per_km}});
  }
  j["arcs"] = arcs;
  json st = json::array();
  for (const auto& [n, s] : net.stations) {
    st.push_back({{"node", n},
                  {"base_wait_h", s.base_wait_h},
                  {"congestion_h", s.congestion_h},
                  {"piles", s.piles},
                  {"bus", s.bus}});
  }
  j["stations"] = st;
  json od = json::array();
  for (const auto& [k, d] : net.od_demands) {
    od.push_back({{"origin", k.first},
                  {"destination", k.second},
                  {"ev", d.ev},
                  {"fv", d.fv}});
  }
  j["od_demands"] = od;
  return j;
}

TransportNetwork transport_from_json(const nlohmann::json& j,
                                     const std::string& source) {
  TransportNetwork net;
  try {
    net.nodes = j.at("nodes").get<std::vector<NodeId>>();
    net.period_h = j.value("period_h", 1.0);
    for (const auto& a : j.at("arcs")) {
      net.arcs.push_back({a.at("tail").get<NodeId>(), a.at("head").get<NodeId>(),
                          a.at("free_flow_time_h").get<double>(),
                          a.at("capacity").get<double>(),
                          a.at("distance_km").get<double>(),
                          a.at("consumption_kwh_per_km").get<double>()});
    }
    for (const auto& s : j.value("stations", nlohmann::json::array())) {
      net.stations[s.at("node").get<NodeId>()] = {
          s.at("base_wait_h").get<double>(), s.at("congestion_h").get<double>(),
          s.at("piles").get<double>(), s.at("bus").get<BusId>()};
    }
    for (const auto& d : j.value("od_demands", nlohmann::json::array())) {
      net.od_demands[{d.at("origin").get<NodeId>(),
                      d.at("destination").get<NodeId>()}] = {
          d.at("ev").get<double>(), d.at("fv").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(source, 0, e.what());
  }
  net.validate();
  return net;
}

}  // namespace v2geq
