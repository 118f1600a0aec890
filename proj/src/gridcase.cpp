#include "dvsim/gridcase.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

#include <json.hpp>

using nlohmann::json;

namespace dvsim::grid {

std::string to_string(BusKind k) {
  switch (k) {
    case BusKind::Slack: return "slack";
    case BusKind::Generator: return "generator";
    case BusKind::Load: return "load";
  }
  return "load";
}

BusKind bus_kind_from_string(const std::string& s) {
  if (s == "slack") return BusKind::Slack;
  if (s == "generator" || s == "pv") return BusKind::Generator;
  if (s == "load" || s == "pq") return BusKind::Load;
  throw ConfigError("unknown bus kind '" + s + "'");
}

std::string to_string(BusClass c) {
  switch (c) {
    case BusClass::Gen: return "G";
    case BusClass::Tie: return "T";
    case BusClass::Load: return "L";
  }
  return "L";
}

BusClass bus_class_from_string(const std::string& s) {
  if (s == "G") return BusClass::Gen;
  if (s == "T") return BusClass::Tie;
  if (s == "L") return BusClass::Load;
  throw ConfigError("unknown bus class '" + s + "'");
}

const BusRecord* GridCase::find_bus(BusId id) const {
  for (const auto& b : buses) {
    if (b.id == id) return &b;
  }
  return nullptr;
}

const GenRecord* GridCase::find_gen(BusId bus) const {
  for (const auto& g : gens) {
    if (g.bus == bus) return &g;
  }
  return nullptr;
}

std::map<BusId, int> GridCase::bus_positions() const {
  std::map<BusId, int> pos;
  for (std::size_t i = 0; i < buses.size(); ++i) {
    pos[buses[i].id] = static_cast<int>(i);
  }
  return pos;
}

BusId virtual_bus_id(const GridCase& c, BranchId branch) {
  BusId max_id = 0;
  for (const auto& b : c.buses) max_id = std::max(max_id, b.id);
  return max_id + 1 + branch;
}

BusId VirtualizedGroup::interior_endpoint(const GridCase& c, BranchId b) const {
  const auto& br = c.branches.at(static_cast<std::size_t>(b));
  if (group.bus_ids.count(br.from_bus)) return br.from_bus;
  return br.to_bus;
}

namespace {

int line_of_offset(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

json parse_json_or_throw(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": syntax error at line " +
                      std::to_string(line_of_offset(text, e.byte)) + ": " + e.what());
  }
}

void require_version(const json& j, const std::string& what) {
  if (!j.contains("format_version") || j.at("format_version") != "1") {
    throw ConfigError(what + ": missing or unsupported format_version (expected \"1\")");
  }
}

double num(const json& j, const char* field, double fallback, bool required = false) {
  if (!j.contains(field)) {
    if (required) throw ConfigError(std::string("missing field '") + field + "'");
    return fallback;
  }
  return j.at(field).get<double>();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GridCase parse_case_records(const json& j);

}  // namespace

GridCase parse_case(const std::string& text) {
  json j = parse_json_or_throw(text, "case file");
  require_version(j, "case file");
  try {
    return parse_case_records(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("case file: malformed record: ") + e.what());
  }
}

namespace {

GridCase parse_case_records(const json& j) {
  GridCase c;
  c.base_mva = num(j, "base_mva", 100.0, true);
  if (!(c.base_mva > 0)) throw ConfigError("case file: base_mva must be positive");
  const double to_pu = 1.0 / c.base_mva;

  if (!j.contains("buses") || !j.at("buses").is_array()) {
    throw ConfigError("case file: missing 'buses' array");
  }
  for (const auto& jb : j.at("buses")) {
    BusRecord b;
    b.id = jb.at("id").get<int>();
    b.kind = bus_kind_from_string(jb.at("kind").get<std::string>());
    b.p_demand = num(jb, "p_demand", 0.0) * to_pu;
    b.q_demand = num(jb, "q_demand", 0.0) * to_pu;
    b.g_shunt = num(jb, "g_shunt", 0.0);
    b.b_shunt = num(jb, "b_shunt", 0.0);
    b.v_mag = num(jb, "v_mag", 1.0);
    b.v_ang = num(jb, "v_ang", 0.0);
    b.base_kv = num(jb, "base_kv", 0.0);
    if (!std::isfinite(b.p_demand) || !std::isfinite(b.q_demand)) {
      throw ConfigError("bus " + std::to_string(b.id) + ": demand must be finite");
    }
    c.buses.push_back(b);
  }

  std::set<BusId> seen;
  for (const auto& b : c.buses) {
    if (!seen.insert(b.id).second) {
      throw ConfigError("duplicate bus id " + std::to_string(b.id));
    }
  }

  if (j.contains("branches")) {
    int idx = 0;
    for (const auto& jb : j.at("branches")) {
      BranchRecord br;
      br.from_bus = jb.at("from_bus").get<int>();
      br.to_bus = jb.at("to_bus").get<int>();
      br.r = num(jb, "r", 0.0);
      br.x = num(jb, "x", 0.0, true);
      br.b_charging = num(jb, "b_charging", 0.0);
      br.status = jb.value("status", true);
      if (br.from_bus == br.to_bus) {
        throw ConfigError("branch " + std::to_string(idx) + ": from_bus equals to_bus");
      }
      if (br.r == 0.0 && br.x == 0.0) {
        throw ConfigError("branch " + std::to_string(idx) + ": zero series impedance");
      }
      for (BusId e : {br.from_bus, br.to_bus}) {
        if (!seen.count(e)) {
          throw ConfigError("branch " + std::to_string(idx) + ": endpoint bus " +
                            std::to_string(e) + " not in bus table");
        }
      }
      c.branches.push_back(br);
      ++idx;
    }
  }

  if (j.contains("gens")) {
    for (const auto& jg : j.at("gens")) {
      GenRecord g;
      g.bus = jg.at("bus").get<int>();
      g.p_gen = num(jg, "p_gen", 0.0) * to_pu;
      g.q_gen = num(jg, "q_gen", 0.0) * to_pu;
      g.q_min = num(jg, "q_min", 0.0) * to_pu;
      g.q_max = num(jg, "q_max", 0.0) * to_pu;
      g.v_set = num(jg, "v_set", 1.0);
      if (!seen.count(g.bus)) {
        throw ConfigError("gen at bus " + std::to_string(g.bus) + ": bus not in bus table");
      }
      if (g.q_min > g.q_gen || g.q_gen > g.q_max) {
        throw ConfigError("gen at bus " + std::to_string(g.bus) +
                          ": q_gen outside [q_min, q_max]");
      }
      c.gens.push_back(g);
    }
  }

  if (j.contains("vvcs")) {
    for (const auto& jv : j.at("vvcs")) {
      VvcRecord v;
      v.bus = jv.at("bus").get<int>();
      v.q_available = num(jv, "q_available", 0.0) * to_pu;
      v.q_injected = num(jv, "q_injected", 0.0) * to_pu;
      v.active = jv.value("active", true);
      if (!seen.count(v.bus)) {
        throw ConfigError("vvc at bus " + std::to_string(v.bus) + ": bus not in bus table");
      }
      if (v.q_available < 0 || v.q_injected < 0) {
        throw ConfigError("vvc at bus " + std::to_string(v.bus) +
                          ": q_available and q_injected must be nonnegative");
      }
      c.vvcs.push_back(v);
    }
  }

  return c;
}

}  // namespace

GridCase load_case_file(const std::string& path) {
  return parse_case(read_file(path));
}

std::map<GroupId, std::set<BusId>> parse_grouping(const std::string& text) {
  json j = parse_json_or_throw(text, "grouping file");
  require_version(j, "grouping file");
  if (!j.contains("groups") || !j.at("groups").is_object()) {
    throw ConfigError("grouping file: missing 'groups' object");
  }
  std::map<GroupId, std::set<BusId>> out;
  for (const auto& [key, value] : j.at("groups").items()) {
    GroupId gid = 0;
    try {
      gid = std::stoi(key);
    } catch (const std::exception&) {
      throw ConfigError("grouping file: group id '" + key + "' is not an integer");
    }
    std::set<BusId> buses;
    try {
      for (const auto& b : value) buses.insert(b.get<int>());
    } catch (const json::exception& e) {
      throw ConfigError("grouping file: group '" + key + "': " + e.what());
    }
    out[gid] = std::move(buses);
  }
  return out;
}

std::map<GroupId, std::set<BusId>> load_grouping_file(const std::string& path) {
  return parse_grouping(read_file(path));
}

std::vector<Violation> validate_case(const GridCase& c) {
  std::vector<Violation> out;

  std::set<BusId> ids;
  for (const auto& b : c.buses) {
    if (!ids.insert(b.id).second) {
      out.push_back({"duplicate bus id", "bus " + std::to_string(b.id), ""});
    }
    if (!std::isfinite(b.p_demand) || !std::isfinite(b.q_demand)) {
      out.push_back({"non-finite demand", "bus " + std::to_string(b.id), ""});
    }
  }

  int slack_count = 0;
  for (const auto& b : c.buses) {
    if (b.kind == BusKind::Slack) ++slack_count;
  }
  if (slack_count == 0) {
    out.push_back({"no slack bus", "case", ""});
  } else if (slack_count > 1) {
    out.push_back({"multiple slack", "case", std::to_string(slack_count) + " slack buses"});
  }

  for (std::size_t i = 0; i < c.branches.size(); ++i) {
    const auto& br = c.branches[i];
    std::string rec = "branch " + std::to_string(i);
    if (br.from_bus == br.to_bus) out.push_back({"self-loop branch", rec, ""});
    if (br.r == 0.0 && br.x == 0.0) out.push_back({"zero impedance", rec, ""});
    for (BusId e : {br.from_bus, br.to_bus}) {
      if (!ids.count(e)) {
        out.push_back({"unknown endpoint", rec, "bus " + std::to_string(e)});
      }
    }
  }

  for (const auto& g : c.gens) {
    if (!ids.count(g.bus)) {
      out.push_back({"unknown gen bus", "gen at bus " + std::to_string(g.bus), ""});
    }
    if (g.q_min > g.q_gen || g.q_gen > g.q_max) {
      out.push_back({"q_gen outside limits", "gen at bus " + std::to_string(g.bus), ""});
    }
  }
  for (const auto& v : c.vvcs) {
    if (!ids.count(v.bus)) {
      out.push_back({"unknown vvc bus", "vvc at bus " + std::to_string(v.bus), ""});
    }
    if (v.q_available < 0 || v.q_injected < 0) {
      out.push_back({"negative vvc quantity", "vvc at bus " + std::to_string(v.bus), ""});
    }
  }

  // Connectivity over in-service branches.
  if (!c.buses.empty()) {
    std::map<BusId, std::vector<BusId>> adj;
    for (const auto& br : c.branches) {
      if (!br.status) continue;
      adj[br.from_bus].push_back(br.to_bus);
      adj[br.to_bus].push_back(br.from_bus);
    }
    std::set<BusId> visited;
    std::queue<BusId> frontier;
    frontier.push(c.buses.front().id);
    visited.insert(c.buses.front().id);
    while (!frontier.empty()) {
      BusId u = frontier.front();
      frontier.pop();
      for (BusId v : adj[u]) {
        if (visited.insert(v).second) frontier.push(v);
      }
    }
    for (const auto& b : c.buses) {
      if (!visited.count(b.id)) {
        out.push_back({"disconnected component", "bus " + std::to_string(b.id), ""});
      }
    }
  }

  return out;
}

GroupingResult apply_grouping(const GridCase& c,
                              const std::map<GroupId, std::set<BusId>>& grouping) {
  std::map<BusId, GroupId> owner;
  for (const auto& [gid, buses] : grouping) {
    for (BusId b : buses) {
      auto [it, fresh] = owner.emplace(b, gid);
      if (!fresh) {
        throw ConfigError("grouping overlap: bus " + std::to_string(b) + " in groups " +
                          std::to_string(it->second) + " and " + std::to_string(gid));
      }
      if (!c.find_bus(b)) {
        throw ConfigError("grouping references unknown bus " + std::to_string(b));
      }
    }
  }
  for (const auto& b : c.buses) {
    if (!owner.count(b.id)) {
      throw ConfigError("grouping omits bus " + std::to_string(b.id));
    }
  }

  GroupingResult result;
  for (const auto& [gid, buses] : grouping) {
    Group g;
    g.id = gid;
    g.bus_ids = buses;
    for (std::size_t i = 0; i < c.branches.size(); ++i) {
      const auto& br = c.branches[i];
      if (!br.status) continue;
      bool from_in = buses.count(br.from_bus) > 0;
      bool to_in = buses.count(br.to_bus) > 0;
      if (from_in != to_in) g.tie_branches.insert(static_cast<BranchId>(i));
    }

    bool has_load = false, has_gen = false, has_vvc = false;
    for (BusId b : buses) {
      const BusRecord* rec = c.find_bus(b);
      if (rec && (rec->p_demand != 0.0 || rec->q_demand != 0.0)) has_load = true;
      if (c.find_gen(b)) has_gen = true;
    }
    for (const auto& v : c.vvcs) {
      if (buses.count(v.bus)) has_vvc = true;
    }
    std::string gname = "group " + std::to_string(gid);
    if (!has_load) result.diagnostics.push_back(gname + ": no load bus");
    if (!has_gen && g.tie_branches.empty()) {
      result.diagnostics.push_back(gname + ": no generator and no tie for a virtual source");
    }
    if (!has_vvc) result.diagnostics.push_back(gname + ": no VVC");

    result.groups.push_back(std::move(g));
  }
  return result;
}

VirtualizedGroup virtualize_ties(const GridCase& c, const Group& g,
                                 const std::map<BranchId, TieFlow>& flows) {
  VirtualizedGroup vg;
  vg.group = g;

  for (BranchId b : g.tie_branches) {
    auto it = flows.find(b);
    if (it == flows.end()) {
      throw NumericsError("virtualize_ties: missing flow for tie branch " + std::to_string(b));
    }
    const auto& br = c.branches.at(static_cast<std::size_t>(b));
    VirtualBus vb;
    vb.branch_id = b;
    vb.bus_id = virtual_bus_id(c, b);
    vb.z_half = Complex(br.r, br.x) / 2.0;
    vb.b_quarter = br.b_charging / 4.0;
    vb.boundary_injection = it->second.s_into_group;
    // Import (power flowing into the group) looks like a source behind the
    // half line; export looks like a load.
    vb.kind = vb.boundary_injection.real() >= 0.0 ? VirtualKind::PV : VirtualKind::PQ;
    vg.virtual_buses.push_back(vb);
  }
  std::sort(vg.virtual_buses.begin(), vg.virtual_buses.end(),
            [](const VirtualBus& a, const VirtualBus& b) { return a.branch_id < b.branch_id; });

  std::set<BusId> tie_endpoints;
  for (BranchId b : g.tie_branches) {
    tie_endpoints.insert(vg.interior_endpoint(c, b));
  }

  for (BusId b : g.bus_ids) {
    if (c.find_gen(b)) {
      vg.classification[b] = BusClass::Gen;
    } else if (tie_endpoints.count(b)) {
      vg.classification[b] = BusClass::Tie;
    } else {
      vg.classification[b] = BusClass::Load;
    }
  }
  for (const auto& vb : vg.virtual_buses) {
    vg.classification[vb.bus_id] =
        vb.kind == VirtualKind::PV ? BusClass::Gen : BusClass::Load;
  }
  return vg;
}

}  // namespace dvsim::grid
