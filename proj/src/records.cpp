#include "dvsim/records.hpp"

#include <algorithm>

namespace dvsim::records {

json complex_json(const Complex& c) {
  return json::array({c.real(), c.imag()});
}

Complex complex_from(const json& j) {
  return Complex(j.at(0).get<double>(), j.at(1).get<double>());
}

json snapshot_json(const pf::PmuSnapshot& snap) {
  json v = json::array();
  for (const auto& [bus, phasor] : snap.v_phasor) {
    v.push_back(json{{"bus", bus}, {"v", complex_json(phasor)}});
  }
  json s = json::array();
  for (const auto& [bus, load] : snap.s_load) {
    s.push_back(json{{"bus", bus}, {"s", complex_json(load)}});
  }
  json t = json::array();
  for (const auto& [branch, flow] : snap.tie_flows) {
    t.push_back(json{{"branch", branch},
                     {"s_into_group", complex_json(flow.s_into_group)},
                     {"v_mid", complex_json(flow.v_mid)}});
  }
  return json{{"group_id", snap.group_id},
              {"timestamp", snap.timestamp},
              {"v_phasor", v},
              {"s_load", s},
              {"tie_flows", t}};
}

pf::PmuSnapshot snapshot_from(const json& j) {
  pf::PmuSnapshot snap;
  snap.group_id = j.at("group_id").get<int>();
  snap.timestamp = j.at("timestamp").get<LogicalTime>();
  for (const auto& e : j.at("v_phasor")) {
    snap.v_phasor[e.at("bus").get<int>()] = complex_from(e.at("v"));
  }
  for (const auto& e : j.at("s_load")) {
    snap.s_load[e.at("bus").get<int>()] = complex_from(e.at("s"));
  }
  for (const auto& e : j.at("tie_flows")) {
    grid::TieFlow flow;
    flow.s_into_group = complex_from(e.at("s_into_group"));
    flow.v_mid = complex_from(e.at("v_mid"));
    snap.tie_flows[e.at("branch").get<int>()] = flow;
  }
  return snap;
}

json group_json(const grid::Group& g) {
  json buses = json::array();
  for (BusId b : g.bus_ids) buses.push_back(b);
  json ties = json::array();
  for (BranchId t : g.tie_branches) ties.push_back(t);
  json j{{"id", g.id}, {"bus_ids", buses}, {"tie_branches", ties}};
  if (g.merged_from) {
    j["merged_from"] = json::array({g.merged_from->first, g.merged_from->second});
  }
  return j;
}

grid::Group group_from(const json& j) {
  grid::Group g;
  g.id = j.at("id").get<int>();
  for (const auto& b : j.at("bus_ids")) g.bus_ids.insert(b.get<int>());
  for (const auto& t : j.at("tie_branches")) g.tie_branches.insert(t.get<int>());
  if (j.contains("merged_from")) {
    g.merged_from = {j.at("merged_from").at(0).get<int>(), j.at("merged_from").at(1).get<int>()};
  }
  return g;
}

namespace {

json admittance_json(const pf::AdmittanceMatrix& y) {
  json order = json::array();
  for (BusId b : y.bus_order) order.push_back(b);
  json rows = json::array();
  for (int i = 0; i < y.order(); ++i) {
    json row = json::array();
    for (int j = 0; j < y.order(); ++j) {
      row.push_back(json::array({y.entries(i, j).real(), y.entries(i, j).imag()}));
    }
    rows.push_back(row);
  }
  return json{{"bus_order", order}, {"entries", rows}};
}

pf::AdmittanceMatrix admittance_from(const json& j) {
  pf::AdmittanceMatrix y;
  for (const auto& b : j.at("bus_order")) y.bus_order.push_back(b.get<int>());
  for (std::size_t i = 0; i < y.bus_order.size(); ++i) {
    y.bus_index[y.bus_order[i]] = static_cast<int>(i);
  }
  const int n = static_cast<int>(y.bus_order.size());
  y.entries.resize(n, n);
  const auto& rows = j.at("entries");
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const auto& e = rows.at(r).at(c);
      y.entries(r, c) = Complex(e.at(0).get<double>(), e.at(1).get<double>());
    }
  }
  return y;
}

json pi_json(const dvs::PIMatrix& pi) {
  json ranking = json::array();
  for (const auto& [bus, order] : pi.ranking) {
    json o = json::array();
    for (BusId b : order) o.push_back(b);
    ranking.push_back(json{{"bus", bus}, {"order", o}});
  }
  json distances = json::array();
  for (const auto& [pair, d] : pi.distances) {
    distances.push_back(json::array({pair.first, pair.second, d}));
  }
  return json{{"group_id", pi.group_id}, {"ranking", ranking}, {"distances", distances}};
}

dvs::PIMatrix pi_from(const json& j) {
  dvs::PIMatrix pi;
  pi.group_id = j.at("group_id").get<int>();
  for (const auto& e : j.at("ranking")) {
    std::vector<BusId> order;
    for (const auto& b : e.at("order")) order.push_back(b.get<int>());
    pi.ranking[e.at("bus").get<int>()] = std::move(order);
  }
  for (const auto& e : j.at("distances")) {
    pi.distances[{e.at(0).get<int>(), e.at(1).get<int>()}] = e.at(2).get<double>();
  }
  return pi;
}

}  // namespace

json group_light_json(const dvs::GroupData& gd) {
  json zth = json::array();
  for (const auto& [bus, z] : gd.z_th) {
    zth.push_back(json{{"bus", bus}, {"z", complex_json(z)}});
  }
  json j{{"id", gd.id},
         {"group", group_json(gd.group)},
         {"z_th", zth},
         {"vsi_threshold", gd.vsi_threshold},
         {"v_req", gd.v_req}};
  if (gd.merged_into) j["merged_into"] = *gd.merged_into;
  return j;
}

json group_detail_json(const dvs::GroupData& gd) {
  json classification = json::array();
  for (const auto& [bus, cls] : gd.classification) {
    classification.push_back(json::array({bus, grid::to_string(cls)}));
  }
  json virtuals = json::array();
  for (const auto& vb : gd.virtual_buses) {
    virtuals.push_back(json{{"branch_id", vb.branch_id},
                            {"bus_id", vb.bus_id},
                            {"kind", vb.kind == grid::VirtualKind::PV ? "pv" : "pq"},
                            {"z_half", complex_json(vb.z_half)},
                            {"b_quarter", vb.b_quarter},
                            {"boundary_injection", complex_json(vb.boundary_injection)}});
  }
  json edges = json::array();
  for (const auto& e : gd.edges) {
    edges.push_back(json::array({e.from, e.to, e.z_mag}));
  }
  return json{{"classification", classification},
              {"virtual_buses", virtuals},
              {"y_group", admittance_json(gd.y_group)},
              {"pi", pi_json(gd.pi)},
              {"edges", edges}};
}

dvs::GroupData group_light_from(const json& light) {
  dvs::GroupData gd;
  gd.id = light.at("id").get<int>();
  gd.group = group_from(light.at("group"));
  for (const auto& e : light.at("z_th")) {
    gd.z_th[e.at("bus").get<int>()] = complex_from(e.at("z"));
  }
  gd.vsi_threshold = light.at("vsi_threshold").get<double>();
  gd.v_req = light.at("v_req").get<double>();
  if (light.contains("merged_into")) gd.merged_into = light.at("merged_into").get<int>();
  return gd;
}

dvs::GroupData group_from_parts(const json& light, const json& detail) {
  dvs::GroupData gd = group_light_from(light);
  for (const auto& e : detail.at("classification")) {
    gd.classification[e.at(0).get<int>()] = grid::bus_class_from_string(e.at(1).get<std::string>());
  }
  for (const auto& e : detail.at("virtual_buses")) {
    grid::VirtualBus vb;
    vb.branch_id = e.at("branch_id").get<int>();
    vb.bus_id = e.at("bus_id").get<int>();
    vb.kind = e.at("kind") == "pv" ? grid::VirtualKind::PV : grid::VirtualKind::PQ;
    vb.z_half = complex_from(e.at("z_half"));
    vb.b_quarter = e.at("b_quarter").get<double>();
    vb.boundary_injection = complex_from(e.at("boundary_injection"));
    gd.virtual_buses.push_back(vb);
  }
  gd.y_group = admittance_from(detail.at("y_group"));
  gd.pi = pi_from(detail.at("pi"));
  for (const auto& e : detail.at("edges")) {
    gd.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<double>()});
  }
  return gd;
}

json group_data_json(const dvs::GroupData& gd) {
  json j = group_light_json(gd);
  json detail = group_detail_json(gd);
  for (auto& [key, value] : detail.items()) j[key] = std::move(value);
  return j;
}

dvs::GroupData group_data_from(const json& j) {
  dvs::GroupData gd;
  gd.id = j.at("id").get<int>();
  gd.group = group_from(j.at("group"));
  for (const auto& e : j.at("classification")) {
    gd.classification[e.at(0).get<int>()] = grid::bus_class_from_string(e.at(1).get<std::string>());
  }
  for (const auto& e : j.at("virtual_buses")) {
    grid::VirtualBus vb;
    vb.branch_id = e.at("branch_id").get<int>();
    vb.bus_id = e.at("bus_id").get<int>();
    vb.kind = e.at("kind") == "pv" ? grid::VirtualKind::PV : grid::VirtualKind::PQ;
    vb.z_half = complex_from(e.at("z_half"));
    vb.b_quarter = e.at("b_quarter").get<double>();
    vb.boundary_injection = complex_from(e.at("boundary_injection"));
    gd.virtual_buses.push_back(vb);
  }
  gd.y_group = admittance_from(j.at("y_group"));
  for (const auto& e : j.at("z_th")) {
    gd.z_th[e.at("bus").get<int>()] = complex_from(e.at("z"));
  }
  gd.pi = pi_from(j.at("pi"));
  for (const auto& e : j.at("edges")) {
    gd.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<double>()});
  }
  gd.vsi_threshold = j.at("vsi_threshold").get<double>();
  gd.v_req = j.at("v_req").get<double>();
  if (j.contains("merged_into")) gd.merged_into = j.at("merged_into").get<int>();
  return gd;
}

json vvc_registry_json(const std::vector<grid::VvcRecord>& vvcs) {
  json arr = json::array();
  for (const auto& v : vvcs) {
    arr.push_back(json{{"bus", v.bus},
                       {"q_available", v.q_available},
                       {"q_injected", v.q_injected},
                       {"active", v.active}});
  }
  return json{{"vvcs", arr}};
}

std::vector<grid::VvcRecord> vvc_registry_from(const json& j) {
  std::vector<grid::VvcRecord> out;
  for (const auto& e : j.at("vvcs")) {
    grid::VvcRecord v;
    v.bus = e.at("bus").get<int>();
    v.q_available = e.at("q_available").get<double>();
    v.q_injected = e.at("q_injected").get<double>();
    v.active = e.at("active").get<bool>();
    out.push_back(v);
  }
  return out;
}

json vsi_report_json(const dvs::VsiReport& r) {
  json entries = json::array();
  for (const auto& [bus, e] : r.entries) {
    entries.push_back(json{{"bus", bus},
                           {"vsi", e.vsi},
                           {"p_load", e.p_load},
                           {"q_load", e.q_load},
                           {"s_load", e.s_load},
                           {"p_max", e.p_max},
                           {"q_max", e.q_max},
                           {"s_max", e.s_max}});
  }
  json sorted = json::array();
  for (BusId b : r.sorted_buses) sorted.push_back(b);
  return json{{"group_id", r.group_id},
              {"entries", entries},
              {"sorted_buses", sorted},
              {"min_vsi", r.min_vsi},
              {"weak_bus", r.weak_bus},
              {"below_threshold", r.below_threshold}};
}

dvs::VsiReport vsi_report_from(const json& j) {
  dvs::VsiReport r;
  r.group_id = j.at("group_id").get<int>();
  for (const auto& e : j.at("entries")) {
    dvs::VsiEntry entry;
    entry.vsi = e.at("vsi").get<double>();
    entry.p_load = e.at("p_load").get<double>();
    entry.q_load = e.at("q_load").get<double>();
    entry.s_load = e.at("s_load").get<double>();
    entry.p_max = e.at("p_max").get<double>();
    entry.q_max = e.at("q_max").get<double>();
    entry.s_max = e.at("s_max").get<double>();
    r.entries[e.at("bus").get<int>()] = entry;
  }
  for (const auto& b : j.at("sorted_buses")) r.sorted_buses.push_back(b.get<int>());
  r.min_vsi = j.at("min_vsi").get<double>();
  r.weak_bus = j.at("weak_bus").get<int>();
  r.below_threshold = j.at("below_threshold").get<bool>();
  return r;
}

json control_action_json(const dvs::ControlAction& a) {
  return json{{"group_id", a.group_id},
              {"weak_bus", a.weak_bus},
              {"vvc_bus", a.vvc_bus},
              {"q_req", a.q_req},
              {"status", dvs::to_string(a.status)}};
}

dvs::ControlAction control_action_from(const json& j) {
  dvs::ControlAction a;
  a.group_id = j.at("group_id").get<int>();
  a.weak_bus = j.at("weak_bus").get<int>();
  a.vvc_bus = j.at("vvc_bus").get<int>();
  a.q_req = j.at("q_req").get<double>();
  std::string s = j.at("status").get<std::string>();
  if (s == "applied") {
    a.status = dvs::ActionStatus::Applied;
  } else if (s == "insufficient-local-resources") {
    a.status = dvs::ActionStatus::InsufficientLocalResources;
  } else {
    a.status = dvs::ActionStatus::NoActionNeeded;
  }
  return a;
}

std::string group_key(GroupId g) { return "group/" + std::to_string(g); }
std::string group_detail_key(GroupId g) { return "group/" + std::to_string(g) + "/detail"; }
std::string vvc_key(GroupId g) { return "vvc/" + std::to_string(g); }
std::string vsi_key(GroupId g) { return "vsi/" + std::to_string(g); }

std::string action_key(GroupId g, std::uint64_t seq) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "action/%d/%08llu", g, static_cast<unsigned long long>(seq));
  return buf;
}

std::string topology_group_key(GroupId g) { return "topology/group/" + std::to_string(g); }

std::string topology_combo_key(GroupId a, GroupId b) {
  GroupId lo = std::min(a, b), hi = std::max(a, b);
  return "topology/combo/" + std::to_string(lo) + "+" + std::to_string(hi);
}

std::string merge_flag_key(GroupId requesting) {
  return "merge/" + std::to_string(requesting);
}

}  // namespace dvsim::records
