#include "dvsim/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "dvsim/records.hpp"

namespace dvsim::sim {

namespace fs = std::filesystem;
using namespace records;

// ---- configuration ----------------------------------------------------------

ScenarioConfig ScenarioConfig::from_json(const json& j, const fs::path& base_dir) {
  try {
    return from_json_checked(j, base_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario: malformed field: ") + e.what());
  }
}

ScenarioConfig ScenarioConfig::from_json_checked(const json& j, const fs::path& base_dir) {
  ScenarioConfig cfg;
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path.string() : (base_dir / path).string();
  };
  cfg.case_path = resolve(j.at("case").get<std::string>());
  cfg.grouping_path = resolve(j.at("grouping").get<std::string>());
  cfg.network_path = resolve(j.at("network").get<std::string>());
  cfg.vsi_threshold = j.value("vsi_threshold", cfg.vsi_threshold);
  if (j.contains("group_thresholds")) {
    for (const auto& [key, value] : j.at("group_thresholds").items()) {
      cfg.group_thresholds[std::stoi(key)] = value.get<double>();
    }
  }
  cfg.v_req = j.value("v_req", cfg.v_req);
  cfg.pmu_period_ms = j.value("pmu_period_ms", cfg.pmu_period_ms);
  cfg.duration_ms = j.value("duration_ms", cfg.duration_ms);
  cfg.max_rounds = j.value("max_rounds", cfg.max_rounds);
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    cfg.solver.tolerance = s.value("tolerance", cfg.solver.tolerance);
    cfg.solver.max_iterations = s.value("max_iterations", cfg.solver.max_iterations);
    cfg.solver.flat_start = s.value("flat_start", cfg.solver.flat_start);
  }
  for (const auto& d : j.value("disturbances", json::array())) {
    Disturbance dist;
    dist.at_ms = d.at("at_ms").get<double>();
    for (const auto& b : d.at("buses")) dist.buses.insert(b.get<int>());
    dist.factor = d.at("factor").get<double>();
    if (dist.at_ms > cfg.duration_ms) {
      throw ConfigError("scenario: disturbance at " + std::to_string(dist.at_ms) +
                        " ms is outside the duration");
    }
    cfg.disturbances.push_back(dist);
  }
  for (const auto& v : j.value("vvc_overrides", json::array())) {
    cfg.vvc_overrides.push_back({v.at("bus").get<int>(), v.at("q_available").get<double>()});
  }
  cfg.seed = j.value("seed", cfg.seed);
  if (!(cfg.pmu_period_ms > 0)) throw ConfigError("scenario: pmu_period_ms must be positive");
  return cfg;
}

ScenarioConfig ScenarioConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("scenario " + path + ": " + e.what());
  }
  return from_json(j, fs::path(path).parent_path());
}

// ---- contracts ---------------------------------------------------------------

namespace {

grid::VirtualizedGroup vgroup_of(const dvs::GroupData& gd) {
  grid::VirtualizedGroup vg;
  vg.group = gd.group;
  vg.virtual_buses = gd.virtual_buses;
  vg.classification = gd.classification;
  return vg;
}

/// Monitoring contract: ComputeVSI (optionally chaining into the local
/// controller), group record installation, merge/split state transitions.
void vsi_contract(ledger::TxContext& ctx, const std::string& op, const json& args) {
  if (op == "InitGroup") {
    const GroupId gid = args.at("group_light").at("id").get<int>();
    ctx.put_state(group_key(gid), args.at("group_light").dump());
    ctx.put_state(group_detail_key(gid), args.at("group_detail").dump());
    ctx.put_state(vvc_key(gid), args.at("vvcs").dump());
    ctx.add_cost(1.0);
    return;
  }

  if (op == "ComputeVSI") {
    pf::PmuSnapshot snap = snapshot_from(args.at("snapshot"));
    const GroupId gid = snap.group_id;
    const bool bench_mode = args.value("mode", "scenario") == std::string("bench");
    const bool control = args.value("control", true);

    auto stored = ctx.get_state(group_key(gid));
    if (!stored) {
      throw ControlError("ComputeVSI: no group record for group " + std::to_string(gid));
    }
    json jlight = json::parse(*stored);

    // The monitoring path only touches the light record; the detail record
    // (admittance matrix, PI, edges) is read on the control path.
    dvs::GroupData shallow = group_light_from(jlight);

    dvs::VsiReport report = dvs::compute_vsi(snap, shallow);
    ctx.add_cost(static_cast<double>(snap.v_phasor.size()));

    json record{{"report", vsi_report_json(report)}, {"timestamp", snap.timestamp}};

    if (report.below_threshold && control) {
      auto detail_stored = ctx.get_state(group_detail_key(gid));
      if (!detail_stored) {
        throw ControlError("ComputeVSI: no detail record for group " + std::to_string(gid));
      }
      dvs::GroupData gd = group_from_parts(jlight, json::parse(*detail_stored));
      auto vvc_stored = ctx.get_state(vvc_key(gid));
      if (!vvc_stored) {
        throw ControlError("ComputeVSI: no VVC registry for group " + std::to_string(gid));
      }
      std::vector<grid::VvcRecord> registry = vvc_registry_from(json::parse(*vvc_stored));

      std::map<BusId, Complex> voltages = snap.v_phasor;
      for (const auto& vb : gd.virtual_buses) {
        voltages[vb.bus_id] = snap.tie_flows.at(vb.branch_id).v_mid;
      }
      pf::DqDvMatrix dqdv = pf::jacobian_dqdv_at(gd.y_group, voltages);
      const double n = static_cast<double>(gd.y_group.order());
      ctx.add_cost(0.05 * n * n + 2.0);  // live Jacobian dominates the control path

      dvs::ControllerInputs inputs;
      inputs.pi = &gd.pi;
      inputs.dqdv = &dqdv;
      inputs.edges = &gd.edges;
      inputs.v_req = gd.v_req;
      inputs.v_weak = std::abs(snap.v_phasor.at(report.weak_bus));

      dvs::ControlAction action = dvs::local_controller(report, registry, inputs);
      record["action"] = control_action_json(action);

      if (!bench_mode && action.status == dvs::ActionStatus::Applied) {
        for (auto& v : registry) {
          if (v.bus == action.vvc_bus && v.active && v.q_available >= action.q_req) {
            v.q_available -= action.q_req;
            v.q_injected += action.q_req;
            break;
          }
        }
        ctx.put_state(vvc_key(gid), vvc_registry_json(registry).dump());
      }
    }

    std::string key = bench_mode
                          ? vsi_key(gid) + "/" + std::to_string(args.value("seq", 0))
                          : vsi_key(gid);
    ctx.put_state(key, record.dump());
    return;
  }

  if (op == "ApplyMerge") {
    const GroupId merged_id = args.at("merged_light").at("id").get<int>();
    const GroupId req = args.at("requesting").get<int>();
    const GroupId donor = args.at("donor").get<int>();
    ctx.put_state(group_key(merged_id), args.at("merged_light").dump());
    ctx.put_state(group_detail_key(merged_id), args.at("merged_detail").dump());
    ctx.put_state(vvc_key(merged_id), args.at("merged_vvcs").dump());
    for (GroupId g : {req, donor}) {
      auto stored = ctx.get_state(group_key(g));
      if (!stored) continue;  // the other constituent lives on another shard
      json jg = json::parse(*stored);
      jg["merged_into"] = merged_id;
      ctx.put_state(group_key(g), jg.dump());
    }
    ctx.add_cost(1.0);
    return;
  }

  if (op == "Split") {
    const GroupId merged_id = args.at("merged_id").get<int>();
    const GroupId req = args.at("requesting").get<int>();
    const GroupId donor = args.at("donor").get<int>();

    auto merged_stored = ctx.get_state(group_key(merged_id));
    auto vvc_stored = ctx.get_state(vvc_key(merged_id));
    if (!merged_stored || !vvc_stored) {
      throw ControlError("Split: merged group state missing");
    }
    std::vector<grid::VvcRecord> merged_vvcs = vvc_registry_from(json::parse(*vvc_stored));

    auto restore = [&](GroupId g) -> bool {
      auto stored = ctx.get_state(group_key(g));
      if (!stored) return false;
      json jg = json::parse(*stored);
      jg.erase("merged_into");
      ctx.put_state(group_key(g), jg.dump());
      dvs::GroupData gd = group_light_from(jg);
      std::vector<grid::VvcRecord> part;
      for (const auto& v : merged_vvcs) {
        if (gd.group.bus_ids.count(v.bus)) part.push_back(v);
      }
      ctx.put_state(vvc_key(g), vvc_registry_json(part).dump());
      return true;
    };

    restore(req);
    if (!restore(donor)) {
      // Donor lives on another channel; leave its share for the aggregator.
      auto req_stored = ctx.get_state(group_key(req));
      std::set<BusId> req_buses;
      if (req_stored) {
        req_buses = group_light_from(json::parse(*req_stored)).group.bus_ids;
      }
      std::vector<grid::VvcRecord> part;
      for (const auto& v : merged_vvcs) {
        if (!req_buses.count(v.bus)) part.push_back(v);
      }
      ctx.put_state("split-residual/" + std::to_string(merged_id),
                    vvc_registry_json(part).dump());
    }
    ctx.add_cost(1.0);
    return;
  }

  if (op == "SetMergedFlag") {
    const GroupId g = args.at("group").get<int>();
    auto stored = ctx.get_state(group_key(g));
    if (!stored) throw ControlError("SetMergedFlag: no group record");
    json jg = json::parse(*stored);
    if (args.contains("merged_into") && !args.at("merged_into").is_null()) {
      jg["merged_into"] = args.at("merged_into").get<int>();
    } else {
      jg.erase("merged_into");
    }
    ctx.put_state(group_key(g), jg.dump());
    ctx.add_cost(1.0);
    return;
  }

  if (op == "UpdateVvc") {
    const GroupId g = args.at("group").get<int>();
    ctx.put_state(vvc_key(g), args.at("vvcs").dump());
    ctx.add_cost(1.0);
    return;
  }

  throw ConfigError("VSIContract: unknown operation " + op);
}

/// Mainchain contract: topology records, merge arbitration, split records.
void global_contract(ledger::TxContext& ctx, const std::string& op, const json& args) {
  if (op == "RecordTopology") {
    ctx.put_state(args.at("key").get<std::string>(), args.at("data").dump());
    ctx.add_cost(1.0);
    return;
  }

  if (op == "Merge") {
    const GroupId requesting = args.at("requesting").get<int>();
    dvs::GroupRegistry registry;
    for (const auto& e : args.at("registry")) {
      const GroupId g = e.at("group").get<int>();
      auto stored = ctx.get_state(topology_group_key(g));
      if (!stored) {
        throw ControlError("Merge: no topology record for group " + std::to_string(g));
      }
      dvs::GroupStanding standing;
      standing.group = group_data_from(json::parse(*stored)).group;
      standing.q_available_total = e.at("q_available_total").get<double>();
      registry[g] = standing;
    }
    json result;
    try {
      grid::Group merged = dvs::global_controller(requesting, registry);
      result = json{{"status", "ok"},
                    {"requesting", merged.merged_from->first},
                    {"donor", merged.merged_from->second},
                    {"merged_id", merged.id},
                    {"merged_group", group_json(merged)}};
    } catch (const ControlError& e) {
      result = json{{"status", "error"}, {"error", e.what()}};
    }
    ctx.put_state(merge_flag_key(requesting), result.dump());
    ctx.add_cost(2.0);
    return;
  }

  if (op == "RecordSplit") {
    const GroupId requesting = args.at("requesting").get<int>();
    auto stored = ctx.get_state(merge_flag_key(requesting));
    if (!stored) throw ControlError("RecordSplit: no merge record");
    json rec = json::parse(*stored);
    rec["status"] = "split";
    ctx.put_state(merge_flag_key(requesting), rec.dump());
    ctx.add_cost(1.0);
    return;
  }

  throw ConfigError("GlobalContract: unknown operation " + op);
}

}  // namespace

std::unique_ptr<ledger::Network> bootstrap_network(const ledger::NetworkConfig& cfg) {
  auto net = std::make_unique<ledger::Network>(cfg);
  net->deploy_contract(ledger::kMainchainId, kGlobalContract, global_contract);
  std::set<std::string> vsi_channels;
  for (const auto& [gid, channel] : cfg.group_channel) vsi_channels.insert(channel);
  for (const auto& channel : vsi_channels) {
    net->deploy_contract(channel, kVsiContract, vsi_contract);
  }
  return net;
}

// ---- initialization ----------------------------------------------------------

namespace {

struct BuiltGroup {
  dvs::GroupData data;
  grid::VirtualizedGroup vg;
};

BuiltGroup build_group_data(const grid::GridCase& c, const pf::PowerFlowSolution& sol,
                            const grid::Group& g, double threshold, double v_req) {
  BuiltGroup out;
  auto flows = pf::tie_flows_for_group(c, g, sol);
  out.vg = grid::virtualize_ties(c, g, flows);

  dvs::GroupData& gd = out.data;
  gd.id = g.id;
  gd.group = g;
  gd.classification = out.vg.classification;
  gd.virtual_buses = out.vg.virtual_buses;
  gd.y_group = pf::build_group_admittance(c, out.vg);

  pf::PartitionedY part = pf::partition_admittance(gd.y_group, gd.classification);
  Eigen::MatrixXcd z = dvs::thevenin_impedance(part);
  const auto& load_order = part.class_order.at(grid::BusClass::Load);
  for (std::size_t i = 0; i < load_order.size(); ++i) {
    if (g.bus_ids.count(load_order[i])) {
      gd.z_th[load_order[i]] = z(i, i);
    }
  }

  gd.pi = dvs::priority_index(gd.y_group, out.vg);

  for (const auto& br : c.branches) {
    if (!br.status) continue;
    if (g.bus_ids.count(br.from_bus) && g.bus_ids.count(br.to_bus)) {
      gd.edges.push_back({br.from_bus, br.to_bus, std::abs(Complex(br.r, br.x))});
    }
  }
  gd.vsi_threshold = threshold;
  gd.v_req = v_req;
  return out;
}

std::vector<grid::VvcRecord> vvcs_of_group(const grid::GridCase& c,
                                           const std::set<BusId>& buses) {
  std::vector<grid::VvcRecord> out;
  for (const auto& v : c.vvcs) {
    if (buses.count(v.bus)) out.push_back(v);
  }
  return out;
}

}  // namespace

int resubmit_init(System& sys) {
  std::vector<std::string> ids;

  for (const auto& [gid, gd] : sys.group_data) {
    ids.push_back(sys.net->submit_tx(
        ledger::kMainchainId, kGlobalContract, "RecordTopology",
        json{{"key", topology_group_key(gid)}, {"data", group_data_json(gd)}}));
  }
  for (const auto& [mid, gd] : sys.combo_data) {
    auto [a, b] = *gd.group.merged_from;
    ids.push_back(sys.net->submit_tx(
        ledger::kMainchainId, kGlobalContract, "RecordTopology",
        json{{"key", topology_combo_key(a, b)}, {"data", group_data_json(gd)}}));
  }
  for (const auto& [gid, gd] : sys.group_data) {
    json vvcs = vvc_registry_json(vvcs_of_group(sys.base_case, gd.group.bus_ids));
    ids.push_back(sys.net->submit_tx(sys.group_channel.at(gid), kVsiContract, "InitGroup",
                                     json{{"group_light", group_light_json(gd)},
                                          {"group_detail", group_detail_json(gd)},
                                          {"vvcs", vvcs}}));
  }
  sys.net->run_until_idle();

  for (const auto& id : ids) {
    const ledger::Transaction* tx = sys.net->find_tx(id);
    if (!tx || tx->status != ledger::TxStatus::Valid) {
      throw std::runtime_error("initialization transaction " + id + " did not commit");
    }
  }
  return static_cast<int>(ids.size());
}

System cmd_init(const ScenarioConfig& scenario) {
  System sys;
  sys.scenario = scenario;
  sys.base_case = grid::load_case_file(scenario.case_path);

  for (const auto& ov : scenario.vvc_overrides) {
    bool found = false;
    for (auto& v : sys.base_case.vvcs) {
      if (v.bus == ov.bus) {
        v.q_available = ov.q_available / sys.base_case.base_mva;  // MVAr, like the case file
        found = true;
        break;
      }
    }
    if (!found) {
      throw ConfigError("scenario: vvc_override for bus " + std::to_string(ov.bus) +
                        " has no VVC record");
    }
  }

  auto violations = grid::validate_case(sys.base_case);
  if (!violations.empty()) {
    std::string msg = "case validation failed:";
    for (const auto& v : violations) msg += " [" + v.rule + " @ " + v.record + "]";
    throw ConfigError(msg);
  }

  auto grouping = grid::load_grouping_file(scenario.grouping_path);
  auto gres = grid::apply_grouping(sys.base_case, grouping);
  sys.grouping_diagnostics = gres.diagnostics;
  for (const auto& g : gres.groups) sys.groups[g.id] = g;

  sys.net_config = ledger::NetworkConfig::load_file(scenario.network_path);
  for (const auto& [gid, g] : sys.groups) {
    auto it = sys.net_config.group_channel.find(gid);
    if (it == sys.net_config.group_channel.end()) {
      throw ConfigError("network config: group " + std::to_string(gid) +
                        " is not assigned to any channel");
    }
    sys.group_channel[gid] = it->second;
  }

  pf::PowerFlowSolution sol = pf::solve_powerflow(sys.base_case, scenario.solver);
  if (!sol.converged) {
    throw NumericsError("cmd_init: base-case power flow did not converge");
  }

  auto threshold_of = [&](GroupId gid) {
    auto it = scenario.group_thresholds.find(gid);
    return it != scenario.group_thresholds.end() ? it->second : scenario.vsi_threshold;
  };
  for (const auto& [gid, g] : sys.groups) {
    sys.group_data[gid] =
        build_group_data(sys.base_case, sol, g, threshold_of(gid), scenario.v_req).data;
  }

  // Combination records for every tie-adjacent pair.
  for (auto a = sys.groups.begin(); a != sys.groups.end(); ++a) {
    for (auto b = std::next(a); b != sys.groups.end(); ++b) {
      bool adjacent = false;
      for (BranchId t : a->second.tie_branches) {
        if (b->second.tie_branches.count(t)) {
          adjacent = true;
          break;
        }
      }
      if (!adjacent) continue;
      grid::Group merged;
      merged.id = dvs::merged_group_id(a->first, b->first);
      merged.bus_ids = a->second.bus_ids;
      merged.bus_ids.insert(b->second.bus_ids.begin(), b->second.bus_ids.end());
      for (BranchId t : a->second.tie_branches) {
        if (!b->second.tie_branches.count(t)) merged.tie_branches.insert(t);
      }
      for (BranchId t : b->second.tie_branches) {
        if (!a->second.tie_branches.count(t)) merged.tie_branches.insert(t);
      }
      merged.merged_from = {a->first, b->first};
      double combo_thr = std::min(threshold_of(a->first), threshold_of(b->first));
      sys.combo_data[merged.id] =
          build_group_data(sys.base_case, sol, merged, combo_thr, scenario.v_req).data;
    }
  }

  sys.net = bootstrap_network(sys.net_config);
  sys.init_tx_count = resubmit_init(sys);
  return sys;
}

// ---- scenario loop -----------------------------------------------------------

std::string ScenarioResult::log_jsonl() const {
  std::ostringstream out;
  for (const auto& e : log) out << e.dump() << "\n";
  return out.str();
}

std::vector<json> ScenarioResult::events(const std::string& kind) const {
  std::vector<json> out;
  for (const auto& e : log) {
    if (e.at("kind") == kind) out.push_back(e);
  }
  return out;
}

namespace {

struct MergedStream {
  GroupId requesting = 0;
  GroupId donor = 0;
  std::string channel;
};

double total_available(const std::vector<grid::VvcRecord>& vvcs) {
  double total = 0.0;
  for (const auto& v : vvcs) {
    if (v.active) total += v.q_available;
  }
  return total;
}

}  // namespace

ScenarioResult run_scenario(System& sys, std::optional<double> wall_clock_scale) {
  ScenarioResult result;
  grid::GridCase working = sys.base_case;
  ledger::Network& net = *sys.net;

  std::set<GroupId> streams;
  for (const auto& [gid, g] : sys.groups) streams.insert(gid);
  std::map<GroupId, MergedStream> merged_streams;

  std::vector<bool> disturbance_done(sys.scenario.disturbances.size(), false);
  int rounds_since_disturbance = 0;
  bool rounds_exhausted_logged = false;

  auto log_event = [&](json e) { result.log.push_back(std::move(e)); };

  auto query_vvcs = [&](GroupId gid, const std::string& channel) {
    auto stored = net.query_state(channel, vvc_key(gid));
    if (!stored) throw std::runtime_error("missing VVC registry for group " + std::to_string(gid));
    return vvc_registry_from(json::parse(*stored));
  };

  auto channel_of = [&](GroupId gid) -> std::string {
    auto it = merged_streams.find(gid);
    if (it != merged_streams.end()) return it->second.channel;
    return sys.group_channel.at(gid);
  };

  const auto wall_start = std::chrono::steady_clock::now();

  for (double t_ms = 0.0; t_ms <= sys.scenario.duration_ms + 1e-9;
       t_ms += sys.scenario.pmu_period_ms) {
    const LogicalTime t = millis_to_time(t_ms);

    if (wall_clock_scale) {
      auto deadline = wall_start + std::chrono::microseconds(static_cast<std::int64_t>(
                                       t_ms * 1000.0 / *wall_clock_scale));
      std::this_thread::sleep_until(deadline);
    }

    for (std::size_t i = 0; i < sys.scenario.disturbances.size(); ++i) {
      const auto& d = sys.scenario.disturbances[i];
      if (!disturbance_done[i] && d.at_ms <= t_ms) {
        working = pf::scale_load(working, d.buses, d.factor);
        disturbance_done[i] = true;
        rounds_since_disturbance = 0;
        rounds_exhausted_logged = false;
        json buses = json::array();
        for (BusId b : d.buses) buses.push_back(b);
        log_event({{"t_ms", t_ms}, {"kind", "disturbance"}, {"buses", buses},
                   {"factor", d.factor}});
      }
    }

    pf::PowerFlowSolution sol = pf::solve_powerflow(working, sys.scenario.solver);
    if (!sol.converged) {
      result.collapsed = true;
      result.collapse_at_ms = t_ms;
      log_event({{"t_ms", t_ms}, {"kind", "collapse"}, {"mismatch", sol.mismatch}});
      break;
    }

    std::vector<std::pair<GroupId, std::string>> submitted;
    std::map<GroupId, pf::PmuSnapshot> period_snaps;
    for (GroupId gid : streams) {
      const dvs::GroupData& gd = merged_streams.count(gid) ? sys.combo_data.at(gid)
                                                           : sys.group_data.at(gid);
      grid::VirtualizedGroup vg = vgroup_of(gd);
      pf::PmuSnapshot snap = pf::make_snapshot(working, sol, vg, t);
      json args{{"snapshot", snapshot_json(snap)},
                {"mode", "scenario"},
                {"control", rounds_since_disturbance < sys.scenario.max_rounds}};
      submitted.push_back({gid, net.submit_tx(channel_of(gid), kVsiContract, "ComputeVSI",
                                              std::move(args))});
      period_snaps[gid] = std::move(snap);
    }
    net.run_until_idle();

    for (const auto& [gid, txid] : submitted) {
      const ledger::Transaction* tx = net.find_tx(txid);
      if (!tx || tx->status != ledger::TxStatus::Valid) {
        log_event({{"t_ms", t_ms}, {"kind", "tx-failed"}, {"group", gid}, {"tx", txid}});
        continue;
      }
      const std::string channel = channel_of(gid);
      auto stored = net.query_state(channel, vsi_key(gid));
      if (!stored) continue;
      json record = json::parse(*stored);
      dvs::VsiReport report = vsi_report_from(record.at("report"));

      double v_weak = 0.0;
      auto vit = period_snaps.at(gid).v_phasor.find(report.weak_bus);
      if (vit != period_snaps.at(gid).v_phasor.end()) v_weak = std::abs(vit->second);
      log_event({{"t_ms", t_ms},
                 {"kind", "vsi"},
                 {"group", gid},
                 {"min_vsi", report.min_vsi},
                 {"weak_bus", report.weak_bus},
                 {"v_weak", v_weak},
                 {"below_threshold", report.below_threshold},
                 {"tx", txid}});

      bool is_merged = merged_streams.count(gid) > 0;

      if (record.contains("action")) {
        dvs::ControlAction action = control_action_from(record.at("action"));
        log_event({{"t_ms", t_ms}, {"kind", "action"}, {"group", gid},
                   {"action", record.at("action")}, {"tx", txid}});

        if (action.status == dvs::ActionStatus::Applied) {
          for (auto& rec : working.buses) {
            if (rec.id == action.vvc_bus) {
              rec.q_demand -= action.q_req;  // injection reduces net load
              break;
            }
          }
          rounds_since_disturbance += 1;
          if (rounds_since_disturbance >= sys.scenario.max_rounds && !rounds_exhausted_logged) {
            rounds_exhausted_logged = true;
            log_event({{"t_ms", t_ms}, {"kind", "rounds-exhausted"}, {"group", gid}});
          }
        } else if (action.status == dvs::ActionStatus::InsufficientLocalResources) {
          if (is_merged) {
            log_event({{"t_ms", t_ms}, {"kind", "escalation-failed"}, {"group", gid},
                       {"reason", "merged group exhausted"}});
          } else {
            // Escalate: mainchain merge, then install the combination data on
            // the requesting group's channel.
            json registry = json::array();
            for (GroupId g : streams) {
              if (merged_streams.count(g)) continue;
              registry.push_back(json{
                  {"group", g},
                  {"q_available_total", total_available(query_vvcs(g, channel_of(g)))}});
            }
            std::string merge_tx = net.submit_tx(
                ledger::kMainchainId, kGlobalContract, "Merge",
                json{{"requesting", gid}, {"registry", registry}});
            net.run_until_idle();

            auto merge_stored = net.query_state(ledger::kMainchainId, merge_flag_key(gid));
            json merge_rec = json::parse(*merge_stored);
            if (merge_rec.at("status") != "ok") {
              log_event({{"t_ms", t_ms}, {"kind", "escalation-failed"}, {"group", gid},
                         {"reason", merge_rec.value("error", std::string("merge failed"))}});
              continue;
            }
            const GroupId donor = merge_rec.at("donor").get<int>();
            const GroupId merged_id = merge_rec.at("merged_id").get<int>();

            auto combo_stored = net.query_state(ledger::kMainchainId,
                                                topology_combo_key(gid, donor));
            if (!combo_stored) {
              throw std::runtime_error("no combination record for groups " +
                                       std::to_string(gid) + "," + std::to_string(donor));
            }
            dvs::GroupData combo_gd = group_data_from(json::parse(*combo_stored));

            auto req_vvcs = query_vvcs(gid, channel_of(gid));
            auto donor_vvcs = query_vvcs(donor, channel_of(donor));
            std::vector<grid::VvcRecord> merged_vvcs = req_vvcs;
            merged_vvcs.insert(merged_vvcs.end(), donor_vvcs.begin(), donor_vvcs.end());
            std::sort(merged_vvcs.begin(), merged_vvcs.end(),
                      [](const grid::VvcRecord& a, const grid::VvcRecord& b) {
                        return a.bus < b.bus;
                      });

            const std::string req_channel = channel_of(gid);
            const std::string donor_channel = channel_of(donor);
            net.submit_tx(req_channel, kVsiContract, "ApplyMerge",
                          json{{"merged_light", group_light_json(combo_gd)},
                               {"merged_detail", group_detail_json(combo_gd)},
                               {"merged_vvcs", vvc_registry_json(merged_vvcs)},
                               {"requesting", gid},
                               {"donor", donor}});
            if (donor_channel != req_channel) {
              net.submit_tx(donor_channel, kVsiContract, "SetMergedFlag",
                            json{{"group", donor}, {"merged_into", merged_id}});
            }
            net.run_until_idle();

            streams.erase(gid);
            streams.erase(donor);
            streams.insert(merged_id);
            merged_streams[merged_id] = {gid, donor, req_channel};
            log_event({{"t_ms", t_ms}, {"kind", "merge"}, {"requesting", gid},
                       {"donor", donor}, {"merged_id", merged_id}, {"tx", merge_tx}});
          }
        }
      } else if (is_merged && !report.below_threshold) {
        // Stable again: split back into the original groups.
        const MergedStream ms = merged_streams.at(gid);
        net.submit_tx(ms.channel, kVsiContract, "Split",
                      json{{"merged_id", gid}, {"requesting", ms.requesting},
                           {"donor", ms.donor}});
        net.run_until_idle();

        const std::string donor_channel = sys.group_channel.at(ms.donor);
        if (donor_channel != ms.channel) {
          auto residual = net.query_state(ms.channel,
                                          "split-residual/" + std::to_string(gid));
          net.submit_tx(donor_channel, kVsiContract, "UpdateVvc",
                        json{{"group", ms.donor}, {"vvcs", json::parse(*residual)}});
          net.submit_tx(donor_channel, kVsiContract, "SetMergedFlag",
                        json{{"group", ms.donor}, {"merged_into", nullptr}});
        }
        net.submit_tx(ledger::kMainchainId, kGlobalContract, "RecordSplit",
                      json{{"requesting", ms.requesting}});
        net.run_until_idle();

        streams.erase(gid);
        streams.insert(ms.requesting);
        streams.insert(ms.donor);
        merged_streams.erase(gid);
        log_event({{"t_ms", t_ms}, {"kind", "split"}, {"merged_id", gid},
                   {"requesting", ms.requesting}, {"donor", ms.donor}});
      }
    }
  }

  result.ledger_jsonl = net.export_jsonl();
  result.final_chain_hash = net.final_chain_hash();
  return result;
}

ScenarioResult cmd_simulate(const ScenarioConfig& scenario,
                            std::optional<double> wall_clock_scale) {
  System sys = cmd_init(scenario);
  return run_scenario(sys, wall_clock_scale);
}

// ---- benchmarks ---------------------------------------------------------------

BenchSuiteConfig BenchSuiteConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open bench suite: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("bench suite " + path + ": " + e.what());
  }
  fs::path base_dir = fs::path(path).parent_path();

  try {
    return parse_suite(j, base_dir);
  } catch (const json::exception& e) {
    throw ConfigError("bench suite " + path + ": malformed field: " + e.what());
  }
}

BenchSuiteConfig BenchSuiteConfig::parse_suite(const json& j, const fs::path& base_dir) {
  BenchSuiteConfig cfg;
  cfg.scenario = ScenarioConfig::from_json(j.at("scenario"), base_dir);
  for (const auto& m : j.at("models")) {
    fs::path p(m.at("network").get<std::string>());
    std::string full = p.is_absolute() ? p.string() : (base_dir / p).string();
    cfg.models.push_back({m.at("name").get<std::string>(), full});
  }
  for (const auto& v : j.value("send_rates", json::array())) cfg.send_rates.push_back(v);
  for (const auto& v : j.value("tx_counts", json::array())) cfg.tx_counts.push_back(v);
  for (const auto& v : j.value("worker_counts", json::array())) cfg.worker_counts.push_back(v);
  if (j.contains("base")) {
    const auto& b = j.at("base");
    cfg.base.workers = b.value("workers", cfg.base.workers);
    cfg.base.tx_count = b.value("tx_count", cfg.base.tx_count);
    cfg.base.send_rate = b.value("send_rate", cfg.base.send_rate);
    cfg.base.mix = b.value("mix", cfg.base.mix);
    cfg.base.seed = b.value("seed", cfg.base.seed);
  }
  for (const auto& b : j.value("stress_buses", json::array())) cfg.stress_buses.insert(b.get<int>());
  cfg.stress_factor = j.value("stress_factor", cfg.stress_factor);
  return cfg;
}

std::map<std::string, bench::ChannelPayload> bench_payloads(const System& sys,
                                                            const std::set<BusId>& stress_buses,
                                                            double stress_factor) {
  pf::PowerFlowSolution base_sol = pf::solve_powerflow(sys.base_case, sys.scenario.solver);
  if (!base_sol.converged) throw NumericsError("bench_payloads: base case did not converge");

  std::set<BusId> buses = stress_buses;
  if (buses.empty()) {
    for (const auto& b : sys.base_case.buses) {
      if (b.p_demand != 0.0 || b.q_demand != 0.0) buses.insert(b.id);
    }
  }
  grid::GridCase stressed = pf::scale_load(sys.base_case, buses, stress_factor);
  pf::PowerFlowSolution stress_sol = pf::solve_powerflow(stressed, sys.scenario.solver);
  if (!stress_sol.converged) {
    throw NumericsError("bench_payloads: stressed case did not converge");
  }

  // One payload pair per channel, generated from the channel's first group.
  std::map<std::string, bench::ChannelPayload> payloads;
  for (const auto& [gid, channel] : sys.group_channel) {
    if (payloads.count(channel)) continue;
    const dvs::GroupData& gd = sys.group_data.at(gid);
    grid::VirtualizedGroup vg = vgroup_of(gd);

    bench::ChannelPayload p;
    p.contract = kVsiContract;
    p.op = "ComputeVSI";
    p.normal = json{{"snapshot", snapshot_json(pf::make_snapshot(sys.base_case, base_sol, vg, 0))},
                    {"mode", "bench"},
                    {"control", true}};
    p.stressed = json{{"snapshot", snapshot_json(pf::make_snapshot(stressed, stress_sol, vg, 0))},
                      {"mode", "bench"},
                      {"control", true}};
    payloads[channel] = std::move(p);
  }
  return payloads;
}

json BenchSuiteResult::to_json() const {
  json out = json::object();
  for (const auto& [axis, models] : series) {
    json jm = json::object();
    for (const auto& [model, pts] : models) {
      json arr = json::array();
      for (const auto& p : pts) {
        json e = p.report.to_json();
        e["x"] = p.x;
        arr.push_back(e);
      }
      jm[model] = arr;
    }
    out[axis] = jm;
  }
  return out;
}

BenchSuiteResult cmd_bench(const BenchSuiteConfig& suite) {
  std::vector<bench::NetworkModel> models;
  for (const auto& m : suite.models) {
    ScenarioConfig sc = suite.scenario;
    sc.network_path = m.network_path;

    System probe = cmd_init(sc);
    bench::NetworkModel model;
    model.name = m.name;
    std::set<std::string> channels;
    for (const auto& [gid, ch] : probe.group_channel) channels.insert(ch);
    model.target_channels.assign(channels.begin(), channels.end());
    model.payloads = bench_payloads(probe, suite.stress_buses, suite.stress_factor);
    model.make = [sc]() {
      System fresh = cmd_init(sc);
      return std::move(fresh.net);
    };
    models.push_back(std::move(model));
  }

  BenchSuiteResult result;
  if (!suite.send_rates.empty()) {
    result.series[bench::to_string(bench::SweepAxis::SendRate)] =
        bench::sweep(bench::SweepAxis::SendRate, suite.send_rates, suite.base, models);
  }
  if (!suite.tx_counts.empty()) {
    result.series[bench::to_string(bench::SweepAxis::TxCount)] =
        bench::sweep(bench::SweepAxis::TxCount, suite.tx_counts, suite.base, models);
  }
  if (!suite.worker_counts.empty()) {
    result.series[bench::to_string(bench::SweepAxis::Workers)] =
        bench::sweep(bench::SweepAxis::Workers, suite.worker_counts, suite.base, models);
  }
  return result;
}

std::vector<std::string> write_bench_reports(const BenchSuiteResult& result,
                                             const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  for (const auto& [axis, models] : result.series) {
    for (const auto& [model, series] : models) {
      std::string name = "sweep_" + axis + "__" + model + ".csv";
      std::ofstream out(fs::path(out_dir) / name);
      out << bench::series_csv(series);
      written.push_back(name);
    }
  }
  std::ofstream jout(fs::path(out_dir) / "bench_report.json");
  jout << result.to_json().dump(2) << "\n";
  written.push_back("bench_report.json");
  return written;
}

}  // namespace dvsim::sim
