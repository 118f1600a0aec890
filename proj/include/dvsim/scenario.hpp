#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dvsim/bench.hpp"
#include "dvsim/dvs.hpp"
#include "dvsim/gridcase.hpp"
#include "dvsim/ledger.hpp"
#include "dvsim/powerflow.hpp"

namespace dvsim::sim {

using nlohmann::json;

inline constexpr const char* kVsiContract = "VSIContract";
inline constexpr const char* kGlobalContract = "GlobalContract";

struct Disturbance {
  double at_ms = 0.0;
  std::set<BusId> buses;
  double factor = 1.0;
};

struct VvcOverride {
  BusId bus = 0;
  double q_available = 0.0;
};

struct ScenarioConfig {
  std::string case_path;
  std::string grouping_path;
  std::string network_path;
  double vsi_threshold = 0.2;
  std::map<GroupId, double> group_thresholds;  // optional per-group overrides
  double v_req = 0.95;
  double pmu_period_ms = 100.0;
  double duration_ms = 1000.0;
  int max_rounds = 10;
  pf::SolveOptions solver;
  std::vector<Disturbance> disturbances;
  std::vector<VvcOverride> vvc_overrides;
  std::uint64_t seed = 1;

  static ScenarioConfig from_json(const json& j, const std::filesystem::path& base_dir);
  static ScenarioConfig load_file(const std::string& path);

 private:
  static ScenarioConfig from_json_checked(const json& j, const std::filesystem::path& base_dir);
};

/// Deploys the monitoring contract on every channel that hosts a group and
/// the global contract on the mainchain.
std::unique_ptr<ledger::Network> bootstrap_network(const ledger::NetworkConfig& cfg);

/// Everything produced by initialization: parsed inputs, per-group and
/// per-adjacent-pair records, and the bootstrapped network with the records
/// committed (topology on the mainchain, group data on each group's channel).
struct System {
  grid::GridCase base_case;
  ScenarioConfig scenario;
  ledger::NetworkConfig net_config;
  std::map<GroupId, grid::Group> groups;
  std::map<GroupId, dvs::GroupData> group_data;        // per group
  std::map<GroupId, dvs::GroupData> combo_data;        // per adjacent pair, by merged id
  std::map<GroupId, std::string> group_channel;
  std::unique_ptr<ledger::Network> net;
  std::vector<std::string> grouping_diagnostics;
  int init_tx_count = 0;
};

/// Builds group/combination records from the base-case power flow and writes
/// them through init transactions. Re-running on the same system overwrites
/// the records with identical content (versions advance).
System cmd_init(const ScenarioConfig& scenario);

/// Re-submits the init transactions on an existing system (idempotency
/// surface). Returns the number of transactions submitted.
int resubmit_init(System& sys);

struct ScenarioResult {
  bool collapsed = false;
  double collapse_at_ms = 0.0;
  std::vector<json> log;  // ordered event records
  std::string ledger_jsonl;
  std::string final_chain_hash;

  std::string log_jsonl() const;
  std::vector<json> events(const std::string& kind) const;
};

/// Closed monitoring/control loop: per PMU period solve the grid, snapshot
/// every active stream, submit monitoring transactions, and react to the
/// committed reports (local control, merge escalation, split on recovery).
ScenarioResult cmd_simulate(const ScenarioConfig& scenario,
                            std::optional<double> wall_clock_scale = std::nullopt);

ScenarioResult run_scenario(System& sys, std::optional<double> wall_clock_scale = std::nullopt);

// ---- benchmarks -------------------------------------------------------------

struct BenchModelConfig {
  std::string name;
  std::string network_path;
};

struct BenchSuiteConfig {
  ScenarioConfig scenario;             // case/grouping shared by every model
  std::vector<BenchModelConfig> models;
  std::vector<double> send_rates;
  std::vector<double> tx_counts;
  std::vector<double> worker_counts;
  bench::WorkloadSpec base;
  std::set<BusId> stress_buses;
  double stress_factor = 1.0;

  static BenchSuiteConfig load_file(const std::string& path);

 private:
  static BenchSuiteConfig parse_suite(const json& j, const std::filesystem::path& base_dir);
};

struct BenchSuiteResult {
  // sweep axis -> model -> series
  std::map<std::string, std::map<std::string, bench::SweepSeries>> series;
  json to_json() const;
};

/// Pre-generates normal and stressed monitoring payloads per channel for a
/// model (bench mode: unique report keys, no registry mutation).
std::map<std::string, bench::ChannelPayload> bench_payloads(const System& sys,
                                                            const std::set<BusId>& stress_buses,
                                                            double stress_factor);

BenchSuiteResult cmd_bench(const BenchSuiteConfig& suite);

/// Writes one CSV per (sweep, model) plus a combined JSON report; returns the
/// file names written.
std::vector<std::string> write_bench_reports(const BenchSuiteResult& result,
                                             const std::string& out_dir);

}  // namespace dvsim::sim
