#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dvsim/ledger.hpp"
#include "dvsim/types.hpp"

namespace dvsim::bench {

using nlohmann::json;

struct WorkloadSpec {
  int workers = 3;
  int tx_count = 8000;
  double send_rate = 800.0;  // aggregate submissions per second
  double mix = 0.0;          // fraction of stressed payloads (monitor+control)
  std::vector<std::string> target_channels;
  std::uint64_t seed = 1;
};

struct TxTrace {
  std::string id;
  LogicalTime submitted = 0;
  LogicalTime committed = 0;
  bool valid = false;
};

struct ChannelMetrics {
  int submitted = 0;
  int valid = 0;
  double throughput_tps = 0.0;
  double avg_latency_ms = 0.0;
};

struct BenchReport {
  WorkloadSpec spec;
  double throughput_tps = 0.0;     // committed-valid tx per second
  double min_latency_ms = 0.0;
  double avg_latency_ms = 0.0;
  double max_latency_ms = 0.0;
  double success_rate = 0.0;
  std::map<std::string, ChannelMetrics> per_channel;

  json to_json() const;
};

/// Invocation payloads for one channel; the workload alternates between the
/// normal body and the stressed body according to the configured mix.
struct ChannelPayload {
  std::string contract;
  std::string op;
  json normal;
  json stressed;
};

/// Open-loop fixed-interval submission: `workers` submitters share the
/// aggregate send rate round-robin over the target channels, every trace is
/// collected after the network drains, and the metrics are computed over the
/// committed set. Latency is submit-to-commit.
BenchReport run_workload(const WorkloadSpec& spec, ledger::Network& net,
                         const std::map<std::string, ChannelPayload>& payloads);

BenchReport aggregate(const WorkloadSpec& spec, const std::vector<TxTrace>& traces,
                      const std::map<std::string, std::vector<TxTrace>>& per_channel);

enum class SweepAxis { SendRate, TxCount, Workers };

std::string to_string(SweepAxis axis);

struct SweepPoint {
  double x = 0.0;
  BenchReport report;
};

using SweepSeries = std::vector<SweepPoint>;

/// Builds a fresh network (with contracts and data initialized) for a named
/// model; every sweep point runs on its own instance.
struct NetworkModel {
  std::string name;
  std::function<std::unique_ptr<ledger::Network>()> make;
  std::vector<std::string> target_channels;
  std::map<std::string, ChannelPayload> payloads;
};

std::map<std::string, SweepSeries> sweep(SweepAxis axis, const std::vector<double>& values,
                                         const WorkloadSpec& base,
                                         const std::vector<NetworkModel>& models);

std::string series_csv(const SweepSeries& series);

}  // namespace dvsim::bench
