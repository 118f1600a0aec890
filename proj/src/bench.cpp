#include "dvsim/bench.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace dvsim::bench {

json BenchReport::to_json() const {
  json channels = json::object();
  for (const auto& [id, m] : per_channel) {
    channels[id] = json{{"submitted", m.submitted},
                        {"valid", m.valid},
                        {"throughput_tps", m.throughput_tps},
                        {"avg_latency_ms", m.avg_latency_ms}};
  }
  return json{{"workers", spec.workers},
              {"tx_count", spec.tx_count},
              {"send_rate", spec.send_rate},
              {"mix", spec.mix},
              {"seed", spec.seed},
              {"throughput_tps", throughput_tps},
              {"min_latency_ms", min_latency_ms},
              {"avg_latency_ms", avg_latency_ms},
              {"max_latency_ms", max_latency_ms},
              {"success_rate", success_rate},
              {"per_channel", channels}};
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::SendRate: return "send_rate";
    case SweepAxis::TxCount: return "tx_count";
    case SweepAxis::Workers: return "workers";
  }
  return "send_rate";
}

BenchReport run_workload(const WorkloadSpec& spec, ledger::Network& net,
                         const std::map<std::string, ChannelPayload>& payloads) {
  if (spec.workers < 1) throw ConfigError("run_workload: workers must be >= 1");
  if (!(spec.send_rate > 0)) throw ConfigError("run_workload: send_rate must be positive");
  if (spec.mix < 0.0 || spec.mix > 1.0) throw ConfigError("run_workload: mix outside [0,1]");
  if (spec.target_channels.empty()) {
    throw ConfigError("run_workload: no target channels");
  }
  for (const auto& ch : spec.target_channels) {
    if (!payloads.count(ch)) {
      throw ConfigError("run_workload: no payload for channel " + ch);
    }
  }

  net.set_active_submitters(spec.workers);

  std::mt19937_64 rng(spec.seed);
  std::bernoulli_distribution stressed_draw(spec.mix);

  const double interval_us = 1e6 / spec.send_rate;
  const LogicalTime t0 = net.now();

  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(spec.tx_count));
  for (int i = 0; i < spec.tx_count; ++i) {
    const std::string& channel = spec.target_channels[i % spec.target_channels.size()];
    const ChannelPayload& payload = payloads.at(channel);
    bool stressed = stressed_draw(rng);
    LogicalTime at = t0 + static_cast<LogicalTime>(std::llround(i * interval_us));
    json args = stressed ? payload.stressed : payload.normal;
    args["seq"] = i;  // unique report key per invocation
    ids.push_back(net.schedule_tx(at, channel, payload.contract, payload.op, std::move(args)));
  }

  net.run_until_idle();

  std::vector<TxTrace> traces;
  std::map<std::string, std::vector<TxTrace>> per_channel;
  for (const auto& id : ids) {
    const ledger::Transaction* tx = net.find_tx(id);
    TxTrace t;
    t.id = id;
    t.submitted = tx->submitted;
    t.committed = tx->committed;
    t.valid = tx->status == ledger::TxStatus::Valid;
    traces.push_back(t);
    per_channel[tx->channel].push_back(t);
  }
  return aggregate(spec, traces, per_channel);
}

namespace {

void fill_latency(const std::vector<TxTrace>& traces, double& min_ms, double& avg_ms,
                  double& max_ms, double& throughput, int& valid_count) {
  LogicalTime first_submit = 0, last_commit = 0;
  bool any = false;
  double sum_ms = 0.0;
  min_ms = 0.0;
  max_ms = 0.0;
  valid_count = 0;
  for (const auto& t : traces) {
    if (!any || t.submitted < first_submit) first_submit = t.submitted;
    any = true;
    if (!t.valid) continue;
    double lat = time_to_millis(t.committed - t.submitted);
    if (valid_count == 0 || lat < min_ms) min_ms = lat;
    if (valid_count == 0 || lat > max_ms) max_ms = lat;
    sum_ms += lat;
    valid_count += 1;
    last_commit = std::max(last_commit, t.committed);
  }
  avg_ms = valid_count > 0 ? sum_ms / valid_count : 0.0;
  double span_s = time_to_millis(last_commit - first_submit) / 1000.0;
  throughput = (valid_count > 0 && span_s > 0) ? valid_count / span_s : 0.0;
}

}  // namespace

BenchReport aggregate(const WorkloadSpec& spec, const std::vector<TxTrace>& traces,
                      const std::map<std::string, std::vector<TxTrace>>& per_channel) {
  if (traces.empty()) throw ConfigError("aggregate: empty trace set");

  BenchReport report;
  report.spec = spec;

  int valid = 0;
  fill_latency(traces, report.min_latency_ms, report.avg_latency_ms, report.max_latency_ms,
               report.throughput_tps, valid);
  report.success_rate = static_cast<double>(valid) / static_cast<double>(traces.size());

  for (const auto& [channel, list] : per_channel) {
    ChannelMetrics m;
    m.submitted = static_cast<int>(list.size());
    double mn, mx;
    fill_latency(list, mn, m.avg_latency_ms, mx, m.throughput_tps, m.valid);
    report.per_channel[channel] = m;
  }
  return report;
}

std::map<std::string, SweepSeries> sweep(SweepAxis axis, const std::vector<double>& values,
                                         const WorkloadSpec& base,
                                         const std::vector<NetworkModel>& models) {
  if (values.empty()) throw ConfigError("sweep: no axis values");

  std::map<std::string, SweepSeries> out;
  for (const auto& model : models) {
    SweepSeries series;
    for (double value : values) {
      WorkloadSpec spec = base;
      spec.target_channels = model.target_channels;
      switch (axis) {
        case SweepAxis::SendRate: spec.send_rate = value; break;
        case SweepAxis::TxCount: spec.tx_count = static_cast<int>(value); break;
        case SweepAxis::Workers: spec.workers = static_cast<int>(value); break;
      }
      auto net = model.make();
      SweepPoint point;
      point.x = value;
      point.report = run_workload(spec, *net, model.payloads);
      series.push_back(std::move(point));
    }
    out[model.name] = std::move(series);
  }
  return out;
}

std::string series_csv(const SweepSeries& series) {
  std::ostringstream out;
  out << "x,throughput_tps,avg_latency_ms,success_rate\n";
  for (const auto& p : series) {
    out << p.x << "," << p.report.throughput_tps << "," << p.report.avg_latency_ms << ","
        << p.report.success_rate << "\n";
  }
  return out.str();
}

}  // namespace dvsim::bench
