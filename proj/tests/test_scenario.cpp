#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dvsim/records.hpp"
#include "dvsim/scenario.hpp"
#include "fixtures.hpp"

using namespace dvsim;
using namespace fixtures;

namespace {

sim::ScenarioConfig load_scenario(const std::string& name) {
  return sim::ScenarioConfig::load_file(data_path(name));
}

}  // namespace

TEST_CASE("cmd_init writes group and combination records to the mainchain") {
  sim::System sys = sim::cmd_init(load_scenario("scenario_base.json"));
  CHECK(sys.groups.size() == 3);
  // All three pairs share a tie in the shipped split.
  CHECK(sys.combo_data.size() == 3);

  int group_records = 0, combo_records = 0;
  for (const auto& [gid, gd] : sys.group_data) {
    if (sys.net->query_state(ledger::kMainchainId, records::topology_group_key(gid))) {
      ++group_records;
    }
  }
  for (const auto& [mid, gd] : sys.combo_data) {
    auto [a, b] = *gd.group.merged_from;
    if (sys.net->query_state(ledger::kMainchainId, records::topology_combo_key(a, b))) {
      ++combo_records;
    }
  }
  CHECK(group_records == 3);
  CHECK(combo_records == 3);

  // Group records live on the owning shard channel with the VVC registry and
  // the control-path detail (admittance, priority index, path edges).
  for (const auto& [gid, channel] : sys.group_channel) {
    CHECK(sys.net->query_state(channel, records::group_key(gid)).has_value());
    CHECK(sys.net->query_state(channel, records::vvc_key(gid)).has_value());
    auto detail = sys.net->query_state(channel, records::group_detail_key(gid));
    REQUIRE(detail.has_value());
    CHECK(ledger::json::parse(*detail).contains("pi"));
  }
}

TEST_CASE("re-running init overwrites records with identical content") {
  sim::System sys = sim::cmd_init(load_scenario("scenario_base.json"));
  auto before = sys.net->query_state(ledger::kMainchainId, records::topology_group_key(1));
  std::size_t blocks_before = sys.net->blocks(ledger::kMainchainId).size();
  int resubmitted = sim::resubmit_init(sys);
  CHECK(resubmitted == sys.init_tx_count);
  auto after = sys.net->query_state(ledger::kMainchainId, records::topology_group_key(1));
  CHECK(*before == *after);
  CHECK(sys.net->blocks(ledger::kMainchainId).size() > blocks_before);
}

TEST_CASE("missing grouping file fails before any ledger write") {
  sim::ScenarioConfig cfg = load_scenario("scenario_base.json");
  cfg.grouping_path = data_path("does_not_exist.json");
  CHECK_THROWS_AS(sim::cmd_init(cfg), ConfigError);
}

TEST_CASE("group without a channel assignment is rejected") {
  sim::ScenarioConfig cfg = load_scenario("scenario_base.json");
  cfg.network_path = data_path("net_noshard.json");
  sim::System sys = sim::cmd_init(cfg);  // all groups on the mainchain is fine
  CHECK(sys.group_channel.at(1) == ledger::kMainchainId);
}

TEST_CASE("quiet scenario: no disturbances, no actions, chains verify") {
  sim::ScenarioConfig cfg = load_scenario("scenario_base.json");
  sim::System sys = sim::cmd_init(cfg);
  auto result = sim::run_scenario(sys);
  CHECK_FALSE(result.collapsed);
  CHECK(result.events("action").empty());
  CHECK(result.events("merge").empty());
  CHECK(result.events("vsi").size() == 3 * 11);  // three groups, 0..1000 ms inclusive
  for (const auto& ch : sys.net->channel_ids()) {
    CHECK(sys.net->verify_chain(ch).first);
  }
  auto audit = ledger::verify_export_jsonl(result.ledger_jsonl);
  CHECK(audit.ok);
}

TEST_CASE("local disturbance: controller acts, VSI recovers, no merge") {
  sim::ScenarioConfig cfg = load_scenario("scenario_stressed.json");
  sim::System sys = sim::cmd_init(cfg);
  auto result = sim::run_scenario(sys);
  CHECK_FALSE(result.collapsed);

  auto actions = result.events("action");
  REQUIRE(!actions.empty());
  auto applied = 0;
  for (const auto& a : actions) {
    if (a.at("action").at("status") == "applied") {
      ++applied;
      CHECK(a.at("action").at("group_id") == 3);
      CHECK(a.at("action").at("weak_bus") == 26);
      CHECK(a.at("action").at("vvc_bus") == 26);
    }
  }
  CHECK(applied >= 1);
  CHECK(result.events("merge").empty());

  // Recovery: the last report for group 3 is back above the threshold.
  double last_vsi = 0.0;
  for (const auto& e : result.events("vsi")) {
    if (e.at("group") == 3) last_vsi = e.at("min_vsi").get<double>();
  }
  CHECK(last_vsi > cfg.vsi_threshold);

  // Every report and control action corresponds to a committed transaction.
  for (const auto& kind : {"vsi", "action"}) {
    for (const auto& e : result.events(kind)) {
      auto tx = sys.net->find_tx(e.at("tx").get<std::string>());
      REQUIRE(tx != nullptr);
      CHECK(tx->status == ledger::TxStatus::Valid);
    }
  }
}

TEST_CASE("controller progress and merge -> stabilize -> split ordering") {
  sim::ScenarioConfig cfg = load_scenario("scenario_escalate.json");
  sim::System sys = sim::cmd_init(cfg);
  auto result = sim::run_scenario(sys);

  // Each applied action strictly raises the weak bus voltage seen by the
  // next report of the same stream.
  int progress_checks = 0;
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    const auto& e = result.log[i];
    if (e.at("kind") != "action" || e.at("action").at("status") != "applied") continue;
    GroupId g = e.at("group").get<int>();
    BusId weak = e.at("action").at("weak_bus").get<int>();
    // Voltage in the report the action was computed from...
    double v_before = -1.0;
    for (std::size_t j = i; j-- > 0;) {
      const auto& p = result.log[j];
      if (p.at("kind") == "vsi" && p.at("group") == g && p.at("weak_bus") == weak) {
        v_before = p.at("v_weak").get<double>();
        break;
      }
    }
    // ...versus the next report of the same stream after the re-solve.
    for (std::size_t j = i + 1; j < result.log.size(); ++j) {
      const auto& n = result.log[j];
      if (n.at("kind") == "vsi" && n.at("group") == g && n.at("weak_bus") == weak) {
        REQUIRE(v_before > 0.0);
        CHECK(n.at("v_weak").get<double>() > v_before);
        ++progress_checks;
        break;
      }
    }
  }
  CHECK(progress_checks >= 1);

  // Merge -> stabilize -> split appear in order.
  auto merges = result.events("merge");
  auto splits = result.events("split");
  REQUIRE(!merges.empty());
  REQUIRE(!splits.empty());
  double merge_t = merges.front().at("t_ms").get<double>();
  double split_t = splits.front().at("t_ms").get<double>();
  CHECK(merge_t < split_t);
  CHECK(merges.front().at("requesting") == 3);
  CHECK(merges.front().at("donor") == 2);
  CHECK(merges.front().at("merged_id") == 203);

  // In between, applied actions happen on the merged group and there are at
  // most ten of them.
  int merged_rounds = 0;
  for (const auto& e : result.events("action")) {
    double t = e.at("t_ms").get<double>();
    if (t >= merge_t && t <= split_t && e.at("action").at("status") == "applied") {
      CHECK(e.at("group") == 203);
      ++merged_rounds;
    }
  }
  CHECK(merged_rounds >= 1);
  CHECK(merged_rounds <= 10);

  // Stabilize: the merged stream's last report before the split is above the
  // threshold.
  double stable_vsi = 0.0;
  for (const auto& e : result.events("vsi")) {
    if (e.at("group") == 203 && e.at("t_ms").get<double>() <= split_t) {
      stable_vsi = e.at("min_vsi").get<double>();
    }
  }
  CHECK(stable_vsi > cfg.vsi_threshold);
}

TEST_CASE("insufficient local resources escalate through the mainchain") {
  sim::ScenarioConfig cfg = load_scenario("scenario_escalate.json");
  sim::System sys = sim::cmd_init(cfg);
  auto result = sim::run_scenario(sys);

  bool saw_insufficient = false;
  for (const auto& e : result.events("action")) {
    if (e.at("action").at("status") == "insufficient-local-resources") {
      saw_insufficient = true;
      CHECK(e.at("group") == 3);
    }
  }
  CHECK(saw_insufficient);

  // The merge decision is recorded on the mainchain.
  auto merge_rec = sys.net->query_state(ledger::kMainchainId, records::merge_flag_key(3));
  REQUIRE(merge_rec.has_value());
  auto rec = ledger::json::parse(*merge_rec);
  CHECK((rec.at("status") == "split" || rec.at("status") == "ok"));
}

TEST_CASE("re-stress after a split produces an identical second merge") {
  sim::ScenarioConfig cfg = load_scenario("scenario_escalate.json");
  sim::Disturbance again;
  again.at_ms = 1600.0;
  again.buses = {26, 29, 30};
  again.factor = 1.15;  // multiplies the already-stressed loads
  cfg.disturbances.push_back(again);
  cfg.duration_ms = 4000.0;
  sim::System sys = sim::cmd_init(cfg);
  auto result = sim::run_scenario(sys);
  CHECK_FALSE(result.collapsed);

  auto merges = result.events("merge");
  auto splits = result.events("split");
  REQUIRE(merges.size() >= 2);
  REQUIRE(!splits.empty());
  CHECK(splits.front().at("t_ms").get<double>() < merges[1].at("t_ms").get<double>());
  for (const char* key : {"requesting", "donor", "merged_id"}) {
    CHECK(merges[0].at(key) == merges[1].at(key));
  }
}

TEST_CASE("scenario replay is byte-identical") {
  auto run = [&]() {
    sim::ScenarioConfig cfg = load_scenario("scenario_escalate.json");
    sim::System sys = sim::cmd_init(cfg);
    auto result = sim::run_scenario(sys);
    return std::tuple{result.log_jsonl(), result.ledger_jsonl, result.final_chain_hash};
  };
  auto a = run();
  auto b = run();
  CHECK(std::get<0>(a) == std::get<0>(b));
  CHECK(std::get<1>(a) == std::get<1>(b));
  CHECK(std::get<2>(a) == std::get<2>(b));
}

TEST_CASE("unsolvable disturbance halts as a collapse event") {
  sim::ScenarioConfig cfg = load_scenario("scenario_stressed.json");
  cfg.disturbances[0].factor = 40.0;  // far beyond the nose
  sim::System sys = sim::cmd_init(cfg);
  auto result = sim::run_scenario(sys);
  CHECK(result.collapsed);
  CHECK(result.collapse_at_ms == 500.0);
  CHECK(!result.events("collapse").empty());
}

TEST_CASE("scenario config validation") {
  sim::ScenarioConfig cfg = load_scenario("scenario_base.json");
  CHECK(cfg.pmu_period_ms == 100.0);
  CHECK(cfg.vsi_threshold == 0.2);

  // Disturbance outside the duration is rejected at parse time.
  ledger::json j{{"case", "ieee30.json"},
                 {"grouping", "grouping30.json"},
                 {"network", "net_3shard.json"},
                 {"duration_ms", 100.0},
                 {"disturbances",
                  ledger::json::array({ledger::json{
                      {"at_ms", 500.0},
                      {"buses", ledger::json::array({26})},
                      {"factor", 2.0}}})}};
  CHECK_THROWS_AS(sim::ScenarioConfig::from_json(j, data_path("")), ConfigError);
}
