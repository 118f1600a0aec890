#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "dvsim/ledger.hpp"
#include "dvsim/scenario.hpp"
#include "dvsim/types.hpp"

namespace fs = std::filesystem;
using namespace dvsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCollapse = 3;

struct CommonOpts {
  std::string scenario_path;
  std::string case_path;
  std::string grouping_path;
  std::string network_path;
  std::string suite_path;
  std::string ledger_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  bool wall_clock = false;
};

sim::ScenarioConfig resolve_scenario(const CommonOpts& opts) {
  sim::ScenarioConfig cfg;
  if (!opts.scenario_path.empty()) {
    cfg = sim::ScenarioConfig::load_file(opts.scenario_path);
  } else {
    if (opts.case_path.empty() || opts.grouping_path.empty() || opts.network_path.empty()) {
      throw ConfigError("need --scenario, or --case with --grouping and --network");
    }
  }
  if (!opts.case_path.empty()) cfg.case_path = opts.case_path;
  if (!opts.grouping_path.empty()) cfg.grouping_path = opts.grouping_path;
  if (!opts.network_path.empty()) cfg.network_path = opts.network_path;
  if (opts.seed) cfg.seed = *opts.seed;
  return cfg;
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

int run_init(const CommonOpts& opts) {
  sim::System sys = sim::cmd_init(resolve_scenario(opts));
  for (const auto& d : sys.grouping_diagnostics) {
    std::cerr << "note: " << d << "\n";
  }
  write_file(fs::path(opts.out_dir) / "ledger.jsonl", sys.net->export_jsonl());
  std::cout << "initialized " << sys.groups.size() << " groups, " << sys.combo_data.size()
            << " combinations, " << sys.init_tx_count << " init transactions\n";
  std::cout << "ledger export: " << (fs::path(opts.out_dir) / "ledger.jsonl").string() << "\n";
  return kExitOk;
}

int run_simulate(const CommonOpts& opts, bool export_only) {
  sim::ScenarioConfig cfg = resolve_scenario(opts);
  std::optional<double> pace;
  if (opts.wall_clock) pace = 1.0;
  sim::ScenarioResult result = sim::cmd_simulate(cfg, pace);

  write_file(fs::path(opts.out_dir) / "ledger.jsonl", result.ledger_jsonl);
  if (!export_only) {
    write_file(fs::path(opts.out_dir) / "scenario_log.jsonl", result.log_jsonl());
    std::cout << "events: " << result.log.size() << ", actions: "
              << result.events("action").size() << ", merges: "
              << result.events("merge").size() << ", splits: "
              << result.events("split").size() << "\n";
  }
  std::cout << "final chain hash: " << result.final_chain_hash << "\n";
  if (result.collapsed) {
    std::cerr << "voltage collapse at " << result.collapse_at_ms << " ms\n";
    return kExitCollapse;
  }
  return kExitOk;
}

int run_bench(const CommonOpts& opts) {
  if (opts.suite_path.empty()) throw ConfigError("bench needs --suite");
  sim::BenchSuiteConfig suite = sim::BenchSuiteConfig::load_file(opts.suite_path);
  if (opts.seed) suite.base.seed = *opts.seed;
  sim::BenchSuiteResult result = sim::cmd_bench(suite);
  auto files = sim::write_bench_reports(result, opts.out_dir);
  for (const auto& f : files) std::cout << opts.out_dir << "/" << f << "\n";
  return kExitOk;
}

int run_verify(const CommonOpts& opts) {
  if (opts.ledger_path.empty()) throw ConfigError("verify needs --ledger");
  std::ifstream in(opts.ledger_path);
  if (!in) throw ConfigError("cannot open " + opts.ledger_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  ledger::ExportAudit audit = ledger::verify_export_jsonl(ss.str());
  if (audit.ok) {
    std::cout << "chain intact\n";
    return kExitOk;
  }
  std::cerr << "chain broken: channel " << audit.channel << " block " << audit.block << ": "
            << audit.message << "\n";
  return kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dvsim - sharded-ledger voltage stability simulator"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonOpts opts;
  app.add_option("--scenario", opts.scenario_path, "scenario config (JSON)");
  app.add_option("--case", opts.case_path, "grid case file (JSON)");
  app.add_option("--grouping", opts.grouping_path, "grouping config (JSON)");
  app.add_option("--network", opts.network_path, "network config (JSON)");
  app.add_option("--suite", opts.suite_path, "benchmark suite config (JSON)");
  app.add_option("--ledger", opts.ledger_path, "ledger export to audit (JSON lines)");
  app.add_option("--out-dir", opts.out_dir, "output directory");
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "workload seed override");
  app.add_flag("--wall-clock", opts.wall_clock, "pace the scenario against wall time");

  auto* init = app.add_subcommand("init", "parse inputs, build group records, bootstrap the ledger");
  auto* simulate = app.add_subcommand("simulate", "run the closed monitoring/control loop");
  auto* bench = app.add_subcommand("bench", "run the benchmark sweeps");
  auto* verify = app.add_subcommand("verify", "audit a ledger export's hash chain");
  auto* exp = app.add_subcommand("export", "run a scenario and dump the ledger");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (seed_opt->count() > 0) opts.seed = seed_value;

  try {
    if (init->parsed()) return run_init(opts);
    if (simulate->parsed()) return run_simulate(opts, false);
    if (bench->parsed()) return run_bench(opts);
    if (verify->parsed()) return run_verify(opts);
    if (exp->parsed()) return run_simulate(opts, true);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
