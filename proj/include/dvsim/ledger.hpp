#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dvsim/types.hpp"

namespace dvsim::ledger {

using nlohmann::json;

// ---- configuration ---------------------------------------------------------

struct CostModel {
  double endorse_base_ms = 1.0;
  double endorse_per_unit_ms = 0.06;  // per contract cost unit
  double order_ms = 1.0;              // orderer handling per block
  double commit_ms = 2.0;             // validation + state apply per block
  double worker_contention = 0.0;     // endorsement slowdown per extra submitter
};

struct OrdererConfig {
  int batch_size = 50;
  double batch_timeout_ms = 100.0;
};

struct PeerConfig {
  std::string id;
  std::string org;
};

struct ShardConfig {
  std::string id;
  std::vector<std::string> committee;
  std::vector<GroupId> groups;
};

struct NetworkConfig {
  std::vector<std::string> orgs;
  std::vector<PeerConfig> peers;
  std::vector<ShardConfig> shards;            // empty = no-shard model
  std::map<GroupId, std::string> group_channel;
  int mainchain_required = 0;                 // 0 = majority of orgs
  int shard_required = 0;                     // 0 = all committee members
  CostModel cost;
  OrdererConfig orderer;
  int queue_bound = 10000;

  static NetworkConfig from_json(const json& j);
  static NetworkConfig load_file(const std::string& path);

 private:
  static NetworkConfig from_json_checked(const json& j);
};

inline constexpr const char* kMainchainId = "mainchain";

// ---- ledger data ------------------------------------------------------------

struct Version {
  std::uint64_t block = 0;
  std::uint32_t tx = 0;
  bool operator==(const Version&) const = default;
  bool operator<(const Version& o) const {
    return block != o.block ? block < o.block : tx < o.tx;
  }
};

struct StoredValue {
  std::string value;
  Version version;
};

using WorldState = std::map<std::string, StoredValue>;

enum class TxStatus { Pending, Valid, Invalid };

struct Endorsement {
  std::string peer;
  std::string digest;  // over the produced read/write set
};

struct Transaction {
  std::string id;
  std::string channel;
  std::string contract;
  std::string op;
  json args;
  std::vector<std::pair<std::string, Version>> read_set;
  std::vector<std::pair<std::string, std::string>> write_set;
  std::vector<Endorsement> endorsements;
  LogicalTime submitted = 0;
  LogicalTime endorsed = 0;
  LogicalTime ordered = 0;
  LogicalTime committed = 0;
  TxStatus status = TxStatus::Pending;
  std::string invalid_reason;  // "endorsement" | "dropped" | "mvcc-conflict"
};

struct Block {
  std::uint64_t number = 0;
  std::string channel;
  std::string previous_hash;
  std::vector<Transaction> txs;
  std::string hash;  // over number, previous hash, tx payloads and statuses

  std::string content_hash() const;
};

struct ExportAudit {
  bool ok = true;
  std::string channel;
  std::uint64_t block = 0;
  std::string message;
};

/// Offline audit of an export (one block per JSON line): recomputes every
/// content hash and previous-hash link per channel.
ExportAudit verify_export_jsonl(const std::string& jsonl);

// ---- contract execution -----------------------------------------------------

/// Execution context handed to contract logic on one endorsing peer. Reads
/// record the observed version; writes are buffered into the write set.
class TxContext {
 public:
  TxContext(const WorldState& state, std::string peer_id)
      : state_(state), peer_(std::move(peer_id)) {}

  std::optional<std::string> get_state(const std::string& key);
  void put_state(const std::string& key, std::string value);
  void add_cost(double units) { cost_units_ += units; }
  const std::string& peer() const { return peer_; }

  std::vector<std::pair<std::string, Version>> reads;
  std::vector<std::pair<std::string, std::string>> writes;
  double cost_units() const { return cost_units_; }
  std::string digest() const;

 private:
  const WorldState& state_;
  std::string peer_;
  double cost_units_ = 0.0;
};

using ContractFn =
    std::function<void(TxContext& ctx, const std::string& op, const json& args)>;

// ---- network ----------------------------------------------------------------

struct ChannelInfo {
  std::string id;
  bool is_mainchain = false;
  std::vector<std::string> members;   // peer ids
  int required_endorsements = 0;
  std::vector<std::string> contracts;
  std::size_t chain_length = 0;
};

/// Simulated permissioned network: channels as shards, committee endorsement,
/// one logical orderer with per-channel queues, MVCC validation at commit.
/// Runs on a deterministic discrete-event logical clock.
class Network {
 public:
  explicit Network(NetworkConfig cfg);

  const NetworkConfig& config() const { return cfg_; }

  void deploy_contract(const std::string& channel, const std::string& name, ContractFn fn);

  /// Submits at the current logical time. Returns the transaction id; the
  /// pipeline completes as events run.
  std::string submit_tx(const std::string& channel, const std::string& contract,
                        const std::string& op, json args);

  /// Pre-schedules a submission at a future logical time (workload use).
  std::string schedule_tx(LogicalTime at, const std::string& channel,
                          const std::string& contract, const std::string& op, json args);

  /// Runs the event loop until no events remain.
  void run_until_idle();

  LogicalTime now() const { return now_; }

  /// Cuts a block now if the orderer predicate holds (queue >= batch size or
  /// oldest entry older than the batch timeout). Returns the block number.
  std::optional<std::uint64_t> cut_block(const std::string& channel);

  const Transaction* find_tx(const std::string& id) const;
  std::vector<const Transaction*> transactions() const;

  std::optional<std::string> query_state(const std::string& channel, const std::string& key) const;

  /// True plus npos when intact; otherwise false and the first bad block.
  std::pair<bool, std::uint64_t> verify_chain(const std::string& channel) const;

  std::vector<std::string> channel_ids() const;
  ChannelInfo channel_info(const std::string& channel) const;
  const std::vector<Block>& blocks(const std::string& channel) const;

  std::string world_state_digest(const std::string& channel, const std::string& peer) const;
  std::vector<std::string> channel_peers(const std::string& channel) const;

  std::string final_chain_hash() const;
  std::string export_jsonl() const;

  /// Tampers a committed value on every peer (test hook for audit checks).
  void corrupt_committed_value(const std::string& channel, std::uint64_t block,
                               std::size_t tx_index, const std::string& new_value);

  void set_active_submitters(int workers);

 private:
  struct Peer {
    std::string id;
    std::string org;
    std::map<std::string, WorldState> state;  // per channel
    LogicalTime busy_until = 0;
  };

  struct PendingTx {
    std::string id;
    LogicalTime ready_at = 0;
  };

  struct Channel {
    std::string id;
    bool is_mainchain = false;
    std::vector<std::string> members;
    int required = 0;
    std::map<std::string, ContractFn> contracts;
    std::vector<Block> chain;
    std::vector<PendingTx> queue;  // ordering queue, arrival order
    int in_flight = 0;
    bool timer_armed = false;
  };

  using EventFn = std::function<void()>;
  void schedule(LogicalTime at, EventFn fn);
  void do_submit(const std::string& tx_id);
  void enqueue_for_ordering(const std::string& tx_id, LogicalTime at);
  void maybe_cut(const std::string& channel_id, bool timer_fired);
  void arm_timer(Channel& ch);
  void commit_block(const std::string& channel_id, std::vector<std::string> tx_ids,
                    LogicalTime cut_at);
  Channel& channel_ref(const std::string& id);
  const Channel& channel_ref(const std::string& id) const;
  void make_genesis(Channel& ch);

  NetworkConfig cfg_;
  std::map<std::string, Peer> peers_;
  std::map<std::string, Channel> channels_;
  std::map<std::string, Transaction> txs_;
  std::uint64_t next_tx_seq_ = 1;
  std::uint64_t next_event_seq_ = 1;
  LogicalTime now_ = 0;
  int active_submitters_ = 1;

  struct Event {
    LogicalTime at;
    std::uint64_t seq;
    EventFn fn;
    bool operator>(const Event& o) const {
      return at != o.at ? at > o.at : seq > o.seq;
    }
  };
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
};

}  // namespace dvsim::ledger
