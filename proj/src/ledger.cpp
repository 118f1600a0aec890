#include "dvsim/ledger.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "dvsim/sha256.hpp"

namespace dvsim::ledger {

namespace {

json rw_sets_json(const std::vector<std::pair<std::string, Version>>& reads,
                  const std::vector<std::pair<std::string, std::string>>& writes) {
  json jr = json::array();
  for (const auto& [k, v] : reads) jr.push_back(json::array({k, v.block, v.tx}));
  json jw = json::array();
  for (const auto& [k, v] : writes) jw.push_back(json::array({k, v}));
  return json{{"reads", jr}, {"writes", jw}};
}

std::string status_string(const Transaction& tx) {
  switch (tx.status) {
    case TxStatus::Pending: return "pending";
    case TxStatus::Valid: return "valid";
    case TxStatus::Invalid: return "invalid(" + tx.invalid_reason + ")";
  }
  return "pending";
}

json tx_payload_json(const Transaction& tx) {
  json je = json::array();
  for (const auto& e : tx.endorsements) je.push_back(json::array({e.peer, e.digest}));
  json j = rw_sets_json(tx.read_set, tx.write_set);
  j["id"] = tx.id;
  j["contract"] = tx.contract;
  j["op"] = tx.op;
  j["args"] = tx.args;
  j["endorsements"] = je;
  j["status"] = status_string(tx);
  return j;
}

}  // namespace

NetworkConfig NetworkConfig::from_json(const json& j) {
  try {
    return from_json_checked(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config: malformed field: ") + e.what());
  }
}

NetworkConfig NetworkConfig::from_json_checked(const json& j) {
  NetworkConfig cfg;
  if (j.contains("format_version") && j.at("format_version") != "1") {
    throw ConfigError("network config: unsupported format_version");
  }
  for (const auto& o : j.value("orgs", json::array())) cfg.orgs.push_back(o.get<std::string>());
  if (!j.contains("peers") || j.at("peers").empty()) {
    throw ConfigError("network config: needs at least one peer");
  }
  for (const auto& p : j.at("peers")) {
    cfg.peers.push_back({p.at("id").get<std::string>(), p.value("org", std::string{})});
  }
  for (const auto& s : j.value("shards", json::array())) {
    ShardConfig sh;
    sh.id = s.at("id").get<std::string>();
    for (const auto& c : s.at("committee")) sh.committee.push_back(c.get<std::string>());
    if (sh.committee.empty()) {
      throw ConfigError("network config: shard " + sh.id + " has an empty committee");
    }
    for (const auto& g : s.value("groups", json::array())) sh.groups.push_back(g.get<int>());
    cfg.shards.push_back(sh);
  }
  if (j.contains("group_channel")) {
    for (const auto& [k, v] : j.at("group_channel").items()) {
      cfg.group_channel[std::stoi(k)] = v.get<std::string>();
    }
  } else {
    for (const auto& sh : cfg.shards) {
      for (GroupId g : sh.groups) cfg.group_channel[g] = sh.id;
    }
  }
  cfg.mainchain_required = j.value("mainchain_required", 0);
  cfg.shard_required = j.value("shard_required", 0);
  if (j.contains("cost_model")) {
    const auto& c = j.at("cost_model");
    cfg.cost.endorse_base_ms = c.value("endorse_base_ms", cfg.cost.endorse_base_ms);
    cfg.cost.endorse_per_unit_ms = c.value("endorse_per_unit_ms", cfg.cost.endorse_per_unit_ms);
    cfg.cost.order_ms = c.value("order_ms", cfg.cost.order_ms);
    cfg.cost.commit_ms = c.value("commit_ms", cfg.cost.commit_ms);
    cfg.cost.worker_contention = c.value("worker_contention", cfg.cost.worker_contention);
  }
  if (j.contains("orderer")) {
    const auto& o = j.at("orderer");
    cfg.orderer.batch_size = o.value("batch_size", cfg.orderer.batch_size);
    cfg.orderer.batch_timeout_ms = o.value("batch_timeout_ms", cfg.orderer.batch_timeout_ms);
  }
  cfg.queue_bound = j.value("queue_bound", cfg.queue_bound);
  return cfg;
}

NetworkConfig NetworkConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open network config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("network config " + path + ": " + e.what());
  }
  return from_json(j);
}

std::optional<std::string> TxContext::get_state(const std::string& key) {
  auto it = state_.find(key);
  Version v = it == state_.end() ? Version{} : it->second.version;
  for (const auto& [k, ver] : reads) {
    if (k == key) return it == state_.end() ? std::nullopt
                                            : std::optional<std::string>(it->second.value);
  }
  reads.push_back({key, v});
  if (it == state_.end()) return std::nullopt;
  return it->second.value;
}

void TxContext::put_state(const std::string& key, std::string value) {
  for (auto& [k, v] : writes) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  writes.push_back({key, std::move(value)});
}

std::string TxContext::digest() const {
  return Sha256::hash_hex(rw_sets_json(reads, writes).dump());
}

namespace {

std::string block_hash_over(const json& number, const json& previous_hash, const json& txs) {
  json j{{"number", number}, {"previous_hash", previous_hash}, {"txs", txs}};
  return Sha256::hash_hex(j.dump());
}

}  // namespace

std::string Block::content_hash() const {
  json jt = json::array();
  for (const auto& tx : txs) jt.push_back(tx_payload_json(tx));
  return block_hash_over(number, previous_hash, jt);
}

ExportAudit verify_export_jsonl(const std::string& jsonl) {
  std::map<std::string, std::vector<json>> per_channel;
  std::istringstream in(jsonl);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    per_channel[j.at("channel").get<std::string>()].push_back(std::move(j));
  }
  if (per_channel.empty()) return {false, "", 0, "empty export"};

  for (auto& [channel, blocks] : per_channel) {
    std::sort(blocks.begin(), blocks.end(), [](const json& a, const json& b) {
      return a.at("number").get<std::uint64_t>() < b.at("number").get<std::uint64_t>();
    });
    std::string prev(64, '0');
    for (const auto& b : blocks) {
      std::uint64_t number = b.at("number").get<std::uint64_t>();
      if (b.at("previous_hash") != prev) {
        return {false, channel, number, "previous-hash link broken"};
      }
      json txs = json::array();
      for (json tx : b.at("txs")) {
        tx.erase("submitted");
        tx.erase("endorsed");
        tx.erase("ordered");
        tx.erase("committed");
        txs.push_back(std::move(tx));
      }
      std::string recomputed = block_hash_over(b.at("number"), b.at("previous_hash"), txs);
      if (recomputed != b.at("hash").get<std::string>()) {
        return {false, channel, number, "content hash mismatch"};
      }
      prev = b.at("hash").get<std::string>();
    }
  }
  return {true, "", 0, "chain intact"};
}

Network::Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.peers.empty()) throw ConfigError("network: no peers configured");
  for (const auto& p : cfg_.peers) {
    peers_[p.id] = Peer{p.id, p.org, {}, 0};
  }

  Channel main;
  main.id = kMainchainId;
  main.is_mainchain = true;
  for (const auto& p : cfg_.peers) main.members.push_back(p.id);
  std::sort(main.members.begin(), main.members.end());
  int orgs = static_cast<int>(cfg_.orgs.empty() ? cfg_.peers.size() : cfg_.orgs.size());
  main.required = cfg_.mainchain_required > 0 ? cfg_.mainchain_required : orgs / 2 + 1;
  channels_[main.id] = main;

  for (const auto& sh : cfg_.shards) {
    if (channels_.count(sh.id)) throw ConfigError("network: duplicate channel id " + sh.id);
    if (sh.committee.empty()) throw ConfigError("network: shard " + sh.id + " has no committee");
    Channel ch;
    ch.id = sh.id;
    ch.members = sh.committee;
    std::sort(ch.members.begin(), ch.members.end());
    for (const auto& m : ch.members) {
      if (!peers_.count(m)) throw ConfigError("network: unknown committee peer " + m);
    }
    ch.required = cfg_.shard_required > 0 ? cfg_.shard_required
                                          : static_cast<int>(ch.members.size());
    channels_[ch.id] = ch;
  }

  for (const auto& [gid, chan] : cfg_.group_channel) {
    if (!channels_.count(chan)) {
      throw ConfigError("network: group " + std::to_string(gid) +
                        " assigned to unknown channel " + chan);
    }
  }

  for (auto& [id, ch] : channels_) {
    for (const auto& m : ch.members) peers_.at(m).state[id];  // create empty world state
    make_genesis(ch);
  }
}

void Network::make_genesis(Channel& ch) {
  Transaction tx;
  tx.id = "tx-" + ch.id + "-genesis";
  tx.channel = ch.id;
  tx.contract = "_config";
  tx.op = "genesis";
  json members = json::array();
  for (const auto& m : ch.members) members.push_back(m);
  tx.args = json{{"hash_algorithm", "sha-256"},
                 {"channel", ch.id},
                 {"members", members},
                 {"required_endorsements", ch.required}};
  tx.status = TxStatus::Valid;

  Block genesis;
  genesis.number = 0;
  genesis.channel = ch.id;
  genesis.previous_hash = std::string(64, '0');
  genesis.txs.push_back(tx);
  genesis.hash = genesis.content_hash();
  ch.chain.push_back(std::move(genesis));
}

void Network::deploy_contract(const std::string& channel, const std::string& name,
                              ContractFn fn) {
  Channel& ch = channel_ref(channel);
  if (ch.contracts.count(name)) {
    throw ConfigError("deploy_contract: contract '" + name + "' already deployed on " + channel);
  }
  ch.contracts[name] = std::move(fn);
}

void Network::schedule(LogicalTime at, EventFn fn) {
  events_.push(Event{at, next_event_seq_++, std::move(fn)});
}

std::string Network::submit_tx(const std::string& channel, const std::string& contract,
                               const std::string& op, json args) {
  return schedule_tx(now_, channel, contract, op, std::move(args));
}

std::string Network::schedule_tx(LogicalTime at, const std::string& channel,
                                 const std::string& contract, const std::string& op,
                                 json args) {
  Channel& ch = channel_ref(channel);
  if (!ch.contracts.count(contract)) {
    throw ConfigError("submit_tx: contract '" + contract + "' not deployed on " + channel);
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "tx-%08llu", static_cast<unsigned long long>(next_tx_seq_++));
  Transaction tx;
  tx.id = buf;
  tx.channel = channel;
  tx.contract = contract;
  tx.op = op;
  tx.args = std::move(args);
  tx.submitted = at;
  txs_[tx.id] = std::move(tx);
  std::string id = buf;
  schedule(at, [this, id] { do_submit(id); });
  return id;
}

void Network::do_submit(const std::string& tx_id) {
  Transaction& tx = txs_.at(tx_id);
  Channel& ch = channel_ref(tx.channel);

  if (ch.in_flight >= cfg_.queue_bound) {
    tx.status = TxStatus::Invalid;
    tx.invalid_reason = "dropped";
    return;
  }
  ch.in_flight += 1;

  const ContractFn& fn = ch.contracts.at(tx.contract);
  const double contention =
      1.0 + cfg_.cost.worker_contention * std::max(0, active_submitters_ - 1);

  struct PeerResult {
    std::string peer;
    std::string digest;
    LogicalTime finish;
    std::vector<std::pair<std::string, Version>> reads;
    std::vector<std::pair<std::string, std::string>> writes;
  };
  std::vector<PeerResult> results;

  for (const std::string& pid : ch.members) {
    Peer& peer = peers_.at(pid);
    TxContext ctx(peer.state.at(ch.id), pid);
    std::string digest;
    try {
      fn(ctx, tx.op, tx.args);
      digest = ctx.digest();
    } catch (const std::exception& e) {
      digest = std::string("error:") + e.what();
    }
    double service_ms =
        (cfg_.cost.endorse_base_ms + cfg_.cost.endorse_per_unit_ms * ctx.cost_units()) *
        contention;
    LogicalTime start = std::max(now_, peer.busy_until);
    LogicalTime finish = start + millis_to_time(service_ms);
    peer.busy_until = finish;
    results.push_back({pid, digest, finish, ctx.reads, ctx.writes});
    tx.endorsements.push_back({pid, digest});
  }

  // Matching digest group with the most votes; ties to the smaller digest.
  std::map<std::string, int> votes;
  for (const auto& r : results) votes[r.digest] += 1;
  std::string winning;
  int best = 0;
  for (const auto& [digest, count] : votes) {
    if (count > best) {
      winning = digest;
      best = count;
    }
  }

  if (best < ch.required || winning.rfind("error:", 0) == 0) {
    tx.status = TxStatus::Invalid;
    tx.invalid_reason = "endorsement";
    LogicalTime last = 0;
    for (const auto& r : results) last = std::max(last, r.finish);
    tx.endorsed = last;
    ch.in_flight -= 1;
    return;
  }

  std::vector<LogicalTime> finishes;
  for (const auto& r : results) {
    if (r.digest == winning) finishes.push_back(r.finish);
  }
  std::sort(finishes.begin(), finishes.end());
  LogicalTime endorsed_at = finishes[static_cast<std::size_t>(ch.required) - 1];

  // The client forwards only the matching endorsement set; divergent
  // minority endorsements are kept solely on failed transactions.
  tx.endorsements.clear();
  for (const auto& r : results) {
    if (r.digest != winning) continue;
    tx.endorsements.push_back({r.peer, r.digest});
    if (tx.read_set.empty() && tx.write_set.empty()) {
      tx.read_set = r.reads;  // members are sorted: lowest peer id first
      tx.write_set = r.writes;
    }
  }
  tx.endorsed = endorsed_at;

  std::string id = tx.id;
  schedule(endorsed_at, [this, id] { enqueue_for_ordering(id, now_); });
}

void Network::enqueue_for_ordering(const std::string& tx_id, LogicalTime at) {
  Transaction& tx = txs_.at(tx_id);
  Channel& ch = channel_ref(tx.channel);
  ch.queue.push_back({tx_id, at});
  maybe_cut(ch.id, false);
  if (!ch.queue.empty()) arm_timer(ch);
}

void Network::arm_timer(Channel& ch) {
  if (ch.timer_armed || ch.queue.empty()) return;
  ch.timer_armed = true;
  LogicalTime due = ch.queue.front().ready_at + millis_to_time(cfg_.orderer.batch_timeout_ms);
  std::string id = ch.id;
  schedule(std::max(due, now_), [this, id] {
    Channel& c = channel_ref(id);
    c.timer_armed = false;
    maybe_cut(id, true);
    if (!c.queue.empty()) arm_timer(c);
  });
}

void Network::maybe_cut(const std::string& channel_id, bool timer_fired) {
  Channel& ch = channel_ref(channel_id);
  const auto batch = static_cast<std::size_t>(cfg_.orderer.batch_size);

  auto cut = [&](std::size_t count) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < count; ++i) {
      ids.push_back(ch.queue.front().id);
      ch.queue.erase(ch.queue.begin());
    }
    LogicalTime cut_at = now_;
    LogicalTime ordered_at = cut_at + millis_to_time(cfg_.cost.order_ms);
    for (const auto& id : ids) txs_.at(id).ordered = ordered_at;
    std::string cid = ch.id;
    schedule(ordered_at + millis_to_time(cfg_.cost.commit_ms),
             [this, cid, ids, cut_at] { commit_block(cid, ids, cut_at); });
  };

  while (ch.queue.size() >= batch) cut(batch);
  if (timer_fired && !ch.queue.empty()) {
    LogicalTime age = now_ - ch.queue.front().ready_at;
    if (age >= millis_to_time(cfg_.orderer.batch_timeout_ms)) {
      cut(std::min(ch.queue.size(), batch));
    }
  }
}

std::optional<std::uint64_t> Network::cut_block(const std::string& channel) {
  Channel& ch = channel_ref(channel);
  std::size_t before = ch.chain.size();
  maybe_cut(channel, true);
  run_until_idle();
  if (ch.chain.size() > before) return ch.chain[before].number;
  return std::nullopt;
}

void Network::commit_block(const std::string& channel_id, std::vector<std::string> tx_ids,
                           LogicalTime) {
  Channel& ch = channel_ref(channel_id);

  Block block;
  block.number = ch.chain.size();
  block.channel = channel_id;
  block.previous_hash = ch.chain.back().hash;

  // Validation state is shared by every member peer, so check once and apply
  // everywhere.
  const WorldState& reference = peers_.at(ch.members.front()).state.at(channel_id);
  std::set<std::string> written_this_block;

  std::uint32_t index = 0;
  for (const auto& id : tx_ids) {
    Transaction& tx = txs_.at(id);

    int matches = 0;
    std::map<std::string, int> votes;
    for (const auto& e : tx.endorsements) votes[e.digest] += 1;
    for (const auto& [d, c] : votes) matches = std::max(matches, c);

    bool ok = matches >= ch.required;
    if (ok) {
      for (const auto& [key, ver] : tx.read_set) {
        if (written_this_block.count(key)) {
          ok = false;
          break;
        }
        auto it = reference.find(key);
        Version current = it == reference.end() ? Version{} : it->second.version;
        if (!(current == ver)) {
          ok = false;
          break;
        }
      }
    }
    if (ok) {
      for (const auto& [key, value] : tx.write_set) {
        if (written_this_block.count(key)) {
          ok = false;
          break;
        }
      }
    }

    if (ok) {
      for (const auto& [key, value] : tx.write_set) {
        written_this_block.insert(key);
        for (const auto& pid : ch.members) {
          peers_.at(pid).state.at(channel_id)[key] =
              StoredValue{value, Version{block.number, index}};
        }
      }
      tx.status = TxStatus::Valid;
    } else {
      tx.status = TxStatus::Invalid;
      tx.invalid_reason = matches >= ch.required ? "mvcc-conflict" : "endorsement";
    }
    tx.committed = now_;
    ch.in_flight -= 1;
    block.txs.push_back(tx);
    ++index;
  }

  block.hash = block.content_hash();
  ch.chain.push_back(std::move(block));
}

void Network::run_until_idle() {
  while (!events_.empty()) {
    Event ev = events_.top();
    events_.pop();
    now_ = std::max(now_, ev.at);
    ev.fn();
  }
}

const Transaction* Network::find_tx(const std::string& id) const {
  auto it = txs_.find(id);
  return it == txs_.end() ? nullptr : &it->second;
}

std::vector<const Transaction*> Network::transactions() const {
  std::vector<const Transaction*> out;
  for (const auto& [id, tx] : txs_) out.push_back(&tx);
  return out;
}

std::optional<std::string> Network::query_state(const std::string& channel,
                                                const std::string& key) const {
  const Channel& ch = channel_ref(channel);
  const WorldState& state = peers_.at(ch.members.front()).state.at(channel);
  auto it = state.find(key);
  if (it == state.end()) return std::nullopt;
  return it->second.value;
}

std::pair<bool, std::uint64_t> Network::verify_chain(const std::string& channel) const {
  const Channel& ch = channel_ref(channel);
  std::string prev = std::string(64, '0');
  for (const auto& block : ch.chain) {
    if (block.previous_hash != prev || block.content_hash() != block.hash) {
      return {false, block.number};
    }
    prev = block.hash;
  }
  return {true, std::numeric_limits<std::uint64_t>::max()};
}

std::vector<std::string> Network::channel_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, ch] : channels_) out.push_back(id);
  return out;
}

ChannelInfo Network::channel_info(const std::string& channel) const {
  const Channel& ch = channel_ref(channel);
  ChannelInfo info;
  info.id = ch.id;
  info.is_mainchain = ch.is_mainchain;
  info.members = ch.members;
  info.required_endorsements = ch.required;
  for (const auto& [name, fn] : ch.contracts) info.contracts.push_back(name);
  info.chain_length = ch.chain.size();
  return info;
}

const std::vector<Block>& Network::blocks(const std::string& channel) const {
  return channel_ref(channel).chain;
}

std::vector<std::string> Network::channel_peers(const std::string& channel) const {
  return channel_ref(channel).members;
}

std::string Network::world_state_digest(const std::string& channel,
                                        const std::string& peer) const {
  auto pit = peers_.find(peer);
  if (pit == peers_.end()) throw ConfigError("unknown peer " + peer);
  auto sit = pit->second.state.find(channel);
  if (sit == pit->second.state.end()) {
    throw ConfigError("peer " + peer + " is not a member of " + channel);
  }
  Sha256 h;
  for (const auto& [key, stored] : sit->second) {
    h.update(key);
    h.update("\x1f");
    h.update(stored.value);
    h.update("\x1f");
    std::string ver = std::to_string(stored.version.block) + ":" +
                      std::to_string(stored.version.tx) + "\x1e";
    h.update(ver);
  }
  return h.hex_digest();
}

std::string Network::final_chain_hash() const {
  Sha256 h;
  for (const auto& [id, ch] : channels_) {
    h.update(id);
    h.update(":");
    h.update(ch.chain.back().hash);
    h.update("\n");
  }
  return h.hex_digest();
}

std::string Network::export_jsonl() const {
  std::ostringstream out;
  for (const auto& [id, ch] : channels_) {
    for (const auto& block : ch.chain) {
      json jt = json::array();
      for (const auto& tx : block.txs) {
        json t = tx_payload_json(tx);
        t["submitted"] = tx.submitted;
        t["endorsed"] = tx.endorsed;
        t["ordered"] = tx.ordered;
        t["committed"] = tx.committed;
        jt.push_back(t);
      }
      json j{{"channel", block.channel},
             {"number", block.number},
             {"previous_hash", block.previous_hash},
             {"hash", block.hash},
             {"txs", jt}};
      out << j.dump() << "\n";
    }
  }
  return out.str();
}

void Network::corrupt_committed_value(const std::string& channel, std::uint64_t block,
                                      std::size_t tx_index, const std::string& new_value) {
  Channel& ch = channel_ref(channel);
  auto& tx = ch.chain.at(block).txs.at(tx_index);
  if (tx.write_set.empty()) throw ConfigError("corrupt_committed_value: tx has no writes");
  tx.write_set.front().second = new_value;
}

void Network::set_active_submitters(int workers) {
  active_submitters_ = std::max(1, workers);
}

Network::Channel& Network::channel_ref(const std::string& id) {
  auto it = channels_.find(id);
  if (it == channels_.end()) throw ConfigError("unknown channel " + id);
  return it->second;
}

const Network::Channel& Network::channel_ref(const std::string& id) const {
  auto it = channels_.find(id);
  if (it == channels_.end()) throw ConfigError("unknown channel " + id);
  return it->second;
}

}  // namespace dvsim::ledger
