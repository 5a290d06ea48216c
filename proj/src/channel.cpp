#include "cet/channel.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace cet::ledger {

const char* to_string(SubmitStatus status) {
  switch (status) {
    case SubmitStatus::Accepted: return "accepted";
    case SubmitStatus::Duplicate: return "duplicate";
    case SubmitStatus::Rejected: return "rejected";
    case SubmitStatus::NoQuorum: return "no-quorum";
  }
  return "unknown";
}

ContractState replay(std::span<const Block> blocks, const ChannelConfig& config) {
  ContractState state;
  const std::size_t quorum = config.effective_quorum();
  for (const auto& block : blocks) {
    for (const auto& tx : block.txs) {
      if (tx.endorsements.size() < quorum) {
        throw ReplayError("block " + std::to_string(block.height) + " holds a transaction below endorsement quorum");
      }
      for (const auto& peer : tx.endorsements) {
        if (!config.is_member(peer)) {
          throw ReplayError("block " + std::to_string(block.height) + " holds an endorsement by non-member '" + peer + "'");
        }
      }
      try {
        state.apply(tx, config);
      } catch (const ContractError& e) {
        throw ReplayError("block " + std::to_string(block.height) + " does not replay: " + e.what());
      }
    }
  }
  return state;
}

ChainStore::ChainStore(std::filesystem::path file) : file_(std::move(file)), tip_(file_) {
  tip_ += ".tip";
}

std::vector<Bytes> ChainStore::load() const {
  std::vector<Bytes> records;
  std::ifstream in(file_, std::ios::binary);
  if (!in) return records;
  const Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Decoder d(data);
  while (d.remaining() > 0) {
    try {
      const auto n = d.u32();
      const auto bytes = d.raw(n);
      records.emplace_back(bytes.begin(), bytes.end());
    } catch (const DecodeError&) {
      throw ChainCorrupt(records.size(), "chain file " + file_.string() + " ends inside a record");
    }
  }
  return records;
}

std::map<std::uint64_t, Digest> ChainStore::trusted_tip() const {
  std::map<std::uint64_t, Digest> out;
  std::ifstream in(tip_);
  if (!in) return out;
  std::uint64_t height = 0;
  std::string hex;
  if (!(in >> height >> hex)) throw ChainCorrupt(0, "unreadable tip file " + tip_.string());
  try {
    out.emplace(height, digest_from_hex(hex));
  } catch (const std::invalid_argument&) {
    throw ChainCorrupt(height, "unreadable tip digest in " + tip_.string());
  }
  return out;
}

void ChainStore::append(const Block& block) {
  const Bytes record = encode_block_record(block);
  Encoder framed;
  framed.size(record.size());
  framed.raw(record);
  {
    std::ofstream out(file_, std::ios::binary | std::ios::app);
    out.write(reinterpret_cast<const char*>(framed.bytes().data()), static_cast<std::streamsize>(framed.bytes().size()));
    out.flush();
    if (!out) throw std::runtime_error("failed to append to " + file_.string());
  }
  auto tmp = tip_;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << block.height << ' ' << to_hex(block.hash) << '\n';
    out.flush();
    if (!out) throw std::runtime_error("failed to write " + tmp.string());
  }
  std::filesystem::rename(tmp, tip_);
}

Channel::Channel(ChannelConfig config) : config_(std::move(config)) {
  config_.validate();
  chain_.push_back(genesis_block());
  init_peers(ContractState{});
}

Channel::Channel(ChannelConfig config, const std::filesystem::path& chain_file) : config_(std::move(config)) {
  config_.validate();
  store_.emplace(chain_file);
  const auto records = store_->load();
  if (records.empty()) {
    if (!store_->trusted_tip().empty()) throw ChainCorrupt(0, "chain file is missing but a tip digest exists");
    chain_.push_back(genesis_block());
    store_->append(chain_.front());
    init_peers(ContractState{});
    return;
  }
  const auto verdict = verify_records(records, store_->trusted_tip());
  if (!verdict.ok) throw ChainCorrupt(verdict.first_bad_height, verdict.reason);
  for (const auto& r : records) chain_.push_back(decode_block_record(r));
  if (!chain_.front().txs.empty()) throw ChainCorrupt(0, "genesis block must be empty");
  init_peers(replay(chain_, config_));
  for (const auto& block : chain_) {
    for (const auto& tx : block.txs) committed_.emplace(tx.id, block.height);
  }
}

void Channel::init_peers(const ContractState& state) {
  for (const auto& id : config_.members()) peers_.push_back({id, true, state});
  for (std::size_t i = 0; i < peers_.size(); ++i) {
    if (peers_[i].id == config_.operator_peer) world_index_ = i;
  }
}

SubmitResult Channel::submit(Transaction tx) {
  std::unique_lock lock(mutex_);
  SubmitResult out;
  out.tx_id = tx.id;
  if (queued_ids_.contains(tx.id) || committed_.contains(tx.id)) {
    out.status = SubmitStatus::Duplicate;
    out.reason = "transaction already submitted";
    return out;
  }

  std::vector<PeerId> endorsers;
  std::optional<ContractError> first_error;
  for (const auto& peer : peers_) {
    if (!peer.online) continue;
    try {
      peer.state.check(tx, config_);
      endorsers.push_back(peer.id);
    } catch (const ContractError& e) {
      if (!first_error) first_error = e;
    }
  }
  if (endorsers.size() < config_.effective_quorum()) {
    if (first_error) {
      out.status = SubmitStatus::Rejected;
      out.rule = first_error->rule();
      out.reason = first_error->what();
    } else {
      out.status = SubmitStatus::NoQuorum;
      out.reason = "only " + std::to_string(endorsers.size()) + " of " +
                   std::to_string(config_.effective_quorum()) + " required endorsements";
    }
    return out;
  }

  tx.endorsements = std::move(endorsers);
  queued_ids_.insert(tx.id);
  queue_.push_back(std::move(tx));
  out.status = SubmitStatus::Accepted;
  if (queue_.size() >= config_.max_block_txs) commit_locked();
  return out;
}

std::optional<CommitReport> Channel::commit_block() {
  std::unique_lock lock(mutex_);
  return commit_locked();
}

std::optional<CommitReport> Channel::commit_locked() {
  if (queue_.empty()) return std::nullopt;
  std::vector<Transaction> batch;
  batch.swap(queue_);
  queued_ids_.clear();
  std::sort(batch.begin(), batch.end(), [](const Transaction& a, const Transaction& b) { return a.id < b.id; });

  CommitReport report;
  std::vector<Transaction> accepted;
  auto& world_state = peers_[world_index_].state;
  for (auto& tx : batch) {
    try {
      world_state.apply(tx, config_);
      accepted.push_back(std::move(tx));
    } catch (const ContractError& e) {
      report.dropped.push_back({std::move(tx), e.rule(), e.what()});
    }
  }
  for (std::size_t i = 0; i < peers_.size(); ++i) {
    if (i == world_index_) continue;
    for (const auto& tx : accepted) {
      try {
        peers_[i].state.apply(tx, config_);
      } catch (const ContractError& e) {
        throw ReplayError("peer '" + peers_[i].id + "' diverged: " + e.what());
      }
    }
  }

  const Block& tip = chain_.back();
  report.block = make_block(tip.height + 1, tip.hash, std::move(accepted));
  if (store_) store_->append(report.block);
  chain_.push_back(report.block);
  for (const auto& tx : report.block.txs) committed_.emplace(tx.id, report.block.height);
  for (const auto& observer : observers_) observer(report, world_state);
  return report;
}

std::size_t Channel::pending() const {
  std::shared_lock lock(mutex_);
  return queue_.size();
}

std::uint64_t Channel::height() const {
  std::shared_lock lock(mutex_);
  return chain_.back().height;
}

Digest Channel::tip_hash() const {
  std::shared_lock lock(mutex_);
  return chain_.back().hash;
}

std::vector<Block> Channel::blocks(std::uint64_t from) const {
  std::shared_lock lock(mutex_);
  if (from >= chain_.size()) return {};
  return {chain_.begin() + static_cast<std::ptrdiff_t>(from), chain_.end()};
}

TxStatus Channel::status(const Digest& tx_id) const {
  std::shared_lock lock(mutex_);
  if (committed_.contains(tx_id)) return TxStatus::Committed;
  if (queued_ids_.contains(tx_id)) return TxStatus::Pending;
  return TxStatus::Unknown;
}

std::optional<std::uint64_t> Channel::committed_height(const Digest& tx_id) const {
  std::shared_lock lock(mutex_);
  auto it = committed_.find(tx_id);
  if (it == committed_.end()) return std::nullopt;
  return it->second;
}

VerifyResult Channel::verify() const {
  std::shared_lock lock(mutex_);
  return verify_chain(chain_);
}

ContractState Channel::state() const {
  std::shared_lock lock(mutex_);
  return world();
}

std::vector<std::pair<PeerId, Digest>> Channel::peer_digests() const {
  std::shared_lock lock(mutex_);
  std::vector<std::pair<PeerId, Digest>> out;
  for (const auto& peer : peers_) out.emplace_back(peer.id, peer.state.digest());
  return out;
}

void Channel::set_peer_online(const PeerId& peer, bool online) {
  std::unique_lock lock(mutex_);
  for (auto& p : peers_) {
    if (p.id == peer) {
      p.online = online;
      return;
    }
  }
  throw std::invalid_argument("'" + peer + "' is not a channel member");
}

void Channel::on_commit(CommitObserver observer) {
  std::unique_lock lock(mutex_);
  observers_.push_back(std::move(observer));
}

}  // namespace cet::ledger
