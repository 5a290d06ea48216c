#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cet/contract.hpp"
#include "cet/ledger.hpp"

// Simulated permissioned channel. Every member runs a peer with its own copy
// of the contract state; submissions are endorsed by the online peers, queued
// in an ordering service and cut into blocks that every peer applies.

namespace cet::ledger {

class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChainCorrupt : public std::runtime_error {
 public:
  ChainCorrupt(std::uint64_t height, const std::string& what) : std::runtime_error(what), height_(height) {}
  [[nodiscard]] std::uint64_t height() const { return height_; }

 private:
  std::uint64_t height_;
};

enum class SubmitStatus { Accepted, Duplicate, Rejected, NoQuorum };

const char* to_string(SubmitStatus status);

struct SubmitResult {
  SubmitStatus status = SubmitStatus::Rejected;
  Digest tx_id{};
  std::optional<ContractError::Rule> rule;  // set when Rejected
  std::string reason;

  [[nodiscard]] bool accepted() const { return status == SubmitStatus::Accepted; }
};

struct Dropped {
  Transaction tx;
  ContractError::Rule rule;
  std::string reason;
};

struct CommitReport {
  Block block;
  std::vector<Dropped> dropped;  // queued txs that failed revalidation at commit
};

enum class TxStatus { Unknown, Pending, Committed };

/// Fold a chain through the contract from the empty state. Checks endorsement
/// quorum and membership of every transaction; throws ReplayError when a
/// committed transaction does not apply.
ContractState replay(std::span<const Block> blocks, const ChannelConfig& config);

/// Append-only chain file: u32 big-endian length then one block record, per
/// block. A sibling "<file>.tip" holds the latest height and hash.
class ChainStore {
 public:
  explicit ChainStore(std::filesystem::path file);

  [[nodiscard]] const std::filesystem::path& path() const { return file_; }
  /// Raw records in file order. Throws ChainCorrupt on truncated framing.
  [[nodiscard]] std::vector<Bytes> load() const;
  [[nodiscard]] std::map<std::uint64_t, Digest> trusted_tip() const;
  void append(const Block& block);

 private:
  std::filesystem::path file_;
  std::filesystem::path tip_;
};

class Channel {
 public:
  using CommitObserver = std::function<void(const CommitReport&, const ContractState&)>;

  explicit Channel(ChannelConfig config);
  /// Persisted channel. An existing file is verified and replayed; a missing
  /// one is created with the genesis block.
  Channel(ChannelConfig config, const std::filesystem::path& chain_file);

  Channel(const Channel&) = delete;
  Channel& operator=(const Channel&) = delete;

  [[nodiscard]] const ChannelConfig& config() const { return config_; }

  SubmitResult submit(Transaction tx);
  /// Cut a block from the queue. Empty optional when nothing is queued.
  std::optional<CommitReport> commit_block();

  [[nodiscard]] std::size_t pending() const;
  [[nodiscard]] std::uint64_t height() const;
  [[nodiscard]] Digest tip_hash() const;
  [[nodiscard]] std::vector<Block> blocks(std::uint64_t from = 0) const;
  [[nodiscard]] TxStatus status(const Digest& tx_id) const;
  [[nodiscard]] std::optional<std::uint64_t> committed_height(const Digest& tx_id) const;
  [[nodiscard]] VerifyResult verify() const;

  /// World state snapshot (the operator peer's copy).
  [[nodiscard]] ContractState state() const;
  /// Run `f` against the world state under a shared lock.
  template <typename F>
  decltype(auto) read(F&& f) const {
    std::shared_lock lock(mutex_);
    return f(world());
  }

  /// State digest of every peer, in member order.
  [[nodiscard]] std::vector<std::pair<PeerId, Digest>> peer_digests() const;
  /// Offline peers do not endorse; they still receive blocks.
  void set_peer_online(const PeerId& peer, bool online);

  /// Called under the channel lock after each block; must not call back into
  /// the channel.
  void on_commit(CommitObserver observer);

 private:
  struct Peer {
    PeerId id;
    bool online = true;
    ContractState state;
  };

  [[nodiscard]] const ContractState& world() const { return peers_.at(world_index_).state; }
  void init_peers(const ContractState& state);
  std::optional<CommitReport> commit_locked();

  ChannelConfig config_;
  std::optional<ChainStore> store_;
  mutable std::shared_mutex mutex_;
  std::vector<Peer> peers_;
  std::size_t world_index_ = 0;
  std::vector<Block> chain_;
  std::vector<Transaction> queue_;
  std::set<Digest> queued_ids_;
  std::map<Digest, std::uint64_t> committed_;
  std::vector<CommitObserver> observers_;
};

}  // namespace cet::ledger
