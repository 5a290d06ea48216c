#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cet/auction.hpp"
#include "cet/ledger.hpp"

// Market smart contract: interval lifecycle Open -> Closed -> Cleared, bid and
// measurement collection, and clearing on close. Every peer runs the same
// rules over the same block stream, so state must depend only on the chain.

namespace cet::ledger {

struct ChannelConfig {
  ChannelId id;
  PeerId operator_peer = "operator";
  std::vector<PeerId> homes;
  std::size_t quorum = 0;  // 0 selects a simple majority of members
  Price price_cap{1000};
  std::size_t max_block_txs = 100;

  [[nodiscard]] std::vector<PeerId> members() const;  // sorted
  [[nodiscard]] bool is_member(const PeerId& peer) const;
  [[nodiscard]] bool is_home(const PeerId& peer) const;
  [[nodiscard]] std::size_t effective_quorum() const;
  /// Throws std::invalid_argument on duplicate members or a quorum below majority.
  void validate() const;
};

enum class Phase : std::uint8_t { Open = 0, Closed = 1, Cleared = 2 };

const char* to_string(Phase phase);

class ContractError : public std::runtime_error {
 public:
  enum class Rule {
    WrongChannel,
    NotMember,
    NotOperator,
    NotOwner,
    IntervalAlreadyOpen,
    IntervalNotIncreasing,
    UnknownInterval,
    PhaseViolation,
    MalformedPayload,
    DuplicateBid,
    Infeasible,
    ClearingFailed,
  };

  ContractError(Rule rule, const std::string& what) : std::runtime_error(what), rule_(rule) {}
  [[nodiscard]] Rule rule() const { return rule_; }

 private:
  Rule rule_;
};

/// Kebab-case rule name, e.g. "phase-violation".
const char* to_string(ContractError::Rule rule);

struct IntervalRecord {
  OpenInterval spec;
  Phase phase = Phase::Open;
  std::map<std::string, BidCurve> bids;  // by bid id
  std::vector<Measurement> measurements;  // commit order
  std::optional<auction::ClearingResult> result;

  bool operator==(const IntervalRecord&) const = default;
};

using DeviceKey = std::pair<std::string, std::string>;  // (home, device)

class ContractState {
 public:
  /// Throws ContractError with the first failing rule.
  void check(const Transaction& tx, const ChannelConfig& config) const;
  /// check() then mutate. On any exception the state is unchanged.
  void apply(const Transaction& tx, const ChannelConfig& config);

  [[nodiscard]] const std::map<IntervalId, IntervalRecord>& intervals() const { return intervals_; }
  [[nodiscard]] const IntervalRecord* find(IntervalId id) const;
  [[nodiscard]] std::optional<IntervalId> open_interval() const { return open_; }
  [[nodiscard]] std::optional<IntervalId> last_interval() const;
  [[nodiscard]] const std::map<DeviceKey, StorageReading>& storage() const { return storage_; }

  [[nodiscard]] Bytes encode() const;
  [[nodiscard]] Digest digest() const { return sha256(encode()); }

  bool operator==(const ContractState&) const = default;

 private:
  void check_bid(const BidCurve& bid, const PeerId& submitter, const ChannelConfig& config) const;

  std::map<IntervalId, IntervalRecord> intervals_;
  std::optional<IntervalId> open_;
  std::map<DeviceKey, StorageReading> storage_;  // latest committed reading per device
};

/// Largest bid the storage reading admits over `interval_h`, per side, in Wh.
Energy storage_limit(const StorageReading& reading, Side side, double interval_h);

}  // namespace cet::ledger
