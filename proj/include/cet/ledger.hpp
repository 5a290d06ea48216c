#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cet/auction.hpp"
#include "cet/codec.hpp"
#include "cet/der.hpp"
#include "cet/digest.hpp"
#include "cet/market.hpp"

// Ledger records: transactions, blocks and their canonical encodings.

namespace cet::ledger {

using PeerId = std::string;
using ChannelId = std::string;

enum class TxKind : std::uint8_t { OpenInterval = 0, SubmitBid = 1, SubmitMeasurement = 2, CloseInterval = 3 };

const char* to_string(TxKind kind);

struct OpenInterval {
  IntervalId interval = 0;
  std::int64_t start_s = 0;   // seconds since scenario/service epoch
  std::int64_t length_s = 0;  // interval duration
  Price grid_price;           // TOU price for residual grid purchases

  bool operator==(const OpenInterval&) const = default;
};

struct StorageReading {
  der::BessParams params;
  double soc_kwh = 0.0;

  bool operator==(const StorageReading&) const = default;
};

/// Device telemetry. A measurement carries a metered power, a storage state
/// reading, or both.
struct Measurement {
  IntervalId interval = 0;
  std::string home;
  std::string device;
  std::optional<double> power_kw;  // + consumption, - generation
  std::optional<StorageReading> storage;

  bool operator==(const Measurement&) const = default;
};

struct CloseInterval {
  IntervalId interval = 0;

  bool operator==(const CloseInterval&) const = default;
};

using Payload = std::variant<OpenInterval, BidCurve, Measurement, CloseInterval>;

struct Transaction {
  Digest id{};
  ChannelId channel;
  PeerId submitter;
  Payload payload;
  std::vector<PeerId> endorsements;  // sorted, unique

  bool operator==(const Transaction&) const = default;

  [[nodiscard]] TxKind kind() const { return static_cast<TxKind>(payload.index()); }
};

/// Build a transaction whose id is the hash of (channel, submitter, payload).
Transaction make_transaction(ChannelId channel, PeerId submitter, Payload payload);
Digest transaction_id(const Transaction& tx);

struct Block {
  std::uint64_t height = 0;
  Digest prev_hash{};
  std::vector<Transaction> txs;
  Digest hash{};

  bool operator==(const Block&) const = default;
};

/// Seal a block: fills in `hash` from height, prev_hash and txs.
Block make_block(std::uint64_t height, const Digest& prev_hash, std::vector<Transaction> txs);
Block genesis_block();
Digest block_hash(const Block& block);

// Canonical encodings.
void encode(Encoder& e, const BidCurve& bid);
void encode(Encoder& e, const Payload& payload);
void encode(Encoder& e, const Transaction& tx);
void encode(Encoder& e, const auction::ClearingResult& result);
void encode(Encoder& e, const Measurement& m);
void encode(Encoder& e, const der::BessParams& p);

BidCurve decode_bid(Decoder& d);
Payload decode_payload(Decoder& d);
Transaction decode_transaction(Decoder& d);
auction::ClearingResult decode_clearing_result(Decoder& d);
Measurement decode_measurement(Decoder& d);
der::BessParams decode_bess_params(Decoder& d);

Bytes encode_block_body(const Block& block);
/// Persisted record: block body followed by its 32-byte hash.
Bytes encode_block_record(const Block& block);
/// Throws DecodeError on malformed input. Does not check the hash.
Block decode_block_record(std::span<const std::uint8_t> record);

Bytes encode_clearing_result(const auction::ClearingResult& result);

struct VerifyResult {
  bool ok = true;
  std::uint64_t first_bad_height = 0;
  std::string reason;
};

/// Recompute every hash and link. `trusted` maps heights to block hashes held
/// independently (for example the tip digest stored beside the chain); a
/// mismatch there catches re-hashed forgeries.
VerifyResult verify_chain(std::span<const Block> blocks, const std::map<std::uint64_t, Digest>& trusted = {});

/// Same checks on raw persisted records, so that corruption which breaks
/// decoding is also attributed to a height.
VerifyResult verify_records(std::span<const Bytes> records, const std::map<std::uint64_t, Digest>& trusted = {});

/// Position reached by a left-to-right verification: the height expected next
/// and the hash it must link to.
struct VerifyCursor {
  std::uint64_t next_height = 0;
  Digest prev_hash{};
};

/// Verify `records` as the blocks starting at `cursor.next_height`, advancing
/// the cursor past every block that passes. Running this over consecutive
/// slices from a default cursor checks the same things as verify_records,
/// except that trusted digests beyond the last block are not reported.
VerifyResult verify_records_from(VerifyCursor& cursor, std::span<const Bytes> records,
                                 const std::map<std::uint64_t, Digest>& trusted = {});

}  // namespace cet::ledger
