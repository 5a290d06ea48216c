#include "cet/ledger.hpp"

#include <algorithm>

namespace cet::ledger {
namespace {

constexpr std::size_t kDigestBytes = 32;

void encode_digest(Encoder& e, const Digest& d) { e.raw(d); }

Digest decode_digest(Decoder& d) {
  Digest out{};
  const auto bytes = d.raw(out.size());
  std::copy(bytes.begin(), bytes.end(), out.begin());
  return out;
}

template <typename T, typename F>
void encode_seq(Encoder& e, const std::vector<T>& items, F&& each) {
  e.size(items.size());
  for (const auto& item : items) each(item);
}

void encode_ref(Encoder& e, const auction::BidRef& ref) {
  e.str(ref.id);
  e.str(ref.home);
  e.str(ref.device);
  e.u8(static_cast<std::uint8_t>(ref.side));
}

Side decode_side(Decoder& d) {
  const auto v = d.u8();
  if (v > 1) throw DecodeError("invalid side");
  return static_cast<Side>(v);
}

auction::BidRef decode_ref(Decoder& d) {
  auction::BidRef ref;
  ref.id = d.str();
  ref.home = d.str();
  ref.device = d.str();
  ref.side = decode_side(d);
  return ref;
}

void encode_award(Encoder& e, const auction::Award& a) {
  encode_ref(e, a.bid);
  e.i64(a.quantity.count());
}

auction::Award decode_award(Decoder& d) {
  auction::Award a;
  a.bid = decode_ref(d);
  a.quantity = Energy{d.i64()};
  return a;
}

}  // namespace

const char* to_string(TxKind kind) {
  switch (kind) {
    case TxKind::OpenInterval: return "open-interval";
    case TxKind::SubmitBid: return "submit-bid";
    case TxKind::SubmitMeasurement: return "submit-measurement";
    case TxKind::CloseInterval: return "close-interval";
  }
  return "unknown";
}

void encode(Encoder& e, const der::BessParams& p) {
  e.f64(p.p_min_kw);
  e.f64(p.p_max_kw);
  e.f64(p.soc_min_kwh);
  e.f64(p.soc_max_kwh);
  e.f64(p.eta);
}

der::BessParams decode_bess_params(Decoder& d) {
  der::BessParams p;
  p.p_min_kw = d.f64();
  p.p_max_kw = d.f64();
  p.soc_min_kwh = d.f64();
  p.soc_max_kwh = d.f64();
  p.eta = d.f64();
  return p;
}

void encode(Encoder& e, const BidCurve& bid) {
  e.str(bid.id);
  e.u8(static_cast<std::uint8_t>(bid.side));
  e.str(bid.owner);
  e.str(bid.device);
  e.u64(bid.interval);
  encode_seq(e, bid.points, [&](const BidPoint& p) {
    e.i64(p.cumulative.count());
    e.i64(p.limit.count());
  });
}

BidCurve decode_bid(Decoder& d) {
  BidCurve bid;
  bid.id = d.str();
  bid.side = decode_side(d);
  bid.owner = d.str();
  bid.device = d.str();
  bid.interval = d.u64();
  const auto n = d.size(16);
  for (std::size_t i = 0; i < n; ++i) {
    BidPoint p;
    p.cumulative = Energy{d.i64()};
    p.limit = Price{d.i64()};
    bid.points.push_back(p);
  }
  return bid;
}

void encode(Encoder& e, const Measurement& m) {
  e.u64(m.interval);
  e.str(m.home);
  e.str(m.device);
  e.boolean(m.power_kw.has_value());
  if (m.power_kw) e.f64(*m.power_kw);
  e.boolean(m.storage.has_value());
  if (m.storage) {
    encode(e, m.storage->params);
    e.f64(m.storage->soc_kwh);
  }
}

Measurement decode_measurement(Decoder& d) {
  Measurement m;
  m.interval = d.u64();
  m.home = d.str();
  m.device = d.str();
  if (d.boolean()) m.power_kw = d.f64();
  if (d.boolean()) {
    StorageReading r;
    r.params = decode_bess_params(d);
    r.soc_kwh = d.f64();
    m.storage = r;
  }
  return m;
}

void encode(Encoder& e, const Payload& payload) {
  e.u8(static_cast<std::uint8_t>(payload.index()));
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, OpenInterval>) {
          e.u64(p.interval);
          e.i64(p.start_s);
          e.i64(p.length_s);
          e.i64(p.grid_price.count());
        } else if constexpr (std::is_same_v<T, BidCurve>) {
          encode(e, p);
        } else if constexpr (std::is_same_v<T, Measurement>) {
          encode(e, p);
        } else {
          e.u64(p.interval);
        }
      },
      payload);
}

Payload decode_payload(Decoder& d) {
  switch (static_cast<TxKind>(d.u8())) {
    case TxKind::OpenInterval: {
      OpenInterval o;
      o.interval = d.u64();
      o.start_s = d.i64();
      o.length_s = d.i64();
      o.grid_price = Price{d.i64()};
      return o;
    }
    case TxKind::SubmitBid: return decode_bid(d);
    case TxKind::SubmitMeasurement: return decode_measurement(d);
    case TxKind::CloseInterval: return CloseInterval{d.u64()};
  }
  throw DecodeError("unknown transaction kind");
}

namespace {

Bytes id_preimage(const ChannelId& channel, const PeerId& submitter, const Payload& payload) {
  Encoder e;
  e.str(channel);
  e.str(submitter);
  encode(e, payload);
  return e.take();
}

}  // namespace

Digest transaction_id(const Transaction& tx) { return sha256(id_preimage(tx.channel, tx.submitter, tx.payload)); }

Transaction make_transaction(ChannelId channel, PeerId submitter, Payload payload) {
  Transaction tx;
  tx.channel = std::move(channel);
  tx.submitter = std::move(submitter);
  tx.payload = std::move(payload);
  tx.id = transaction_id(tx);
  return tx;
}

void encode(Encoder& e, const Transaction& tx) {
  encode_digest(e, tx.id);
  e.str(tx.channel);
  e.str(tx.submitter);
  encode(e, tx.payload);
  encode_seq(e, tx.endorsements, [&](const PeerId& p) { e.str(p); });
}

Transaction decode_transaction(Decoder& d) {
  Transaction tx;
  tx.id = decode_digest(d);
  tx.channel = d.str();
  tx.submitter = d.str();
  tx.payload = decode_payload(d);
  const auto n = d.size(4);
  for (std::size_t i = 0; i < n; ++i) tx.endorsements.push_back(d.str());
  return tx;
}

void encode(Encoder& e, const auction::ClearingResult& r) {
  e.u64(r.interval);
  e.boolean(r.mcp.has_value());
  if (r.mcp) e.i64(r.mcp->count());
  e.i64(r.cleared.count());
  encode_seq(e, r.awards, [&](const auction::Award& a) { encode_award(e, a); });
  encode_seq(e, r.grid_fills, [&](const auction::Award& a) { encode_award(e, a); });
  encode_seq(e, r.settlements, [&](const auction::Settlement& s) {
    e.str(s.home);
    e.i64(s.amount.count());
  });
  encode_seq(e, r.signals, [&](const auction::ControlSignal& s) {
    e.str(s.home);
    e.str(s.device);
    e.u8(static_cast<std::uint8_t>(s.command));
    e.i64(s.setpoint_w);
    e.u64(s.interval);
  });
}

auction::ClearingResult decode_clearing_result(Decoder& d) {
  auction::ClearingResult r;
  r.interval = d.u64();
  if (d.boolean()) r.mcp = Price{d.i64()};
  r.cleared = Energy{d.i64()};
  for (auto n = d.size(21); n > 0; --n) r.awards.push_back(decode_award(d));
  for (auto n = d.size(21); n > 0; --n) r.grid_fills.push_back(decode_award(d));
  for (auto n = d.size(12); n > 0; --n) {
    auction::Settlement s;
    s.home = d.str();
    s.amount = Money{d.i64()};
    r.settlements.push_back(s);
  }
  for (auto n = d.size(25); n > 0; --n) {
    auction::ControlSignal s;
    s.home = d.str();
    s.device = d.str();
    const auto command = d.u8();
    if (command > 1) throw DecodeError("invalid command");
    s.command = static_cast<auction::Command>(command);
    s.setpoint_w = d.i64();
    s.interval = d.u64();
    r.signals.push_back(s);
  }
  return r;
}

Bytes encode_clearing_result(const auction::ClearingResult& result) {
  Encoder e;
  encode(e, result);
  return e.take();
}

Bytes encode_block_body(const Block& block) {
  Encoder e;
  e.u64(block.height);
  encode_digest(e, block.prev_hash);
  encode_seq(e, block.txs, [&](const Transaction& tx) { encode(e, tx); });
  return e.take();
}

Digest block_hash(const Block& block) { return sha256(encode_block_body(block)); }

Block make_block(std::uint64_t height, const Digest& prev_hash, std::vector<Transaction> txs) {
  Block b;
  b.height = height;
  b.prev_hash = prev_hash;
  b.txs = std::move(txs);
  b.hash = block_hash(b);
  return b;
}

Block genesis_block() { return make_block(0, Digest{}, {}); }

Bytes encode_block_record(const Block& block) {
  Bytes out = encode_block_body(block);
  out.insert(out.end(), block.hash.begin(), block.hash.end());
  return out;
}

Block decode_block_record(std::span<const std::uint8_t> record) {
  Decoder d(record);
  Block b;
  b.height = d.u64();
  b.prev_hash = decode_digest(d);
  const auto n = d.size(kDigestBytes);
  for (std::size_t i = 0; i < n; ++i) b.txs.push_back(decode_transaction(d));
  b.hash = decode_digest(d);
  d.expect_end();
  return b;
}

namespace {

// Shared link/anchor checks once each block's own hash has been confirmed.
bool check_link(VerifyResult& out, std::uint64_t index, std::uint64_t height, const Digest& prev,
                const Digest& expected_prev, const Digest& hash, const std::map<std::uint64_t, Digest>& trusted) {
  auto fail = [&](std::string reason) {
    out = {false, index, std::move(reason)};
    return false;
  };
  if (height != index) return fail("height field does not match position");
  if (prev != expected_prev) return fail("prev_hash does not match the preceding block");
  if (auto it = trusted.find(index); it != trusted.end() && it->second != hash) {
    return fail("block hash differs from the trusted digest");
  }
  return true;
}

VerifyResult check_trusted_coverage(std::size_t count, const std::map<std::uint64_t, Digest>& trusted) {
  // A trusted digest beyond the end means blocks were dropped.
  if (!trusted.empty() && trusted.rbegin()->first >= count) {
    return {false, static_cast<std::uint64_t>(count), "chain is shorter than the trusted tip"};
  }
  return {};
}

}  // namespace

VerifyResult verify_chain(std::span<const Block> blocks, const std::map<std::uint64_t, Digest>& trusted) {
  VerifyResult out;
  Digest expected_prev{};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (block_hash(b) != b.hash) return {false, i, "block hash does not match its contents"};
    if (!check_link(out, i, b.height, b.prev_hash, expected_prev, b.hash, trusted)) return out;
    expected_prev = b.hash;
  }
  return check_trusted_coverage(blocks.size(), trusted);
}

VerifyResult verify_records_from(VerifyCursor& cursor, std::span<const Bytes> records,
                                 const std::map<std::uint64_t, Digest>& trusted) {
  VerifyResult out;
  for (const auto& rec : records) {
    const auto index = cursor.next_height;
    if (rec.size() < 8 + 2 * kDigestBytes + 4) return {false, index, "record too short"};
    const std::span<const std::uint8_t> body(rec.data(), rec.size() - kDigestBytes);
    Digest stored{};
    std::copy(rec.end() - kDigestBytes, rec.end(), stored.begin());
    if (sha256(body) != stored) return {false, index, "block hash does not match its contents"};
    Block b;
    try {
      b = decode_block_record(rec);
    } catch (const DecodeError& e) {
      return {false, index, std::string("undecodable block: ") + e.what()};
    }
    if (!check_link(out, index, b.height, b.prev_hash, cursor.prev_hash, stored, trusted)) return out;
    cursor.prev_hash = stored;
    ++cursor.next_height;
  }
  return out;
}

VerifyResult verify_records(std::span<const Bytes> records, const std::map<std::uint64_t, Digest>& trusted) {
  VerifyCursor cursor;
  if (auto r = verify_records_from(cursor, records, trusted); !r.ok) return r;
  return check_trusted_coverage(records.size(), trusted);
}

}  // namespace cet::ledger
