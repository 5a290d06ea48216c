#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cet/channel.hpp"
#include "support/ledger_fixture.hpp"

using namespace cet;
using namespace cet::ledger;
using cet::testing::simple_bid;
using cet::testing::small_channel;

namespace {

Transaction tx(const Channel& ch, const PeerId& who, Payload payload) {
  return make_transaction(ch.config().id, who, std::move(payload));
}

OpenInterval open_spec(IntervalId id) { return {id, static_cast<std::int64_t>(id) * 3600, 3600, Price{82}}; }

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cet-ledger-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("ledger") {
  TEST_CASE("sha256 known answer") {
    const std::string abc = "abc";
    const auto d = sha256({reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()});
    CHECK(to_hex(d) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(digest_from_hex(to_hex(d)) == d);
    CHECK_THROWS(digest_from_hex("zz"));
  }

  TEST_CASE("codec round trips and rejects truncation") {
    Encoder e;
    e.u32(0xdeadbeef);
    e.i64(-5);
    e.f64(0.1);
    e.str("home");
    const auto bytes = e.bytes();
    CHECK(bytes[0] == 0xde);
    Decoder d(bytes);
    CHECK(d.u32() == 0xdeadbeef);
    CHECK(d.i64() == -5);
    CHECK(d.f64() == 0.1);
    CHECK(d.str() == "home");
    CHECK_NOTHROW(d.expect_end());

    Decoder short_input(std::span<const std::uint8_t>(bytes.data(), 6));
    short_input.u32();
    CHECK_THROWS_AS(short_input.i64(), DecodeError);
  }

  TEST_CASE("transactions and blocks survive encode/decode") {
    const auto bid = simple_bid("h1", "ev", 4, Side::Buy, Energy{1800}, Price{1000});
    Measurement m{4, "h1", "bess", 2.5, StorageReading{{-5, 5, 1, 13, 0.9}, 6.5}};
    std::vector<Transaction> txs{make_transaction("c", "operator", open_spec(4)), make_transaction("c", "h1", bid),
                                 make_transaction("c", "h1", m), make_transaction("c", "operator", CloseInterval{4})};
    txs[1].endorsements = {"h1", "h2", "operator"};
    const auto block = make_block(7, genesis_block().hash, txs);
    const auto decoded = decode_block_record(encode_block_record(block));
    CHECK(decoded == block);
    CHECK(block_hash(decoded) == block.hash);
  }

  TEST_CASE("transaction id is a content hash that ignores endorsements") {
    const auto bid = simple_bid("h1", "ev", 1, Side::Buy, Energy{1000}, Price{100});
    auto a = make_transaction("c", "h1", bid);
    auto b = make_transaction("c", "h1", bid);
    CHECK(a.id == b.id);
    b.endorsements = {"h2"};
    CHECK(transaction_id(b) == a.id);
    CHECK(make_transaction("other", "h1", bid).id != a.id);
    auto changed = bid;
    changed.points[0].limit = Price{101};
    CHECK(make_transaction("c", "h1", changed).id != a.id);
  }

  TEST_CASE("genesis and first commit") {
    Channel ch(small_channel());
    CHECK(ch.height() == 0);
    const auto genesis = ch.blocks().front();
    CHECK(genesis.prev_hash == Digest{});
    CHECK_FALSE(ch.commit_block().has_value());
    REQUIRE(ch.submit(tx(ch, "operator", open_spec(1))).accepted());
    const auto report = ch.commit_block();
    REQUIRE(report);
    CHECK(report->block.height == 1);
    CHECK(report->block.prev_hash == genesis.hash);
    CHECK(ch.state().open_interval() == IntervalId{1});
  }

  TEST_CASE("contract lifecycle rules") {
    Channel ch(small_channel());
    auto rejected_with = [&](const PeerId& who, Payload p) {
      const auto r = ch.submit(tx(ch, who, std::move(p)));
      REQUIRE(r.status == SubmitStatus::Rejected);
      return *r.rule;
    };
    using Rule = ContractError::Rule;

    CHECK(rejected_with("h1", open_spec(1)) == Rule::NotOperator);
    CHECK(rejected_with("stranger", open_spec(1)) == Rule::NotMember);
    CHECK(rejected_with("h1", simple_bid("h1", "ev", 1, Side::Buy, Energy{100}, Price{50})) == Rule::UnknownInterval);

    REQUIRE(ch.submit(tx(ch, "operator", open_spec(1))).accepted());
    ch.commit_block();
    CHECK(rejected_with("operator", open_spec(2)) == Rule::IntervalAlreadyOpen);

    CHECK(ch.submit(tx(ch, "h1", simple_bid("h1", "ev", 1, Side::Buy, Energy{1000}, Price{110}))).accepted());
    CHECK(rejected_with("h1", simple_bid("h2", "bess", 1, Side::Sell, Energy{1000}, Price{50})) == Rule::NotOwner);
    auto bad = simple_bid("h2", "pv", 1, Side::Buy, Energy{1000}, Price{50});
    bad.points.push_back({Energy{2000}, Price{60}});
    CHECK(rejected_with("h2", bad) == Rule::MalformedPayload);
    CHECK(rejected_with("h2", simple_bid("h2", "pv", 1, Side::Sell, Energy{1000}, Price{-1})) == Rule::MalformedPayload);
    CHECK(ch.submit(tx(ch, "h2", simple_bid("h2", "pv", 1, Side::Sell, Energy{1000}, Price{50}))).accepted());
    ch.commit_block();
    // Same bid id, different content.
    CHECK(rejected_with("h1", simple_bid("h1", "ev", 1, Side::Buy, Energy{500}, Price{120})) == Rule::DuplicateBid);

    REQUIRE(ch.submit(tx(ch, "operator", CloseInterval{1})).accepted());
    ch.commit_block();
    const auto state = ch.state();
    const auto* rec = state.find(1);
    REQUIRE(rec);
    CHECK(rec->phase == Phase::Cleared);
    REQUIRE(rec->result);
    REQUIRE(rec->result->mcp);
    CHECK(*rec->result->mcp == Price{80});
    CHECK(rec->result->cleared == Energy{1000});

    CHECK(rejected_with("h3", simple_bid("h3", "ev", 1, Side::Buy, Energy{100}, Price{50})) == Rule::PhaseViolation);
    // Re-sending the same close is a duplicate; the contract itself also
    // refuses a second close.
    const auto close_again = tx(ch, "operator", CloseInterval{1});
    CHECK(ch.submit(close_again).status == SubmitStatus::Duplicate);
    try {
      state.check(close_again, ch.config());
      FAIL("second close accepted");
    } catch (const ContractError& e) {
      CHECK(e.rule() == Rule::PhaseViolation);
    }
    CHECK(rejected_with("operator", OpenInterval{1, 99, 3600, Price{82}}) == Rule::IntervalNotIncreasing);
    CHECK(ch.submit(tx(ch, "operator", open_spec(2))).accepted());
  }

  TEST_CASE("close with zero bids records a no-trade result") {
    Channel ch(small_channel());
    cet::testing::submit_ok(ch, "operator", open_spec(1));
    ch.commit_block();
    cet::testing::submit_ok(ch, "operator", CloseInterval{1});
    ch.commit_block();
    const auto state = ch.state();
    const auto* rec = state.find(1);
    REQUIRE(rec);
    CHECK(rec->phase == Phase::Cleared);
    CHECK_FALSE(rec->result->mcp.has_value());
    CHECK(rec->result->signals.empty());
  }

  TEST_CASE("endorsers recompute the storage envelope") {
    Channel ch(small_channel());
    cet::testing::submit_ok(ch, "operator", OpenInterval{1, 0, 3600, Price{82}});
    ch.commit_block();
    // 10 kWh of 50, eta 0.9: charge limited to 6 kW, discharge to 4.5 kW.
    Measurement m{1, "h1", "bess", std::nullopt, StorageReading{{-6, 6, 5, 50, 0.9}, 10.0}};
    cet::testing::submit_ok(ch, "h1", m);
    ch.commit_block();
    CHECK(ch.submit(tx(ch, "h1", simple_bid("h1", "bess", 1, Side::Sell, Energy{4500}, Price{100}))).accepted());
    const auto r = ch.submit(tx(ch, "h1", simple_bid("h1", "bess", 1, Side::Buy, Energy{6001}, Price{100})));
    CHECK(r.status == SubmitStatus::Rejected);
    CHECK(*r.rule == ContractError::Rule::Infeasible);
    const auto too_much = ch.submit(tx(ch, "h1", simple_bid("h1", "bess2", 1, Side::Sell, Energy{4501}, Price{100})));
    CHECK(too_much.accepted());  // no reading for this device
  }

  TEST_CASE("quorum and duplicates") {
    Channel ch(small_channel());  // 4 members, quorum 3
    CHECK(ch.config().effective_quorum() == 3);
    const auto open = tx(ch, "operator", open_spec(1));
    ch.set_peer_online("h1", false);
    ch.set_peer_online("h2", false);
    CHECK(ch.submit(open).status == SubmitStatus::NoQuorum);
    ch.set_peer_online("h2", true);
    const auto ok = ch.submit(open);
    REQUIRE(ok.accepted());
    CHECK(ch.submit(open).status == SubmitStatus::Duplicate);
    CHECK(ch.status(open.id) == TxStatus::Pending);
    const auto report = ch.commit_block();
    CHECK(report->block.txs[0].endorsements == std::vector<PeerId>{"h2", "h3", "operator"});
    CHECK(ch.status(open.id) == TxStatus::Committed);
    CHECK(ch.submit(open).status == SubmitStatus::Duplicate);
    CHECK_THROWS(ch.set_peer_online("nobody", false));

    auto cfg = small_channel();
    cfg.quorum = 2;
    CHECK_THROWS(Channel{cfg});
  }

  TEST_CASE("commit revalidates and drops conflicting transactions") {
    Channel ch(small_channel());
    cet::testing::submit_ok(ch, "operator", open_spec(1));
    cet::testing::submit_ok(ch, "operator", open_spec(2));  // both endorsed against the empty state
    const auto report = ch.commit_block();
    REQUIRE(report);
    CHECK(report->block.txs.size() == 1);
    REQUIRE(report->dropped.size() == 1);
    CHECK(report->dropped[0].rule == ContractError::Rule::IntervalAlreadyOpen);
  }

  TEST_CASE("same transactions in different arrival orders give identical blocks") {
    Channel a(small_channel());
    Channel b(small_channel());
    for (auto* ch : {&a, &b}) {
      cet::testing::submit_ok(*ch, "operator", open_spec(1));
      ch->commit_block();
    }
    std::vector<Payload> bids;
    for (int i = 1; i <= 3; ++i) {
      bids.push_back(simple_bid("h" + std::to_string(i), "load", 1, Side::Buy, Energy{100 * i}, Price{90}));
    }
    for (std::size_t i = 0; i < bids.size(); ++i) {
      cet::testing::submit_ok(a, "h" + std::to_string(i + 1), bids[i]);
    }
    for (std::size_t i = bids.size(); i-- > 0;) {
      cet::testing::submit_ok(b, "h" + std::to_string(i + 1), bids[i]);
    }
    CHECK(a.commit_block()->block == b.commit_block()->block);
    CHECK(a.state().digest() == b.state().digest());
  }

  TEST_CASE("blocks are cut automatically at the configured size") {
    auto cfg = small_channel();
    cfg.max_block_txs = 3;
    Channel ch(cfg);
    cet::testing::submit_ok(ch, "operator", open_spec(1));
    ch.commit_block();
    for (int i = 0; i < 3; ++i) {
      cet::testing::submit_ok(ch, "h1", simple_bid("h1", "d" + std::to_string(i), 1, Side::Buy, Energy{100}, Price{90}));
    }
    CHECK(ch.height() == 2);
    CHECK(ch.pending() == 0);
  }

  TEST_CASE("every peer holds the same state after every block, and replay matches") {
    Channel ch(small_channel());
    std::mt19937_64 rng(3);
    for (IntervalId i = 1; i <= 8; ++i) {
      cet::testing::run_interval(ch, i, rng, [&] {
        const auto digests = ch.peer_digests();
        REQUIRE(digests.size() == 4);
        for (const auto& [peer, d] : digests) CHECK(d == digests.front().second);
      });
    }
    const auto blocks = ch.blocks();
    CHECK(replay(blocks, ch.config()) == ch.state());
    CHECK(ch.verify().ok);
    CHECK(replay(std::span<const Block>(blocks.data(), 1), ch.config()) == ContractState{});
  }

  TEST_CASE("property: phase safety on random chains") {
    Channel ch(small_channel());
    cet::testing::run_intervals(ch, 10, 17);
    std::map<IntervalId, bool> open;
    for (const auto& block : ch.blocks()) {
      for (const auto& t : block.txs) {
        CHECK(t.endorsements.size() >= ch.config().effective_quorum());
        if (auto* o = std::get_if<OpenInterval>(&t.payload)) open[o->interval] = true;
        if (auto* c = std::get_if<CloseInterval>(&t.payload)) open[c->interval] = false;
        if (auto* b = std::get_if<BidCurve>(&t.payload)) CHECK(open[b->interval]);
      }
    }
  }

  TEST_CASE("tamper evidence: every single-bit flip is detected at its block") {
    Channel ch(small_channel());
    cet::testing::run_intervals(ch, 3, 5);
    const auto blocks = ch.blocks();
    std::vector<Bytes> records;
    for (const auto& b : blocks) records.push_back(encode_block_record(b));
    REQUIRE(verify_records(records).ok);
    for (std::size_t h = 0; h < records.size(); ++h) {
      for (std::size_t byte = 0; byte < records[h].size(); ++byte) {
        for (int bit = 0; bit < 8; ++bit) {
          records[h][byte] ^= static_cast<std::uint8_t>(1u << bit);
          const auto v = verify_records(records);
          records[h][byte] ^= static_cast<std::uint8_t>(1u << bit);
          REQUIRE_FALSE(v.ok);
          REQUIRE(v.first_bad_height == h);
        }
      }
    }
  }

  TEST_CASE("resumed verification agrees with a whole-chain pass") {
    Channel ch(small_channel());
    cet::testing::run_intervals(ch, 4, 11);
    const auto blocks = ch.blocks();
    std::vector<Bytes> records;
    for (const auto& b : blocks) records.push_back(encode_block_record(b));
    const std::span<const Bytes> all(records);

    VerifyCursor cursor;
    REQUIRE(verify_records_from(cursor, all.subspan(0, 5)).ok);
    CHECK(cursor.next_height == 5);
    CHECK(cursor.prev_hash == blocks[4].hash);
    REQUIRE(verify_records_from(cursor, all.subspan(5)).ok);
    CHECK(cursor.next_height == records.size());

    // A slice that skips a block breaks the link at the first record after the gap.
    VerifyCursor skip;
    REQUIRE(verify_records_from(skip, all.subspan(0, 3)).ok);
    const auto gap = verify_records_from(skip, all.subspan(4));
    CHECK_FALSE(gap.ok);
    CHECK(gap.first_bad_height == 3);
    CHECK(skip.next_height == 3);

    records[7][20] ^= 0x10;
    VerifyCursor at_six;
    REQUIRE(verify_records_from(at_six, all.subspan(0, 6)).ok);
    const auto resumed = verify_records_from(at_six, all.subspan(6));
    const auto whole = verify_records(records);
    CHECK_FALSE(resumed.ok);
    CHECK(resumed.first_bad_height == whole.first_bad_height);
    CHECK(resumed.reason == whole.reason);
  }

  TEST_CASE("verify_chain catches payload edits and forged suffixes") {
    Channel ch(small_channel());
    cet::testing::run_intervals(ch, 2, 9);
    auto blocks = ch.blocks();
    REQUIRE(blocks.size() > 5);
    CHECK(verify_chain(blocks).ok);

    auto edited = blocks;
    std::get<OpenInterval>(edited[1].txs[0].payload).grid_price = Price{1};
    auto v = verify_chain(edited);
    CHECK_FALSE(v.ok);
    CHECK(v.first_bad_height == 1);

    // Re-hash and re-link from block 3 onward: internally consistent, only the
    // independently held tip digest exposes it.
    auto forged = blocks;
    forged[3].txs.clear();
    for (std::size_t h = 3; h < forged.size(); ++h) {
      forged[h] = make_block(h, forged[h - 1].hash, forged[h].txs);
    }
    CHECK(verify_chain(forged).ok);
    std::map<std::uint64_t, Digest> trusted;
    for (const auto& b : blocks) trusted[b.height] = b.hash;
    v = verify_chain(forged, trusted);
    CHECK_FALSE(v.ok);
    CHECK(v.first_bad_height == 3);
    v = verify_chain(forged, {{blocks.back().height, blocks.back().hash}});
    CHECK_FALSE(v.ok);

    auto truncated = blocks;
    truncated.pop_back();
    CHECK_FALSE(verify_chain(truncated, {{blocks.back().height, blocks.back().hash}}).ok);
  }

  TEST_CASE("persisted chain restarts to the identical state") {
    const auto dir = scratch_dir("persist");
    const auto file = dir / "community.chain";
    Digest digest{};
    std::uint64_t height = 0;
    {
      Channel ch(small_channel(), file);
      cet::testing::run_intervals(ch, 4, 21);
      digest = ch.state().digest();
      height = ch.height();
    }
    Channel again(small_channel(), file);
    CHECK(again.height() == height);
    CHECK(again.state().digest() == digest);
    for (const auto& [peer, d] : again.peer_digests()) CHECK(d == digest);
    // Keeps appending after restart.
    std::mt19937_64 rng(1);
    cet::testing::run_interval(again, 5, rng, [] {});
    Channel third(small_channel(), file);
    CHECK(third.state().digest() == again.state().digest());
  }

  TEST_CASE("corrupted or truncated chain files are refused") {
    const auto dir = scratch_dir("corrupt");
    const auto file = dir / "c.chain";
    {
      Channel ch(small_channel(), file);
      cet::testing::run_intervals(ch, 2, 4);
    }
    const auto size = std::filesystem::file_size(file);
    {
      std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(static_cast<std::streamoff>(size / 2));
      char c = 0;
      f.seekg(static_cast<std::streamoff>(size / 2));
      f.get(c);
      f.seekp(static_cast<std::streamoff>(size / 2));
      f.put(static_cast<char>(c ^ 0x10));
    }
    CHECK_THROWS_AS(Channel(small_channel(), file), ChainCorrupt);
    std::filesystem::resize_file(file, size - 3);
    CHECK_THROWS_AS(Channel(small_channel(), file), ChainCorrupt);
  }

  TEST_CASE("channels are isolated") {
    Channel a(small_channel("a"));
    Channel b(small_channel("b"));
    const auto for_a = make_transaction("a", "operator", open_spec(1));
    const auto r = b.submit(for_a);
    CHECK(r.status == SubmitStatus::Rejected);
    CHECK(*r.rule == ContractError::Rule::WrongChannel);
    CHECK(a.submit(for_a).accepted());
    a.commit_block();
    CHECK(b.state() == ContractState{});
  }

  TEST_CASE("commit observers see every block in order") {
    Channel ch(small_channel());
    std::vector<std::uint64_t> heights;
    ch.on_commit([&](const CommitReport& report, const ContractState&) { heights.push_back(report.block.height); });
    cet::testing::run_intervals(ch, 2, 8);
    REQUIRE(heights.size() == 8);
    for (std::size_t i = 0; i < heights.size(); ++i) CHECK(heights[i] == i + 1);
  }
}
