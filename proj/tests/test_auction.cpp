#include <doctest.h>

#include <algorithm>
#include <random>

#include "cet/auction.hpp"
#include "support/auction_oracle.hpp"

using namespace cet;
using namespace cet::auction;
using cet::testing::OracleBid;

namespace {

BidCurve bid(const std::string& id, Side side, double kwh, double price, const std::string& home = "",
             IntervalId interval = 1) {
  BidCurve c;
  c.id = id;
  c.side = side;
  c.owner = home.empty() ? id : home;
  c.device = "dev";
  c.interval = interval;
  c.points.push_back({units::energy_round(kwh), units::price_round(price)});
  return c;
}

ClearingResult clear_bids(const std::vector<BidCurve>& bids) {
  std::vector<BidCurve> sells;
  std::vector<BidCurve> buys;
  for (const auto& b : bids) (b.side == Side::Sell ? sells : buys).push_back(b);
  return clear(build_curve(sells, CurveSide::Supply), build_curve(buys, CurveSide::Demand));
}

// Base market from the merit-order illustration: conventional supply clears
// 0.8 kWh at 0.11 $/kWh.
std::vector<BidCurve> merit_base() {
  return {bid("g1", Side::Sell, 0.3, 0.08), bid("g2", Side::Sell, 1.0, 0.11), bid("g3", Side::Sell, 1.0, 0.15),
          bid("l1", Side::Buy, 0.5, 0.20),  bid("l2", Side::Buy, 0.3, 0.11),  bid("l3", Side::Buy, 1.0, 0.07),
          bid("l4", Side::Buy, 0.5, 0.03)};
}

}  // namespace

TEST_SUITE("auction") {
  TEST_CASE("build_curve orders supply ascending with id tie-break") {
    std::vector<BidCurve> sells{bid("b", Side::Sell, 2.0, 0.10), bid("a", Side::Sell, 1.0, 0.05)};
    auto curve = build_curve(sells, CurveSide::Supply);
    REQUIRE(curve.steps.size() == 2);
    CHECK(curve.steps[0].price == Price{50});
    CHECK(curve.steps[1].price == Price{100});
    CHECK(curve.total() == Energy{3000});

    std::vector<BidCurve> tied{bid("z", Side::Sell, 1.0, 0.05), bid("m", Side::Sell, 1.0, 0.05)};
    curve = build_curve(tied, CurveSide::Supply);
    CHECK(curve.steps[0].bid.id == "m");
    CHECK(curve.steps[1].bid.id == "z");

    CHECK(build_curve({}, CurveSide::Demand).steps.empty());
  }

  TEST_CASE("build_curve rejects mixed input") {
    std::vector<BidCurve> mixed{bid("a", Side::Sell, 1.0, 0.05), bid("b", Side::Buy, 1.0, 0.05)};
    CHECK_THROWS_AS(build_curve(mixed, CurveSide::Supply), AuctionError);
    std::vector<BidCurve> intervals{bid("a", Side::Sell, 1.0, 0.05, "", 1), bid("b", Side::Sell, 1.0, 0.05, "", 2)};
    CHECK_THROWS_AS(build_curve(intervals, CurveSide::Supply), AuctionError);
    std::vector<BidCurve> dup{bid("a", Side::Sell, 1.0, 0.05), bid("a", Side::Sell, 1.0, 0.06)};
    CHECK_THROWS_AS(build_curve(dup, CurveSide::Supply), AuctionError);
  }

  TEST_CASE("no trade when the curves never cross") {
    auto r = clear_bids({bid("s", Side::Sell, 1.0, 0.12), bid("b", Side::Buy, 1.0, 0.11)});
    CHECK_FALSE(r.mcp.has_value());
    CHECK(r.cleared == Energy{0});
    CHECK_THROWS_AS(settle(r), AuctionError);
  }

  TEST_CASE("single buyer and seller clear at the midpoint") {
    auto r = clear_bids({bid("s", Side::Sell, 1.0, 0.05), bid("b", Side::Buy, 1.0, 0.11)});
    CHECK(r.cleared == Energy{1000});
    REQUIRE(r.mcp);
    CHECK(*r.mcp == Price{80});
    const auto s = settle(r);
    REQUIRE(s.size() == 2);
    CHECK(s[0] == Settlement{"b", Money{-80000}});
    CHECK(s[1] == Settlement{"s", Money{80000}});
  }

  TEST_CASE("merit-order pair: extra DER supply lowers the price and serves more") {
    auto base = merit_base();
    auto before = clear_bids(base);
    REQUIRE(before.mcp);
    CHECK(*before.mcp == Price{110});
    CHECK(before.cleared == Energy{800});

    base.push_back(bid("pv1", Side::Sell, 0.6, 0.00));
    base.push_back(bid("pv2", Side::Sell, 1.2, 0.07));
    auto after = clear_bids(base);
    REQUIRE(after.mcp);
    CHECK(*after.mcp == Price{70});
    CHECK(after.cleared == Energy{1800});
  }

  TEST_CASE("settlement of two half-kWh buyers") {
    auto r = clear_bids({bid("s", Side::Sell, 1.0, 0.10), bid("b1", Side::Buy, 0.5, 0.10), bid("b2", Side::Buy, 0.5, 0.10)});
    REQUIRE(r.mcp);
    CHECK(*r.mcp == Price{100});
    for (const auto& s : settle(r)) {
      if (s.home != "s") CHECK(s.amount == Money{-50000});
    }
  }

  TEST_CASE("marginal side is shared pro-rata") {
    auto r = clear_bids({bid("s", Side::Sell, 1.0, 0.05), bid("b1", Side::Buy, 1.0, 0.10), bid("b2", Side::Buy, 3.0, 0.10)});
    CHECK(r.cleared == Energy{1000});
    CHECK(r.awarded("b1") == Energy{250});
    CHECK(r.awarded("b2") == Energy{750});

    // 1000 Wh over three equal bids: 333/333/333 plus one leftover Wh to the
    // first in stack order.
    r = clear_bids({bid("s", Side::Sell, 1.0, 0.05), bid("x", Side::Buy, 1.0, 0.10), bid("y", Side::Buy, 1.0, 0.10),
                    bid("z", Side::Buy, 1.0, 0.10)});
    CHECK(r.awarded("x") == Energy{334});
    CHECK(r.awarded("y") == Energy{333});
    CHECK(r.awarded("z") == Energy{333});
  }

  TEST_CASE("multi-step curves use cumulative quantities") {
    BidCurve buyer;
    buyer.id = "b";
    buyer.side = Side::Buy;
    buyer.owner = "h";
    buyer.device = "ev";
    buyer.interval = 1;
    buyer.points = {{Energy{500}, Price{200}}, {Energy{1500}, Price{60}}};
    auto r = clear_bids({buyer, bid("s", Side::Sell, 2.0, 0.08)});
    CHECK(r.cleared == Energy{500});
    CHECK(*r.mcp == Price{140});
  }

  TEST_CASE("oracle equivalence on random single-step instances") {
    std::mt19937_64 rng(2024);
    for (int n = 0; n < 300; ++n) {
      const auto instance = cet::testing::random_instance(rng);
      const auto expected = cet::testing::brute_force_clear(instance);
      std::vector<BidCurve> bids;
      for (const auto& b : instance) bids.push_back(cet::testing::to_curve(b));
      const auto r = clear_bids(bids);
      REQUIRE(r.cleared == expected.traded);
      REQUIRE(r.mcp == expected.mcp);
      std::set<std::string> awarded;
      for (const auto& a : r.awards)
        if (a.quantity > Energy{0}) awarded.insert(a.bid.id);
      REQUIRE(awarded == expected.awarded);
    }
  }

  TEST_CASE("property: price bounds, balance, zero-sum, order independence") {
    std::mt19937_64 rng(99);
    for (int n = 0; n < 300; ++n) {
      const auto instance = cet::testing::random_instance(rng);
      std::vector<BidCurve> bids;
      for (const auto& b : instance) bids.push_back(cet::testing::to_curve(b));
      const auto r = clear_bids(bids);

      Energy bought{};
      Energy sold{};
      for (const auto& a : r.awards) {
        if (a.quantity == Energy{0}) continue;
        const auto& b = *std::find_if(bids.begin(), bids.end(), [&](const BidCurve& c) { return c.id == a.bid.id; });
        REQUIRE(r.mcp);
        if (b.side == Side::Buy) {
          CHECK(b.points[0].limit >= *r.mcp);
          bought += a.quantity;
        } else {
          CHECK(b.points[0].limit <= *r.mcp);
          sold += a.quantity;
        }
        CHECK(a.quantity <= b.total());
      }
      CHECK(bought == sold);
      CHECK(bought == r.cleared);
      if (r.traded()) {
        Money total{};
        for (const auto& s : settle(r)) total += s.amount;
        CHECK(total == Money{0});
      }

      std::shuffle(bids.begin(), bids.end(), rng);
      CHECK(clear_bids(bids) == r);
    }
  }

  TEST_CASE("property: a zero-price sell offer never raises mcp nor lowers traded quantity") {
    std::mt19937_64 rng(5);
    for (int n = 0; n < 300; ++n) {
      auto instance = cet::testing::random_instance(rng);
      std::vector<BidCurve> bids;
      for (const auto& b : instance) bids.push_back(cet::testing::to_curve(b));
      const auto before = clear_bids(bids);
      bids.push_back(cet::testing::to_curve({"zero", Side::Sell, Energy{100 * static_cast<int>(1 + rng() % 20)}, Price{0}}));
      const auto after = clear_bids(bids);
      CHECK(after.cleared >= before.cleared);
      if (before.mcp && after.mcp) CHECK(*after.mcp <= *before.mcp);
    }
  }

  TEST_CASE("emit_signals converts awards to power") {
    ClearingResult r;
    r.interval = 3;
    r.mcp = Price{50};
    r.cleared = Energy{3000};
    r.awards = {{{"a", "h1", "bess", Side::Buy}, Energy{3000}},
                {{"b", "h2", "bess", Side::Sell}, Energy{3000}},
                {{"c", "h3", "st", Side::Buy}, Energy{0}}};
    auto signals = emit_signals(r, 1800);
    REQUIRE(signals.size() == 3);
    CHECK(signals[0] == ControlSignal{"h1", "bess", Command::On, 6000, 3});
    CHECK(signals[1] == ControlSignal{"h2", "bess", Command::On, -6000, 3});
    CHECK(signals[2] == ControlSignal{"h3", "st", Command::Off, 0, 3});

    signals = emit_signals(r, 3600);
    CHECK(signals[1].setpoint_w == -3000);

    Envelope narrow = [](const std::string& home, const std::string&) -> std::optional<der::PowerRange> {
      if (home == "h1") return der::PowerRange{-5.0, 5.0};
      return std::nullopt;
    };
    CHECK_THROWS_AS(emit_signals(r, 1800, narrow), AuctionError);
  }

  TEST_CASE("grid backstop tops up buyers willing to pay the grid price") {
    std::vector<BidCurve> bids{bid("pv", Side::Sell, 1.0, 0.01), bid("ev", Side::Buy, 3.0, 1.00),
                               bid("bess", Side::Buy, 2.0, 0.02)};
    auto r = run_market(bids, 1, 3600, Price{82});
    CHECK(r.cleared == Energy{1000});
    REQUIRE(r.grid_fills.size() == 1);
    CHECK(r.grid_fills[0].bid.id == "ev");
    CHECK(r.grid_fills[0].quantity == Energy{2000});
    for (const auto& s : r.signals) {
      if (s.home == "ev") CHECK(s.setpoint_w == 3000);
      if (s.home == "bess") CHECK(s.command == Command::Off);
    }
  }
}
