#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cet/der.hpp"
#include "cet/market.hpp"

// Uniform-price double auction.
//
// Supply steps are stacked by ascending price and demand steps by descending
// price, ties broken by bid id then step position. The traded quantity is the
// longest prefix on which demand price >= supply price. The clearing price is
// the midpoint (rounded down to a whole milli-dollar) of the highest awarded
// sell price and the lowest awarded buy price, so every awarded seller's limit
// <= mcp <= every awarded buyer's limit. On each side, steps priced strictly
// better than the marginal price are filled completely and the remainder is
// split pro-rata across the steps at the marginal price (largest remainder,
// ties by stack order), which keeps buy and sell totals exactly equal.

namespace cet::auction {

class AuctionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CurveSide : std::uint8_t { Supply = 0, Demand = 1 };

struct BidRef {
  std::string id;
  std::string home;
  std::string device;
  Side side = Side::Buy;

  auto operator<=>(const BidRef&) const = default;
};

BidRef ref_of(const BidCurve& bid);

struct CurveStep {
  Price price;
  Energy quantity;
  BidRef bid;
  std::size_t index = 0;  // step position within its bid
};

struct AggregateCurve {
  CurveSide side = CurveSide::Supply;
  IntervalId interval = 0;
  std::vector<CurveStep> steps;
  std::vector<BidRef> bids;  // every contributing bid, including empty ones

  [[nodiscard]] Energy total() const;
};

struct Award {
  BidRef bid;
  Energy quantity;

  bool operator==(const Award&) const = default;
};

struct Settlement {
  std::string home;
  Money amount;  // positive: receives, negative: pays

  bool operator==(const Settlement&) const = default;
};

enum class Command : std::uint8_t { Off = 0, On = 1 };

struct ControlSignal {
  std::string home;
  std::string device;
  Command command = Command::Off;
  std::int64_t setpoint_w = 0;  // + consuming/charging, - generating/discharging
  IntervalId interval = 0;

  bool operator==(const ControlSignal&) const = default;
};

struct ClearingResult {
  IntervalId interval = 0;
  std::optional<Price> mcp;
  Energy cleared;
  std::vector<Award> awards;  // one entry per submitted bid, zero when not awarded
  std::vector<Award> grid_fills;
  std::vector<Settlement> settlements;
  std::vector<ControlSignal> signals;

  bool operator==(const ClearingResult&) const = default;

  [[nodiscard]] bool traded() const { return mcp.has_value() && cleared > Energy{0}; }
  [[nodiscard]] Energy awarded(const std::string& bid_id) const;
};

/// Stack bids of one side. Throws on mixed sides, mixed intervals, or
/// duplicate bid ids. Empty curves contribute no steps.
AggregateCurve build_curve(std::span<const BidCurve> bids, CurveSide side);

ClearingResult clear(const AggregateCurve& supply, const AggregateCurve& demand);

/// Uniform-price payments at the mcp, summed per home. Zero-sum.
std::vector<Settlement> settle(const ClearingResult& result);

/// Energy the grid supplies on top of the local award to every buy bid that
/// is willing to pay at least `grid_price`: the bid's quantity at that price
/// minus what it won locally.
std::vector<Award> grid_backstop(const ClearingResult& result, std::span<const BidCurve> bids, Price grid_price);

/// Feasible power envelope of a device, when known.
using Envelope = std::function<std::optional<der::PowerRange>(const std::string& home, const std::string& device)>;

/// One signal per bidding device: On at the net awarded energy (local plus
/// grid fills) divided by the interval, Off when nothing was awarded.
/// Throws when a setpoint falls outside the envelope reported for the device.
std::vector<ControlSignal> emit_signals(const ClearingResult& result, std::int64_t interval_seconds,
                                        const Envelope& envelope = {});

/// Whole market step: stack, clear, settle, optionally backstop from the grid,
/// and emit control signals.
ClearingResult run_market(std::span<const BidCurve> bids, IntervalId interval, std::int64_t interval_seconds,
                          std::optional<Price> grid_price = std::nullopt, const Envelope& envelope = {});

}  // namespace cet::auction
