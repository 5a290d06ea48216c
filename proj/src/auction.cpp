#include "cet/auction.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

namespace cet::auction {
namespace {

bool stack_before(const CurveStep& a, const CurveStep& b, CurveSide side) {
  if (a.price != b.price) return side == CurveSide::Supply ? a.price < b.price : a.price > b.price;
  if (a.bid.id != b.bid.id) return a.bid.id < b.bid.id;
  return a.index < b.index;
}

std::vector<CurveStep> stacked(const AggregateCurve& curve) {
  auto steps = curve.steps;
  std::stable_sort(steps.begin(), steps.end(),
                   [&](const CurveStep& a, const CurveStep& b) { return stack_before(a, b, curve.side); });
  return steps;
}

// Fill `traded` units into a stacked side. Steps strictly better than
// `marginal` are filled in full, the rest is shared pro-rata at `marginal`.
std::vector<Energy> fill_side(const std::vector<CurveStep>& steps, Energy traded, Price marginal) {
  std::vector<Energy> fills(steps.size());
  Energy remaining = traded;
  std::vector<std::size_t> tied;
  Energy tied_total{};
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].price == marginal) {
      tied.push_back(i);
      tied_total += steps[i].quantity;
    } else if (tied.empty()) {
      // Strictly better than the marginal price: stacked ahead of it.
      fills[i] = steps[i].quantity;
      remaining -= steps[i].quantity;
    }
  }
  if (remaining < Energy{0} || remaining > tied_total) throw AuctionError("inconsistent marginal fill");
  if (remaining == tied_total) {
    for (auto i : tied) fills[i] = steps[i].quantity;
    return fills;
  }

  __extension__ typedef __int128 Wide;
  struct Share {
    std::size_t step;
    Wide remainder;
  };
  std::vector<Share> shares;
  Energy assigned{};
  for (auto i : tied) {
    const Wide numerator = static_cast<Wide>(remaining.count()) * steps[i].quantity.count();
    const auto whole = static_cast<Energy::rep>(numerator / tied_total.count());
    fills[i] = Energy{whole};
    assigned += fills[i];
    shares.push_back({i, numerator % tied_total.count()});
  }
  std::stable_sort(shares.begin(), shares.end(),
                   [](const Share& a, const Share& b) { return a.remainder > b.remainder; });
  auto leftover = (remaining - assigned).count();
  for (std::size_t k = 0; leftover > 0; ++k, --leftover) fills[shares[k].step] += Energy{1};
  return fills;
}

void append_fills(std::map<std::string, Award>& awards, const std::vector<CurveStep>& steps,
                  const std::vector<Energy>& fills) {
  for (std::size_t i = 0; i < steps.size(); ++i) awards.at(steps[i].bid.id).quantity += fills[i];
}

}  // namespace

BidRef ref_of(const BidCurve& bid) { return {bid.id, bid.owner, bid.device, bid.side}; }

Energy AggregateCurve::total() const {
  return std::accumulate(steps.begin(), steps.end(), Energy{},
                         [](Energy acc, const CurveStep& s) { return acc + s.quantity; });
}

Energy ClearingResult::awarded(const std::string& bid_id) const {
  for (const auto& award : awards) {
    if (award.bid.id == bid_id) return award.quantity;
  }
  return Energy{};
}

AggregateCurve build_curve(std::span<const BidCurve> bids, CurveSide side) {
  const Side expected = side == CurveSide::Supply ? Side::Sell : Side::Buy;
  AggregateCurve curve;
  curve.side = side;
  std::set<std::string> seen;
  for (std::size_t b = 0; b < bids.size(); ++b) {
    const auto& bid = bids[b];
    if (bid.side != expected) throw AuctionError("bid '" + bid.id + "' is on the wrong side for this curve");
    if (b == 0) {
      curve.interval = bid.interval;
    } else if (bid.interval != curve.interval) {
      throw AuctionError("bids from different intervals cannot be stacked together");
    }
    if (!seen.insert(bid.id).second) throw AuctionError("duplicate bid id '" + bid.id + "'");
    const BidRef ref = ref_of(bid);
    curve.bids.push_back(ref);
    Energy previous{};
    for (std::size_t i = 0; i < bid.points.size(); ++i) {
      const Energy quantity = bid.points[i].cumulative - previous;
      if (quantity <= Energy{0}) throw AuctionError("bid '" + bid.id + "' has non-increasing quantities");
      curve.steps.push_back({bid.points[i].limit, quantity, ref, i});
      previous = bid.points[i].cumulative;
    }
  }
  std::sort(curve.bids.begin(), curve.bids.end());
  curve.steps = stacked(curve);
  return curve;
}

ClearingResult clear(const AggregateCurve& supply, const AggregateCurve& demand) {
  if (supply.side != CurveSide::Supply || demand.side != CurveSide::Demand) {
    throw AuctionError("clear expects a supply curve and a demand curve");
  }
  const bool both = !supply.bids.empty() && !demand.bids.empty();
  if (both && supply.interval != demand.interval) throw AuctionError("curves belong to different intervals");

  ClearingResult result;
  result.interval = supply.bids.empty() ? demand.interval : supply.interval;

  std::map<std::string, Award> awards;
  for (const auto* curve : {&supply, &demand}) {
    for (const auto& ref : curve->bids) {
      if (!awards.emplace(ref.id, Award{ref, Energy{}}).second) throw AuctionError("duplicate bid id '" + ref.id + "'");
    }
  }

  const auto sells = stacked(supply);
  const auto buys = stacked(demand);

  Energy traded{};
  Price last_sell{};
  Price last_buy{};
  std::size_t i = 0;
  std::size_t j = 0;
  Energy sell_left = sells.empty() ? Energy{} : sells[0].quantity;
  Energy buy_left = buys.empty() ? Energy{} : buys[0].quantity;
  while (i < sells.size() && j < buys.size() && buys[j].price >= sells[i].price) {
    const Energy step = std::min(sell_left, buy_left);
    traded += step;
    last_sell = sells[i].price;
    last_buy = buys[j].price;
    sell_left -= step;
    buy_left -= step;
    if (sell_left == Energy{0} && ++i < sells.size()) sell_left = sells[i].quantity;
    if (buy_left == Energy{0} && ++j < buys.size()) buy_left = buys[j].quantity;
  }

  if (traded > Energy{0}) {
    result.cleared = traded;
    result.mcp = Price{(last_sell.count() + last_buy.count()) / 2};
    append_fills(awards, sells, fill_side(sells, traded, last_sell));
    append_fills(awards, buys, fill_side(buys, traded, last_buy));
  }
  for (auto& [id, award] : awards) result.awards.push_back(std::move(award));
  return result;
}

std::vector<Settlement> settle(const ClearingResult& result) {
  if (!result.traded()) throw AuctionError("nothing to settle: the interval cleared without trade");
  const Price mcp = *result.mcp;
  std::map<std::string, Money> per_home;
  Energy bought{};
  Energy sold{};
  for (const auto& award : result.awards) {
    if (award.quantity == Energy{0}) continue;
    const Money value = mcp * award.quantity;
    if (award.bid.side == Side::Buy) {
      per_home[award.bid.home] -= value;
      bought += award.quantity;
    } else {
      per_home[award.bid.home] += value;
      sold += award.quantity;
    }
  }
  if (bought != sold) throw AuctionError("awards are not balanced");
  std::vector<Settlement> out;
  for (const auto& [home, amount] : per_home) out.push_back({home, amount});
  return out;
}

std::vector<Award> grid_backstop(const ClearingResult& result, std::span<const BidCurve> bids, Price grid_price) {
  std::vector<Award> fills;
  for (const auto& bid : bids) {
    if (bid.side != Side::Buy) continue;
    const Energy willing = bid.quantity_at(grid_price);
    const Energy extra = willing - result.awarded(bid.id);
    if (extra > Energy{0}) fills.push_back({ref_of(bid), extra});
  }
  std::sort(fills.begin(), fills.end(), [](const Award& a, const Award& b) { return a.bid.id < b.bid.id; });
  return fills;
}

std::vector<ControlSignal> emit_signals(const ClearingResult& result, std::int64_t interval_seconds,
                                        const Envelope& envelope) {
  if (interval_seconds <= 0) throw AuctionError("interval length must be positive");
  std::map<std::pair<std::string, std::string>, Energy> net;
  for (const auto& award : result.awards) {
    auto& slot = net[{award.bid.home, award.bid.device}];
    slot += award.bid.side == Side::Buy ? award.quantity : -award.quantity;
  }
  for (const auto& fill : result.grid_fills) net[{fill.bid.home, fill.bid.device}] += fill.quantity;

  std::vector<ControlSignal> signals;
  for (const auto& [key, energy] : net) {
    ControlSignal signal;
    signal.home = key.first;
    signal.device = key.second;
    signal.interval = result.interval;
    // Wh over seconds to W, truncated toward zero so delivered energy never
    // exceeds the award.
    signal.setpoint_w = energy.count() * 3600 / interval_seconds;
    signal.command = signal.setpoint_w != 0 ? Command::On : Command::Off;
    if (envelope) {
      if (const auto range = envelope(signal.home, signal.device)) {
        const double kw = static_cast<double>(signal.setpoint_w) / 1000.0;
        if (!range->contains(kw, 1e-6)) {
          throw AuctionError("setpoint for " + signal.home + "/" + signal.device + " is outside its envelope");
        }
      }
    }
    signals.push_back(std::move(signal));
  }
  return signals;
}

ClearingResult run_market(std::span<const BidCurve> bids, IntervalId interval, std::int64_t interval_seconds,
                          std::optional<Price> grid_price, const Envelope& envelope) {
  std::vector<BidCurve> sells;
  std::vector<BidCurve> buys;
  for (const auto& bid : bids) {
    if (bid.interval != interval) throw AuctionError("bid '" + bid.id + "' belongs to another interval");
    (bid.side == Side::Sell ? sells : buys).push_back(bid);
  }
  auto supply = build_curve(sells, CurveSide::Supply);
  auto demand = build_curve(buys, CurveSide::Demand);
  supply.interval = demand.interval = interval;
  auto result = clear(supply, demand);
  if (result.traded()) result.settlements = settle(result);
  if (grid_price) result.grid_fills = grid_backstop(result, bids, *grid_price);
  result.signals = emit_signals(result, interval_seconds, envelope);
  return result;
}

}  // namespace cet::auction
