#include "cet/market.hpp"

namespace cet {

const char* to_string(Side side) { return side == Side::Buy ? "buy" : "sell"; }

Energy BidCurve::quantity_at(Price price) const {
  Energy taken{};
  Energy previous{};
  for (const auto& point : points) {
    const bool willing = side == Side::Buy ? point.limit >= price : point.limit <= price;
    if (willing) taken += point.cumulative - previous;
    previous = point.cumulative;
  }
  return taken;
}

void BidCurve::validate(Price price_cap) const {
  Energy previous{};
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& point = points[i];
    if (point.cumulative <= previous) throw CurveError("bid quantities must be strictly increasing and positive");
    if (point.limit < Price{0}) throw CurveError("bid price must be non-negative");
    if (point.limit > price_cap) throw CurveError("bid price exceeds the price cap");
    if (i > 0) {
      const Price before = points[i - 1].limit;
      if (side == Side::Buy && point.limit > before) throw CurveError("buy curve prices must be non-increasing");
      if (side == Side::Sell && point.limit < before) throw CurveError("sell curve prices must be non-decreasing");
    }
    previous = point.cumulative;
  }
}

std::string default_bid_id(const std::string& owner, const std::string& device, IntervalId interval, Side side) {
  return owner + "/" + device + "@" + std::to_string(interval) + ":" + to_string(side);
}

}  // namespace cet
