#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cet/units.hpp"

namespace cet {

using IntervalId = std::uint64_t;

enum class Side : std::uint8_t { Buy = 0, Sell = 1 };

const char* to_string(Side side);

class CurveError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct BidPoint {
  Energy cumulative;  // quantity offered up to and including this step
  Price limit;

  bool operator==(const BidPoint&) const = default;
};

/// Monotone step function from cumulative quantity to limit price.
struct BidCurve {
  std::string id;
  Side side = Side::Buy;
  std::vector<BidPoint> points;
  std::string owner;   // home id
  std::string device;  // device id within the home
  IntervalId interval = 0;

  bool operator==(const BidCurve&) const = default;

  [[nodiscard]] bool empty() const { return points.empty(); }
  [[nodiscard]] Energy total() const { return points.empty() ? Energy{} : points.back().cumulative; }

  /// Quantity this bid is willing to trade at `price`: for buyers the steps
  /// priced at or above it, for sellers the steps priced at or below it.
  [[nodiscard]] Energy quantity_at(Price price) const;

  /// Throws CurveError when quantities are not strictly increasing and
  /// positive, when prices are not monotone for the side, or when a price lies
  /// outside [0, price_cap].
  void validate(Price price_cap) const;
};

/// Deterministic id for a bid: "<owner>/<device>@<interval>:<side>".
std::string default_bid_id(const std::string& owner, const std::string& device, IntervalId interval, Side side);

}  // namespace cet
