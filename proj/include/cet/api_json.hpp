#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cet/bidding.hpp"
#include "cet/contract.hpp"
#include "cet/ledger.hpp"

// JSON wire format of the market API. Exact integer fields (Wh, m$/kWh, u$)
// are authoritative; the float companions are for display.

namespace cet::api {

using nlohmann::json;

/// Malformed request content, reported as HTTP 422 (or 400 for non-JSON).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json to_json(const BidCurve& bid);
/// Reads {device, side, points[{quantity_wh|quantity_kwh, price_milli|price}]}
/// plus optional id and owner. Missing id/owner/interval are filled from the
/// arguments. Does not validate monotonicity; BidCurve::validate does.
BidCurve bid_from_json(const json& j, const std::string& owner, IntervalId interval);

json to_json(const auction::ClearingResult& result);
json to_json(const ledger::Measurement& m);
json to_json(const ledger::Payload& payload);
json to_json(const ledger::Transaction& tx);
/// Block with its persisted record as hex.
json to_json(const ledger::Block& block);
json to_json(const ledger::OpenInterval& spec);

/// Aggregate supply and demand step curves of the bids, as
/// [{price_milli, cumulative_wh}] per side in merit order.
json curves_json(const std::map<std::string, BidCurve>& bids);

ledger::Measurement measurement_from_json(const json& j, const std::string& home, IntervalId interval);

std::string hex(const Bytes& bytes);

/// "HH:MM" to minutes since midnight; "24:00" is allowed.
int parse_clock(const std::string& text);
/// [{start, end, period, price}] with clock times and $/kWh prices.
bidding::TouSchedule tou_from_json(const json& j);

}  // namespace cet::api
