#include "cet/api_json.hpp"

#include <cmath>
#include <sstream>

namespace cet::api {
namespace {

json energy(Energy e) { return units::kwh(e); }

std::string require_string(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) throw SchemaError(std::string("'") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

double require_number(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number()) throw SchemaError(std::string("'") + key + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw SchemaError(std::string("'") + key + "' must be finite");
  return x;
}

std::int64_t require_integer(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw SchemaError(std::string("'") + key + "' must be an integer");
  return v.get<std::int64_t>();
}

json award_json(const auction::Award& a) {
  return {{"bid_id", a.bid.id},
          {"home", a.bid.home},
          {"device", a.bid.device},
          {"side", to_string(a.bid.side)},
          {"quantity_wh", a.quantity.count()},
          {"quantity_kwh", energy(a.quantity)}};
}

json steps_json(const auction::AggregateCurve& curve) {
  json out = json::array();
  Energy cumulative{};
  for (const auto& s : curve.steps) {
    cumulative += s.quantity;
    out.push_back({{"price_milli", s.price.count()},
                   {"price", units::dollars_per_kwh(s.price)},
                   {"cumulative_wh", cumulative.count()},
                   {"bid_id", s.bid.id}});
  }
  return out;
}

}  // namespace

std::string hex(const Bytes& bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

json to_json(const BidCurve& bid) {
  json points = json::array();
  for (const auto& p : bid.points) {
    points.push_back({{"quantity_wh", p.cumulative.count()},
                      {"price_milli", p.limit.count()},
                      {"quantity_kwh", energy(p.cumulative)},
                      {"price", units::dollars_per_kwh(p.limit)}});
  }
  return {{"id", bid.id},
          {"owner", bid.owner},
          {"device", bid.device},
          {"interval", bid.interval},
          {"side", to_string(bid.side)},
          {"points", points}};
}

BidCurve bid_from_json(const json& j, const std::string& owner, IntervalId interval) {
  if (!j.is_object()) throw SchemaError("bid must be a JSON object");
  BidCurve bid;
  bid.owner = j.contains("owner") ? require_string(j, "owner") : owner;
  bid.device = require_string(j, "device");
  if (bid.device.empty()) throw SchemaError("'device' must not be empty");
  bid.interval = j.contains("interval") ? static_cast<IntervalId>(require_integer(j, "interval")) : interval;
  const auto side = require_string(j, "side");
  if (side == "buy") {
    bid.side = Side::Buy;
  } else if (side == "sell") {
    bid.side = Side::Sell;
  } else {
    throw SchemaError("'side' must be \"buy\" or \"sell\"");
  }
  if (!j.contains("points") || !j.at("points").is_array()) throw SchemaError("'points' must be an array");
  for (const auto& p : j.at("points")) {
    if (!p.is_object()) throw SchemaError("each point must be an object");
    BidPoint point;
    try {
      if (p.contains("quantity_wh")) {
        point.cumulative = Energy{require_integer(p, "quantity_wh")};
      } else if (p.contains("quantity_kwh")) {
        point.cumulative = units::energy_round(require_number(p, "quantity_kwh"));
      } else {
        throw SchemaError("point needs quantity_wh or quantity_kwh");
      }
      if (p.contains("price_milli")) {
        point.limit = Price{require_integer(p, "price_milli")};
      } else if (p.contains("price")) {
        point.limit = units::price_round(require_number(p, "price"));
      } else {
        throw SchemaError("point needs price_milli or price");
      }
    } catch (const std::invalid_argument& e) {
      throw SchemaError(e.what());
    }
    bid.points.push_back(point);
  }
  bid.id = j.contains("id") ? require_string(j, "id") : default_bid_id(bid.owner, bid.device, bid.interval, bid.side);
  return bid;
}

json to_json(const auction::ClearingResult& r) {
  json awards = json::array();
  for (const auto& a : r.awards) awards.push_back(award_json(a));
  json fills = json::array();
  for (const auto& a : r.grid_fills) fills.push_back(award_json(a));
  json settlements = json::array();
  for (const auto& s : r.settlements) {
    settlements.push_back({{"home", s.home}, {"amount_micro", s.amount.count()}, {"amount", units::dollars(s.amount)}});
  }
  json signals = json::array();
  for (const auto& s : r.signals) {
    signals.push_back({{"home", s.home},
                       {"device", s.device},
                       {"command", s.command == auction::Command::On ? "on" : "off"},
                       {"setpoint_w", s.setpoint_w}});
  }
  return {{"interval", r.interval},
          {"traded", r.traded()},
          {"mcp_milli", r.mcp ? json(r.mcp->count()) : json(nullptr)},
          {"mcp", r.mcp ? json(units::dollars_per_kwh(*r.mcp)) : json(nullptr)},
          {"cleared_wh", r.cleared.count()},
          {"cleared_kwh", energy(r.cleared)},
          {"awards", awards},
          {"grid_fills", fills},
          {"settlements", settlements},
          {"signals", signals},
          {"encoding", hex(ledger::encode_clearing_result(r))}};
}

json to_json(const ledger::OpenInterval& spec) {
  return {{"interval", spec.interval},
          {"start_s", spec.start_s},
          {"length_s", spec.length_s},
          {"closes_at_s", spec.start_s + spec.length_s},
          {"grid_price_milli", spec.grid_price.count()},
          {"grid_price", units::dollars_per_kwh(spec.grid_price)}};
}

json to_json(const ledger::Measurement& m) {
  json j = {{"interval", m.interval}, {"home", m.home}, {"device", m.device}};
  j["power_kw"] = m.power_kw ? json(*m.power_kw) : json(nullptr);
  if (m.storage) {
    const auto& p = m.storage->params;
    j["storage"] = {{"p_min_kw", p.p_min_kw},     {"p_max_kw", p.p_max_kw}, {"soc_min_kwh", p.soc_min_kwh},
                    {"capacity_kwh", p.soc_max_kwh}, {"eta", p.eta},         {"soc_kwh", m.storage->soc_kwh}};
  } else {
    j["storage"] = nullptr;
  }
  return j;
}

json to_json(const ledger::Payload& payload) {
  return std::visit(
      [](const auto& p) -> json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ledger::CloseInterval>) {
          return {{"interval", p.interval}};
        } else {
          return to_json(p);
        }
      },
      payload);
}

json to_json(const ledger::Transaction& tx) {
  return {{"id", to_hex(tx.id)},
          {"kind", ledger::to_string(tx.kind())},
          {"submitter", tx.submitter},
          {"endorsements", tx.endorsements},
          {"payload", to_json(tx.payload)}};
}

json to_json(const ledger::Block& block) {
  json txs = json::array();
  for (const auto& tx : block.txs) txs.push_back(to_json(tx));
  return {{"height", block.height},
          {"hash", to_hex(block.hash)},
          {"prev_hash", to_hex(block.prev_hash)},
          {"txs", txs},
          {"record", hex(ledger::encode_block_record(block))}};
}

json curves_json(const std::map<std::string, BidCurve>& bids) {
  std::vector<BidCurve> sells;
  std::vector<BidCurve> buys;
  for (const auto& [id, bid] : bids) (bid.side == Side::Sell ? sells : buys).push_back(bid);
  return {{"supply", steps_json(auction::build_curve(sells, auction::CurveSide::Supply))},
          {"demand", steps_json(auction::build_curve(buys, auction::CurveSide::Demand))}};
}

int parse_clock(const std::string& text) {
  int h = 0;
  int m = 0;
  char colon = 0;
  std::istringstream in(text);
  if (!(in >> h >> colon >> m) || colon != ':' || h < 0 || h > 24 || m < 0 || m > 59 || (h == 24 && m != 0)) {
    throw SchemaError("invalid clock time '" + text + "', expected HH:MM");
  }
  return h * 60 + m;
}

bidding::TouSchedule tou_from_json(const json& j) {
  if (!j.is_array()) throw SchemaError("TOU schedule must be an array of windows");
  std::vector<bidding::TouWindow> windows;
  for (const auto& w : j) {
    bidding::TouWindow win;
    win.start_minute = parse_clock(require_string(w, "start"));
    win.end_minute = parse_clock(require_string(w, "end"));
    try {
      win.period = bidding::parse_period(require_string(w, "period"));
    } catch (const std::invalid_argument& e) {
      throw SchemaError(e.what());
    }
    win.price = require_number(w, "price");
    windows.push_back(win);
  }
  try {
    return bidding::TouSchedule(std::move(windows));
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
}

ledger::Measurement measurement_from_json(const json& j, const std::string& home, IntervalId interval) {
  if (!j.is_object()) throw SchemaError("measurement must be a JSON object");
  ledger::Measurement m;
  m.interval = interval;
  m.home = j.contains("home") ? require_string(j, "home") : home;
  m.device = require_string(j, "device");
  if (j.contains("power_kw") && !j.at("power_kw").is_null()) m.power_kw = require_number(j, "power_kw");
  if (j.contains("storage") && !j.at("storage").is_null()) {
    const auto& s = j.at("storage");
    if (!s.is_object()) throw SchemaError("'storage' must be an object");
    ledger::StorageReading r;
    r.params.p_min_kw = require_number(s, "p_min_kw");
    r.params.p_max_kw = require_number(s, "p_max_kw");
    r.params.soc_min_kwh = require_number(s, "soc_min_kwh");
    r.params.soc_max_kwh = require_number(s, "capacity_kwh");
    r.params.eta = require_number(s, "eta");
    r.soc_kwh = require_number(s, "soc_kwh");
    m.storage = r;
  }
  if (!m.power_kw && !m.storage) throw SchemaError("measurement needs power_kw or storage");
  return m;
}

}  // namespace cet::api
