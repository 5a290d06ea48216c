#include "cet/bidding.hpp"

#include <algorithm>
#include <cmath>

namespace cet::bidding {
namespace {

constexpr int kMinutesPerDay = 24 * 60;
constexpr double kHelpfulChargeMarkup = 0.01;  // $/kWh above the PV floor
constexpr double kSelfishSellDiscount = 0.001;  // $/kWh below the on-peak rate

BidCurve single_step(Side side, Energy quantity, Price price, const BidTag& tag) {
  BidCurve curve;
  curve.id = default_bid_id(tag.home, tag.device, tag.interval, side);
  curve.side = side;
  curve.owner = tag.home;
  curve.device = tag.device;
  curve.interval = tag.interval;
  if (quantity > Energy{0}) curve.points.push_back({quantity, price});
  return curve;
}

Price capped(double price, double cap) { return units::price_round(std::clamp(price, 0.0, cap)); }

}  // namespace

const char* to_string(Strategy strategy) { return strategy == Strategy::Selfish ? "selfish" : "helpful"; }

const char* to_string(Period period) {
  switch (period) {
    case Period::OffPeak:
      return "off_peak";
    case Period::MidPeak:
      return "mid_peak";
    case Period::OnPeak:
      return "on_peak";
  }
  return "?";
}

Strategy parse_strategy(const std::string& text) {
  if (text == "selfish") return Strategy::Selfish;
  if (text == "helpful") return Strategy::Helpful;
  throw std::invalid_argument("unknown strategy '" + text + "'");
}

Period parse_period(const std::string& text) {
  if (text == "off_peak") return Period::OffPeak;
  if (text == "mid_peak") return Period::MidPeak;
  if (text == "on_peak") return Period::OnPeak;
  throw std::invalid_argument("unknown TOU period '" + text + "'");
}

TouSchedule::TouSchedule(std::vector<TouWindow> windows) : windows_(std::move(windows)) {
  std::sort(windows_.begin(), windows_.end(),
            [](const TouWindow& a, const TouWindow& b) { return a.start_minute < b.start_minute; });
  int cursor = 0;
  for (const auto& w : windows_) {
    if (w.start_minute != cursor || w.end_minute <= w.start_minute || w.end_minute > kMinutesPerDay) {
      throw std::invalid_argument("TOU windows must partition the day");
    }
    if (!(w.price > 0.0)) throw std::invalid_argument("TOU prices must be positive");
    cursor = w.end_minute;
  }
  if (cursor != kMinutesPerDay) throw std::invalid_argument("TOU windows must partition the day");
  const auto off = price_of(Period::OffPeak);
  const auto mid = price_of(Period::MidPeak);
  const auto on = price_of(Period::OnPeak);
  if (!(on >= mid && mid >= off)) throw std::invalid_argument("TOU prices must satisfy on >= mid >= off");
}

TouSchedule TouSchedule::default_schedule() {
  return TouSchedule({
      {0, 7 * 60, Period::OffPeak, 0.082},
      {7 * 60, 11 * 60, Period::MidPeak, 0.113},
      {11 * 60, 17 * 60, Period::OnPeak, 0.170},
      {17 * 60, 19 * 60, Period::MidPeak, 0.113},
      {19 * 60, 24 * 60, Period::OffPeak, 0.082},
  });
}

const TouWindow& TouSchedule::at(double t_hours) const {
  if (windows_.empty()) throw std::logic_error("empty TOU schedule");
  double minute = std::fmod(t_hours * 60.0, static_cast<double>(kMinutesPerDay));
  if (minute < 0) minute += kMinutesPerDay;
  for (const auto& w : windows_) {
    if (minute >= w.start_minute && minute < w.end_minute) return w;
  }
  return windows_.back();
}

double TouSchedule::price_of(Period period) const {
  // Periods may occur in several windows; they share one price, take the first.
  for (const auto& w : windows_) {
    if (w.period == period) return w.price;
  }
  // A schedule without this class: fall back to the nearest cheaper class.
  if (period == Period::OnPeak) return price_of(Period::MidPeak);
  if (period == Period::MidPeak) return price_of(Period::OffPeak);
  throw std::invalid_argument("TOU schedule has no off-peak window");
}

void LocalContext::validate() const {
  if (excess_pv_kwh < 0.0 || net_load_kwh < 0.0) throw std::invalid_argument("local energies must be >= 0");
  if (excess_pv_kwh > 0.0 && net_load_kwh > 0.0) {
    throw std::invalid_argument("a home cannot have both excess PV and net load");
  }
  if (!(price_cap > 0.0)) throw std::invalid_argument("price cap must be positive");
}

BidCurve st_bid_curve(Strategy strategy, const der::StParams& params, double indoor_c, const LocalContext& ctx,
                      double interval_h, const BidTag& tag, double base_price) {
  const double deviation = std::max(0.0, indoor_c - params.setpoint_c);
  if (deviation <= 0.0) return single_step(Side::Buy, Energy{}, Price{}, tag);
  // The helpful curve may never be steeper than the selfish one.
  const double saturation =
      strategy == Strategy::Selfish ? kStSelfishSaturation : std::max(params.deadband_c, kStSelfishSaturation);
  const double base = std::min(base_price, ctx.price_cap);
  const double ratio = deviation / saturation;
  const double price = base + (ctx.price_cap - base) * ratio * ratio;
  const Energy quantity = units::energy_floor(params.hvac_kw * interval_h);
  return single_step(Side::Buy, quantity, capped(price, ctx.price_cap), tag);
}

double ev_full_charge_kwh(const der::EvParams& params, double soc_kwh, double interval_h) {
  const auto range = der::bess_feasible_range(params.storage, soc_kwh, interval_h);
  const double rate_limited = std::max(0.0, range.hi_kw) * interval_h;
  const double needed = std::max(0.0, (params.soc_req_kwh - soc_kwh) / params.storage.eta);
  return std::min(rate_limited, needed);
}

namespace {

// Full-rate EV quantity in Wh. When the requirement binds, round up (with a
// little margin) so the requirement is met exactly despite float steps; never
// beyond what the charger can physically take.
Energy ev_full_charge(const der::EvParams& params, double soc_kwh, double interval_h) {
  const auto range = der::bess_feasible_range(params.storage, soc_kwh, interval_h);
  const Energy rate_limited = units::energy_floor(std::max(0.0, range.hi_kw) * interval_h);
  const double needed = (params.soc_req_kwh - soc_kwh) / params.storage.eta;
  if (needed <= 0.0) return Energy{};
  const Energy needed_wh{static_cast<Energy::rep>(std::ceil(needed * units::kWhPerKwh + 1e-3))};
  return std::min(rate_limited, needed_wh);
}

}  // namespace

BidCurve ev_bid_curve(Strategy strategy, const der::EvParams& params, double soc_kwh, double now_h,
                      double interval_h, const LocalContext& ctx, const BidTag& tag) {
  if (now_h < params.t_arr_h - der::kTolerance || now_h >= params.t_dep_h) {
    throw std::invalid_argument("EV bid requested outside its stay");
  }
  const Energy full = ev_full_charge(params, soc_kwh, interval_h);
  const Price cap = units::price_round(ctx.price_cap);
  if (strategy == Strategy::Selfish) return single_step(Side::Buy, full, cap, tag);

  double flexible_until = now_h;
  try {
    flexible_until = der::ev_latest_flexible_time(params, soc_kwh, now_h, interval_h);
  } catch (const der::ModelError& e) {
    // Deadline already out of reach: charge as fast as possible.
    if (e.kind() != der::ModelError::Kind::InfeasibleDeadline) throw;
  }
  if (now_h >= flexible_until - der::kTolerance) return single_step(Side::Buy, full, cap, tag);
  const double span = flexible_until - params.t_arr_h;
  const double fraction = span > 0.0 ? std::clamp((now_h - params.t_arr_h) / span, 0.0, 1.0) : 1.0;
  const Energy ramped = units::energy_floor(fraction * units::kwh(full));
  return single_step(Side::Buy, ramped, capped(ctx.tou_price, ctx.price_cap), tag);
}

std::vector<BidCurve> bess_bids(Strategy strategy, const der::BessParams& params, double soc_kwh,
                                const LocalContext& ctx, const TouSchedule& tou, double interval_h,
                                const BidTag& tag) {
  const auto range = der::bess_feasible_range(params, soc_kwh, interval_h);
  const double charge_kwh = std::max(0.0, range.hi_kw) * interval_h;
  const double discharge_kwh = std::max(0.0, -range.lo_kw) * interval_h;

  std::vector<BidCurve> bids;
  auto emit = [&](Side side, double kwh, double price) {
    auto curve = single_step(side, units::energy_floor(kwh), capped(price, ctx.price_cap), tag);
    if (!curve.empty()) bids.push_back(std::move(curve));
  };

  if (strategy == Strategy::Selfish) {
    if (ctx.tou_period == Period::OffPeak || ctx.excess_pv_kwh > 0.0) {
      emit(Side::Buy, charge_kwh, tou.price_of(Period::OffPeak));
    }
    if (ctx.tou_period == Period::OnPeak) {
      emit(Side::Sell, discharge_kwh, tou.price_of(Period::OnPeak) - kSelfishSellDiscount);
    }
  } else {
    if (ctx.excess_pv_kwh > 0.0) {
      emit(Side::Buy, std::min(ctx.excess_pv_kwh, charge_kwh), ctx.pv_floor_price + kHelpfulChargeMarkup);
    }
    if (ctx.net_load_kwh > 0.0) {
      emit(Side::Sell, std::min(ctx.net_load_kwh, discharge_kwh), ctx.tou_price);
    }
  }
  return bids;
}

BidCurve pv_offer(double forecast_kwh, double floor_price, const BidTag& tag) {
  if (forecast_kwh < 0.0) throw std::invalid_argument("PV forecast must be non-negative");
  return single_step(Side::Sell, units::energy_floor(forecast_kwh), units::price_round(floor_price), tag);
}

BidCurve load_bid(double net_load_kwh, double tou_price, const BidTag& tag) {
  if (net_load_kwh < 0.0) throw std::invalid_argument("net load must be non-negative");
  return single_step(Side::Buy, units::energy_floor(net_load_kwh), units::price_round(tou_price), tag);
}

}  // namespace cet::bidding
