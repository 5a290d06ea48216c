#pragma once

#include <string>
#include <vector>

#include "cet/der.hpp"
#include "cet/market.hpp"

namespace cet::bidding {

enum class Strategy { Selfish, Helpful };
enum class Period { OffPeak, MidPeak, OnPeak };

const char* to_string(Strategy strategy);
const char* to_string(Period period);
Strategy parse_strategy(const std::string& text);
Period parse_period(const std::string& text);

struct TouWindow {
  int start_minute = 0;  // minute of day, inclusive
  int end_minute = 0;    // exclusive; 1440 for midnight
  Period period = Period::OffPeak;
  double price = 0.0;  // $/kWh
};

/// Daily time-of-use tariff. Windows must tile [0, 1440) without overlap.
class TouSchedule {
 public:
  TouSchedule() = default;
  explicit TouSchedule(std::vector<TouWindow> windows);

  /// Default summer-shaped schedule: off-peak 19:00-07:00, mid-peak 07:00-11:00
  /// and 17:00-19:00, on-peak 11:00-17:00 at 0.082 / 0.113 / 0.170 $/kWh.
  static TouSchedule default_schedule();

  [[nodiscard]] const TouWindow& at(double t_hours) const;
  [[nodiscard]] Period period_at(double t_hours) const { return at(t_hours).period; }
  [[nodiscard]] double price_at(double t_hours) const { return at(t_hours).price; }
  [[nodiscard]] double price_of(Period period) const;
  [[nodiscard]] const std::vector<TouWindow>& windows() const { return windows_; }

 private:
  std::vector<TouWindow> windows_;
};

/// What a home knows about itself for the coming interval.
struct LocalContext {
  double excess_pv_kwh = 0.0;  // local PV minus local load, floored at 0
  double net_load_kwh = 0.0;   // local load minus local PV, floored at 0
  Period tou_period = Period::OffPeak;
  double tou_price = 0.0;        // $/kWh for the current interval
  double price_cap = 1.0;        // $/kWh stand-in for "any price"
  double pv_floor_price = 0.01;  // $/kWh, the community PV offer price

  void validate() const;
};

/// Who is bidding and for which interval; used to stamp curves.
struct BidTag {
  std::string home;
  std::string device;
  IntervalId interval = 0;
};

inline constexpr double kDefaultStBasePrice = 0.05;
inline constexpr double kStSelfishSaturation = 0.5;  // deg C at which a selfish ST pays the cap

/// Cooling demand priced by temperature deviation: base + k * dev^2, capped.
/// Selfish saturates at 0.5 deg C, helpful at the thermostat's deadband.
BidCurve st_bid_curve(Strategy strategy, const der::StParams& params, double indoor_c, const LocalContext& ctx,
                      double interval_h, const BidTag& tag, double base_price = kDefaultStBasePrice);

/// Energy (grid side, kWh) that charging at the full feasible rate would
/// draw in one interval without overshooting the required SoC.
double ev_full_charge_kwh(const der::EvParams& params, double soc_kwh, double interval_h);

BidCurve ev_bid_curve(Strategy strategy, const der::EvParams& params, double soc_kwh, double now_h,
                      double interval_h, const LocalContext& ctx, const BidTag& tag);

std::vector<BidCurve> bess_bids(Strategy strategy, const der::BessParams& params, double soc_kwh,
                                const LocalContext& ctx, const TouSchedule& tou, double interval_h,
                                const BidTag& tag);

/// Static single-step PV offer.
BidCurve pv_offer(double forecast_kwh, double floor_price, const BidTag& tag);

/// Inflexible household load bidding at its grid alternative (the TOU rate).
BidCurve load_bid(double net_load_kwh, double tou_price, const BidTag& tag);

}  // namespace cet::bidding
