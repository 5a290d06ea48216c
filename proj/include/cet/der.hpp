#pragma once

#include <stdexcept>
#include <string>

// Discrete-time device models for home DERs: battery storage, EV charging,
// PV arrays and a smart-thermostat thermal surrogate.
//
// Units: power kW, energy/SoC kWh, time hours, temperature degrees C.
// Sign convention for storage power: positive charges, negative discharges.

namespace cet::der {

/// Absolute slack used when checking limits, so values that are feasible up to
/// floating-point representation error are not rejected.
inline constexpr double kTolerance = 1e-9;

class ModelError : public std::runtime_error {
 public:
  enum class Kind { InvalidParams, PowerLimit, SocBound, InfeasibleDeadline };

  ModelError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct BessParams {
  double p_min_kw = 0.0;  // discharge limit, <= 0
  double p_max_kw = 0.0;  // charge limit, >= 0
  double soc_min_kwh = 0.0;
  double soc_max_kwh = 0.0;
  double eta = 1.0;  // one-way charge/discharge efficiency

  bool operator==(const BessParams&) const = default;
  void validate() const;
};

enum class Mode { Discharging = 0, Charging = 1 };

struct BessState {
  double soc_kwh = 0.0;
  Mode mode = Mode::Charging;
};

/// EVs only charge, so storage.p_min_kw must be zero.
struct EvParams {
  BessParams storage;
  double soc_req_kwh = 0.0;
  double t_arr_h = 0.0;
  double t_dep_h = 0.0;

  void validate() const;
};

struct PvParams {
  double p_rated_kw = 0.0;
  double derate_per_c = 0.005;  // linear temperature derating slope
  double t_ref_c = 25.0;
  double psi = 0.96;  // inverter efficiency

  void validate() const;
};

struct WeatherSample {
  double irradiance = 0.0;  // kW/m^2, ~[0, 1.2]
  double temperature_c = 25.0;
};

/// First-order RC building with an on/off cooling unit.
struct StParams {
  double setpoint_c = 22.0;
  double deadband_c = 2.0;
  double resistance_c_per_kw = 4.0;
  double capacitance_kwh_per_c = 5.0;
  double hvac_kw = 2.5;  // electrical draw when on
  double cop = 3.0;      // thermal kW removed per electrical kW

  void validate() const;
  /// Degrees C removed per kWh of electrical energy.
  [[nodiscard]] double cooling_gain() const { return cop / capacitance_kwh_per_c; }
};

struct PowerRange {
  double lo_kw = 0.0;
  double hi_kw = 0.0;

  [[nodiscard]] bool contains(double p_kw, double tol = kTolerance) const {
    return p_kw >= lo_kw - tol && p_kw <= hi_kw + tol;
  }
};

inline Mode mode_for(double power_kw) { return power_kw >= 0.0 ? Mode::Charging : Mode::Discharging; }

/// SoC after holding `power_kw` for `dt_h`. Throws on power-limit or SoC-bound
/// violations instead of clamping.
double bess_step(const BessParams& params, double soc_kwh, double power_kw, double dt_h);

/// Largest power interval for which bess_step cannot leave the SoC bounds.
PowerRange bess_feasible_range(const BessParams& params, double soc_kwh, double dt_h);

bool ev_departure_ok(const EvParams& params, double soc_at_dep_kwh);

/// Latest time the EV may keep deferring before it has to charge at full power
/// for the rest of its stay. The charge duration is rounded up to whole market
/// intervals. Throws InfeasibleDeadline when that time is already behind `now_h`.
double ev_latest_flexible_time(const EvParams& params, double soc_kwh, double now_h, double interval_h);

/// AC output of a PV system.
double pv_power(const PvParams& params, const WeatherSample& weather);

double st_step(const StParams& params, double indoor_c, double outdoor_c, bool hvac_on, double dt_h);

/// Same model with the cooling unit running for a fraction `duty` of the step.
double st_step_duty(const StParams& params, double indoor_c, double outdoor_c, double duty, double dt_h);

}  // namespace cet::der
