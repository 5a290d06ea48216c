#include "cet/der.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cet::der {
namespace {

[[noreturn]] void fail(ModelError::Kind kind, const std::string& msg) { throw ModelError(kind, msg); }

void require_positive_dt(double dt_h) {
  if (!(dt_h > 0.0) || !std::isfinite(dt_h)) fail(ModelError::Kind::InvalidParams, "dt must be positive");
}

}  // namespace

void BessParams::validate() const {
  if (!(p_min_kw <= 0.0 && p_max_kw >= 0.0)) fail(ModelError::Kind::InvalidParams, "require p_min <= 0 <= p_max");
  if (!(soc_min_kwh >= 0.0 && soc_min_kwh < soc_max_kwh)) {
    fail(ModelError::Kind::InvalidParams, "require 0 <= soc_min < soc_max");
  }
  if (!(eta > 0.0 && eta <= 1.0)) fail(ModelError::Kind::InvalidParams, "require 0 < eta <= 1");
}

void EvParams::validate() const {
  storage.validate();
  if (storage.p_min_kw != 0.0) fail(ModelError::Kind::InvalidParams, "EVs are charge-only (p_min must be 0)");
  if (!(soc_req_kwh >= storage.soc_min_kwh && soc_req_kwh <= storage.soc_max_kwh)) {
    fail(ModelError::Kind::InvalidParams, "soc_req outside [soc_min, soc_max]");
  }
  if (!(t_arr_h < t_dep_h)) fail(ModelError::Kind::InvalidParams, "require t_arr < t_dep");
}

void PvParams::validate() const {
  if (!(p_rated_kw > 0.0)) fail(ModelError::Kind::InvalidParams, "p_rated must be positive");
  if (!(psi > 0.0 && psi <= 1.0)) fail(ModelError::Kind::InvalidParams, "require 0 < psi <= 1");
}

void StParams::validate() const {
  if (!(deadband_c > 0.0 && resistance_c_per_kw > 0.0 && capacitance_kwh_per_c > 0.0 && hvac_kw > 0.0 &&
        cop > 0.0 && setpoint_c > 0.0)) {
    fail(ModelError::Kind::InvalidParams, "thermostat parameters must be positive");
  }
}

double bess_step(const BessParams& params, double soc_kwh, double power_kw, double dt_h) {
  require_positive_dt(dt_h);
  if (!std::isfinite(power_kw) || power_kw < params.p_min_kw - kTolerance ||
      power_kw > params.p_max_kw + kTolerance) {
    std::ostringstream os;
    os << "power " << power_kw << " kW outside [" << params.p_min_kw << ", " << params.p_max_kw << "]";
    fail(ModelError::Kind::PowerLimit, os.str());
  }
  const double delta = mode_for(power_kw) == Mode::Charging ? params.eta * power_kw * dt_h
                                                            : power_kw / params.eta * dt_h;
  const double next = soc_kwh + delta;
  if (next < params.soc_min_kwh - kTolerance || next > params.soc_max_kwh + kTolerance) {
    std::ostringstream os;
    os << "SoC " << next << " kWh outside [" << params.soc_min_kwh << ", " << params.soc_max_kwh << "]";
    fail(ModelError::Kind::SocBound, os.str());
  }
  // Only absorbs the tolerance band above.
  return std::clamp(next, params.soc_min_kwh, params.soc_max_kwh);
}

PowerRange bess_feasible_range(const BessParams& params, double soc_kwh, double dt_h) {
  require_positive_dt(dt_h);
  const double headroom = std::max(0.0, params.soc_max_kwh - soc_kwh);
  const double available = std::max(0.0, soc_kwh - params.soc_min_kwh);
  PowerRange range;
  range.hi_kw = std::min(params.p_max_kw, headroom / (params.eta * dt_h));
  range.lo_kw = std::max(params.p_min_kw, -available * params.eta / dt_h);
  return range;
}

bool ev_departure_ok(const EvParams& params, double soc_at_dep_kwh) { return soc_at_dep_kwh >= params.soc_req_kwh; }

double ev_latest_flexible_time(const EvParams& params, double soc_kwh, double now_h, double interval_h) {
  require_positive_dt(interval_h);
  const double missing = params.soc_req_kwh - soc_kwh;
  double duration = 0.0;
  if (missing > 0.0) {
    const double hours = missing / (params.storage.eta * params.storage.p_max_kw);
    // Representation error must not add a whole extra interval.
    const double slots = std::ceil(hours / interval_h - 1e-9);
    duration = slots * interval_h;
  }
  const double latest = params.t_dep_h - duration;
  if (latest < now_h - kTolerance) {
    std::ostringstream os;
    os << "EV needs " << duration << " h of full-power charging but only " << params.t_dep_h - now_h
       << " h remain";
    fail(ModelError::Kind::InfeasibleDeadline, os.str());
  }
  return latest;
}

double pv_power(const PvParams& params, const WeatherSample& weather) {
  if (weather.irradiance < 0.0) fail(ModelError::Kind::InvalidParams, "irradiance must be non-negative");
  const double temperature_factor =
      std::max(0.0, 1.0 - params.derate_per_c * (weather.temperature_c - params.t_ref_c));
  return std::max(0.0, params.p_rated_kw * weather.irradiance * temperature_factor * params.psi);
}

double st_step(const StParams& params, double indoor_c, double outdoor_c, bool hvac_on, double dt_h) {
  return st_step_duty(params, indoor_c, outdoor_c, hvac_on ? 1.0 : 0.0, dt_h);
}

double st_step_duty(const StParams& params, double indoor_c, double outdoor_c, double duty, double dt_h) {
  require_positive_dt(dt_h);
  duty = std::clamp(duty, 0.0, 1.0);
  const double tau_h = params.resistance_c_per_kw * params.capacitance_kwh_per_c;
  const double drift = dt_h / tau_h * (outdoor_c - indoor_c);
  const double cooling = duty * dt_h * params.hvac_kw * params.cooling_gain();
  return indoor_c + drift - cooling;
}

}  // namespace cet::der
