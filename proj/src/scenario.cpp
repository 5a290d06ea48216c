#include "cet/scenario.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cet/api_json.hpp"

namespace cet::sim {
namespace {

using nlohmann::json;

constexpr double kGridSlack = 1e-9;

double hours_field(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_string()) return api::parse_clock(v.get<std::string>()) / 60.0;
  return v.get<double>();
}

der::BessParams storage_params(const json& j, bool ev) {
  der::BessParams p;
  p.p_max_kw = j.at("p_max_kw").get<double>();
  p.p_min_kw = ev ? 0.0 : j.value("p_min_kw", -p.p_max_kw);
  p.soc_max_kwh = j.at("capacity_kwh").get<double>();
  p.soc_min_kwh = j.value("soc_min_kwh", 0.0);
  p.eta = j.value("eta", 1.0);
  return p;
}

}  // namespace

const char* to_string(BessPolicy policy) {
  switch (policy) {
    case BessPolicy::Selfish: return "selfish";
    case BessPolicy::Helpful: return "helpful";
    case BessPolicy::Toggle: return "toggle";
  }
  return "unknown";
}

BessPolicy parse_bess_policy(const std::string& text) {
  if (text == "selfish") return BessPolicy::Selfish;
  if (text == "helpful") return BessPolicy::Helpful;
  if (text == "toggle") return BessPolicy::Toggle;
  throw ScenarioError("unknown BESS policy '" + text + "'");
}

std::size_t ScenarioConfig::interval_count() const {
  return static_cast<std::size_t>(std::llround(horizon_h / interval_h));
}

std::int64_t ScenarioConfig::interval_seconds() const { return std::llround(interval_h * 3600.0); }

void ScenarioConfig::validate() const {
  if (!(interval_h > 0.0)) throw ScenarioError("interval length must be positive");
  if (!(horizon_h >= 0.0)) throw ScenarioError("horizon must be non-negative");
  const double ratio = horizon_h / interval_h;
  if (std::abs(ratio - std::round(ratio)) > 1e-6) throw ScenarioError("interval must divide the horizon");
  const double seconds = interval_h * 3600.0;
  if (std::abs(seconds - std::round(seconds)) > 1e-6) throw ScenarioError("interval must be a whole number of seconds");
  if (price_cap <= 0.0 || pv_floor_price < 0.0 || pv_floor_price > price_cap) {
    throw ScenarioError("price cap and PV floor price are inconsistent");
  }
  const std::size_t n = interval_count();
  auto covers = [&](const Series& s) {
    return s.values.size() >= n && std::abs(s.step_minutes - interval_h * 60.0) < 1e-6;
  };
  if (!weather.irradiance.values.empty() && (!covers(weather.irradiance) || !covers(weather.temperature_c))) {
    throw ScenarioError("weather profile does not cover the horizon at the scenario interval");
  }
  std::set<std::string> ids;
  for (const auto& h : homes) {
    if (h.id.empty() || h.id == "operator") throw ScenarioError("home ids must be non-empty and not 'operator'");
    if (!ids.insert(h.id).second) throw ScenarioError("duplicate home id '" + h.id + "'");
    if (!covers(h.load_kw)) throw ScenarioError("load profile of '" + h.id + "' does not cover the horizon (coverage gap)");
    for (double v : h.load_kw.values) {
      if (!(v >= 0.0)) throw ScenarioError("load profile of '" + h.id + "' has negative demand");
    }
    try {
      if (h.pv) h.pv->params.validate();
      if (h.bess) {
        h.bess->params.validate();
        if (h.bess->soc0_kwh < h.bess->params.soc_min_kwh || h.bess->soc0_kwh > h.bess->params.soc_max_kwh) {
          throw ScenarioError("initial BESS SoC of '" + h.id + "' is outside its bounds");
        }
      }
      if (h.ev) {
        der::EvParams p{h.ev->storage, h.ev->soc_req_kwh, 0.0, 1.0};
        p.validate();
        if (h.ev->soc_arrival_kwh < h.ev->storage.soc_min_kwh || h.ev->soc_arrival_kwh > h.ev->storage.soc_max_kwh) {
          throw ScenarioError("EV arrival SoC of '" + h.id + "' is outside its bounds");
        }
        if (h.ev->arrival_h < 0.0 || h.ev->arrival_h >= 24.0 || h.ev->departure_h < 0.0 || h.ev->departure_h >= 24.0 ||
            std::abs(h.ev->arrival_h - h.ev->departure_h) < kGridSlack) {
          throw ScenarioError("EV arrival/departure of '" + h.id + "' must be distinct hours of day");
        }
      }
      if (h.st) h.st->params.validate();
    } catch (const der::ModelError& e) {
      throw ScenarioError("home '" + h.id + "': " + e.what());
    }
  }
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ScenarioError(path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  ScenarioConfig cfg;
  try {
    cfg.name = j.value("name", path.stem().string());
    cfg.interval_h = j.value("interval_minutes", 15.0) / 60.0;
    cfg.horizon_h = j.value("horizon_hours", 168.0);
    cfg.seed = j.value("seed", std::uint64_t{1});
    cfg.price_cap = j.value("price_cap", 1.0);
    cfg.pv_floor_price = j.value("pv_floor_price", 0.01);
    if (j.contains("night_window")) {
      cfg.night_start_h = hours_field(j.at("night_window"), "start", 22.0);
      cfg.night_end_h = hours_field(j.at("night_window"), "end", 6.0);
    }
    if (j.contains("tou")) cfg.tou = api::tou_from_json(j.at("tou"));
    const double step = cfg.interval_h * 60.0;
    const double horizon = cfg.horizon_h * 60.0;

    if (j.contains("weather")) {
      const auto& wj = j.at("weather");
      if (wj.is_object()) {
        const auto n = cfg.interval_count();
        cfg.weather.irradiance = {step, std::vector<double>(n, wj.at("irradiance").get<double>())};
        cfg.weather.temperature_c = {step, std::vector<double>(n, wj.at("temperature_c").get<double>())};
      } else {
        cfg.weather = load_weather(read_time_table(base / wj.get<std::string>()), step, horizon);
      }
    }
    std::map<std::string, Series> profiles;
    if (j.contains("load_profiles")) {
      for (auto& p : load_profiles(base / j.at("load_profiles").get<std::string>(), step, horizon)) {
        profiles.emplace(p.name, std::move(p.kw));
      }
    }

    for (const auto& hj : j.at("homes")) {
      HomeConfig home;
      home.id = hj.at("id").get<std::string>();
      if (hj.contains("load_kw")) {
        home.load_kw = {step, std::vector<double>(cfg.interval_count(), hj.at("load_kw").get<double>())};
      } else {
        const auto column = hj.value("load", home.id);
        auto it = profiles.find(column);
        if (it == profiles.end()) throw ScenarioError("home '" + home.id + "' refers to unknown load profile '" + column + "'");
        home.load_kw = it->second;
      }
      const double scale = hj.value("load_scale", 1.0);
      for (auto& v : home.load_kw.values) v *= scale;

      if (hj.contains("pv")) {
        const auto& pj = hj.at("pv");
        PvConfig pv;
        pv.id = pj.value("id", pv.id);
        pv.params.p_rated_kw = pj.at("rated_kw").get<double>();
        pv.params.derate_per_c = pj.value("derate_per_c", pv.params.derate_per_c);
        pv.params.psi = pj.value("inverter_efficiency", pv.params.psi);
        home.pv = pv;
      }
      if (hj.contains("bess")) {
        const auto& bj = hj.at("bess");
        BessConfig b;
        b.id = bj.value("id", b.id);
        b.params = storage_params(bj, false);
        b.soc0_kwh = bj.value("soc0_kwh", 0.5 * (b.params.soc_min_kwh + b.params.soc_max_kwh));
        b.policy = parse_bess_policy(bj.value("strategy", std::string("selfish")));
        home.bess = b;
      }
      if (hj.contains("ev")) {
        const auto& ej = hj.at("ev");
        EvConfig ev;
        ev.id = ej.value("id", ev.id);
        ev.storage = storage_params(ej, true);
        ev.soc_req_kwh = ej.at("soc_req_kwh").get<double>();
        ev.soc_arrival_kwh = ej.at("soc_arrival_kwh").get<double>();
        ev.arrival_h = hours_field(ej, "arrival", ev.arrival_h);
        ev.departure_h = hours_field(ej, "departure", ev.departure_h);
        ev.jitter_minutes = ej.value("jitter_minutes", 0.0);
        ev.strategy = bidding::parse_strategy(ej.value("strategy", std::string("selfish")));
        home.ev = ev;
      }
      if (hj.contains("st")) {
        const auto& sj = hj.at("st");
        StConfig st;
        st.id = sj.value("id", st.id);
        st.params.setpoint_c = sj.value("setpoint_c", st.params.setpoint_c);
        st.params.deadband_c = sj.value("deadband_c", st.params.deadband_c);
        st.params.resistance_c_per_kw = sj.value("resistance_c_per_kw", st.params.resistance_c_per_kw);
        st.params.capacitance_kwh_per_c = sj.value("capacitance_kwh_per_c", st.params.capacitance_kwh_per_c);
        st.params.hvac_kw = sj.value("hvac_kw", st.params.hvac_kw);
        st.params.cop = sj.value("cop", st.params.cop);
        st.initial_c = sj.value("initial_c", st.params.setpoint_c);
        st.strategy = bidding::parse_strategy(sj.value("strategy", std::string("selfish")));
        home.st = st;
      }
      cfg.homes.push_back(std::move(home));
    }
  } catch (const json::exception& e) {
    throw ScenarioError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(path.string() + ": " + e.what());
  } catch (const api::SchemaError& e) {
    throw ScenarioError(path.string() + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace cet::sim
