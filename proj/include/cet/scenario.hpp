#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cet/bidding.hpp"
#include "cet/der.hpp"
#include "cet/profiles.hpp"

// Scenario description for the community simulator, and its JSON loader.

namespace cet::sim {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BessPolicy { Selfish, Helpful, Toggle };

const char* to_string(BessPolicy policy);
BessPolicy parse_bess_policy(const std::string& text);

struct PvConfig {
  std::string id = "pv";
  der::PvParams params;
};

struct BessConfig {
  std::string id = "bess";
  der::BessParams params;
  double soc0_kwh = 0.0;
  BessPolicy policy = BessPolicy::Selfish;
};

/// Daily plug-in sessions: arrives at `arrival_h` (hour of day), leaves at
/// `departure_h` the next morning (or the same day when later than arrival).
struct EvConfig {
  std::string id = "ev";
  der::BessParams storage;  // p_min_kw must be 0
  double soc_req_kwh = 0.0;
  double soc_arrival_kwh = 0.0;
  double arrival_h = 18.0;
  double departure_h = 7.0;
  double jitter_minutes = 0.0;  // uniform +/- jitter on arrival, snapped to the interval grid
  bidding::Strategy strategy = bidding::Strategy::Selfish;
};

struct StConfig {
  std::string id = "st";
  der::StParams params;
  double initial_c = 22.0;
  bidding::Strategy strategy = bidding::Strategy::Selfish;
};

struct HomeConfig {
  std::string id;
  Series load_kw;  // base household load at the scenario interval
  std::optional<PvConfig> pv;
  std::optional<BessConfig> bess;
  std::optional<EvConfig> ev;
  std::optional<StConfig> st;
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::vector<HomeConfig> homes;
  bidding::TouSchedule tou = bidding::TouSchedule::default_schedule();
  double interval_h = 0.25;
  double horizon_h = 168.0;
  WeatherProfile weather;  // at the scenario interval; empty means dark and 25 C
  std::uint64_t seed = 1;
  double price_cap = 1.0;
  double pv_floor_price = 0.01;
  double night_start_h = 22.0;
  double night_end_h = 6.0;

  [[nodiscard]] std::size_t interval_count() const;
  [[nodiscard]] std::int64_t interval_seconds() const;
  /// Throws ScenarioError on inconsistent settings or profiles that do not
  /// cover the horizon at the interval step.
  void validate() const;
};

/// Parse a scenario file. Profile and weather paths are resolved relative to
/// the file and resampled onto the scenario interval.
ScenarioConfig load_scenario(const std::filesystem::path& path);

}  // namespace cet::sim
