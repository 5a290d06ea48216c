#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cet/digest.hpp"
#include "cet/scenario.hpp"

// Discrete-interval community simulation over the ledger and auction stack.
//
// Each interval: the operator opens it on the channel, homes post storage
// readings and bids, the operator closes it (the contract clears the market),
// homes apply the returned control signals through the device models and post
// metered power. Anything a buy bid was willing to pay the TOU rate for but did
// not win locally is bought from the grid; uncleared PV surplus is curtailed.

namespace cet::sim {

struct Sample {
  double time_h = 0.0;
  double pcc_kw = 0.0;  // community net import
  std::optional<double> mcp;  // $/kWh, empty when nothing traded
  double cleared_kwh = 0.0;
  double grid_price = 0.0;  // $/kWh
};

struct HomeMetrics {
  std::string id;
  double cost = 0.0;             // $ over the horizon
  double settlement = 0.0;       // $ received from (+) or paid to (-) the market
  double grid_import_kwh = 0.0;  // residual bought from the grid at TOU
  double bought_kwh = 0.0;       // awarded locally
  double sold_kwh = 0.0;
  double curtailed_pv_kwh = 0.0;
};

/// One per device and quantity: "soc_kwh", "temperature_c" or "power_kw".
struct DeviceTrace {
  std::string home;
  std::string device;
  std::string quantity;
  std::vector<double> values;  // one per interval, NaN when not present
};

struct ScenarioMetrics {
  std::string scenario;
  double interval_h = 0.0;
  std::vector<Sample> series;
  std::vector<HomeMetrics> homes;
  std::vector<DeviceTrace> traces;
  double peak_kw = 0.0;
  double peak_time_h = 0.0;
  double secondary_peak_kw = 0.0;  // max PCC inside the night window
  double community_cost = 0.0;
  double curtailed_pv_kwh = 0.0;
  int ev_departures = 0;
  int ev_violations = 0;
  int bound_violations = 0;  // SoC or comfort-band excursions
  double max_conservation_error_kwh = 0.0;
  std::uint64_t blocks = 0;
  Digest state_digest{};
  Digest tip_hash{};
};

struct RunOptions {
  /// Persist the chain here when set (file is replaced).
  std::optional<std::filesystem::path> chain_file;
};

/// Throws ScenarioError for invalid configs; device-model errors propagate.
ScenarioMetrics run_scenario(const ScenarioConfig& cfg, const RunOptions& options = {});

struct SweepPoint {
  std::size_t helpful = 0;
  double peak_kw = 0.0;
  double cost = 0.0;
  int ev_violations = 0;
};

/// Homes with a BESS, ordered by id; the first k are Helpful, the rest Selfish.
ScenarioConfig with_helpful_bess(const ScenarioConfig& cfg, std::size_t k);
std::vector<SweepPoint> sweep_helpful_bess(const ScenarioConfig& cfg);
std::vector<SweepPoint> sweep_helpful_bess(const ScenarioConfig& cfg, std::size_t k_max);

struct ReboundResult {
  std::size_t helpful = 0;
  std::size_t selfish = 0;
  double primary_peak_kw = 0.0;
  double secondary_peak_kw = 0.0;
  int ev_violations = 0;
};

/// Homes with an EV, ordered by id; the first `helpful` are Helpful, the next
/// `selfish` Selfish. Throws ScenarioError unless the counts add up.
ScenarioConfig with_ev_mix(const ScenarioConfig& cfg, std::size_t helpful, std::size_t selfish);
ReboundResult rebound_analysis(const ScenarioConfig& cfg, std::size_t helpful, std::size_t selfish);

/// Field-test emulation: requires exactly one Toggle BESS in the scenario.
ScenarioMetrics emulate_field_test(const ScenarioConfig& cfg, const RunOptions& options = {});

/// Step between consecutive PCC samples.
std::vector<double> pcc_steps(const ScenarioMetrics& metrics);

// Reports.
std::string metrics_json(const ScenarioMetrics& m);
/// Writes series.csv, homes.csv and traces.csv into `dir`.
void write_series_csv(const ScenarioMetrics& m, const std::filesystem::path& dir);
std::string sweep_csv(const std::vector<SweepPoint>& points);

}  // namespace cet::sim
