#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cet/sim.hpp"

namespace cet::sim {
namespace {

using nlohmann::json;

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  return out;
}

}  // namespace

std::string metrics_json(const ScenarioMetrics& m) {
  json homes = json::array();
  for (const auto& h : m.homes) {
    homes.push_back({{"id", h.id},
                     {"cost", h.cost},
                     {"settlement", h.settlement},
                     {"grid_import_kwh", h.grid_import_kwh},
                     {"bought_kwh", h.bought_kwh},
                     {"sold_kwh", h.sold_kwh},
                     {"curtailed_pv_kwh", h.curtailed_pv_kwh}});
  }
  json j = {{"scenario", m.scenario},
            {"interval_minutes", m.interval_h * 60.0},
            {"intervals", m.series.size()},
            {"peak_kw", m.peak_kw},
            {"peak_time_h", m.peak_time_h},
            {"secondary_peak_kw", m.secondary_peak_kw},
            {"community_cost", m.community_cost},
            {"curtailed_pv_kwh", m.curtailed_pv_kwh},
            {"ev_departures", m.ev_departures},
            {"ev_violations", m.ev_violations},
            {"bound_violations", m.bound_violations},
            {"max_conservation_error_kwh", m.max_conservation_error_kwh},
            {"blocks", m.blocks},
            {"state_digest", to_hex(m.state_digest)},
            {"tip_hash", to_hex(m.tip_hash)},
            {"homes", homes}};
  return j.dump(2);
}

void write_series_csv(const ScenarioMetrics& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_csv(dir / "series.csv");
    out << "time_h,pcc_kw,mcp,cleared_kwh,grid_price\n";
    for (const auto& s : m.series) {
      out << s.time_h << ',' << s.pcc_kw << ',';
      if (s.mcp) out << *s.mcp;
      out << ',' << s.cleared_kwh << ',' << s.grid_price << '\n';
    }
  }
  {
    auto out = open_csv(dir / "homes.csv");
    out << "home,cost,settlement,grid_import_kwh,bought_kwh,sold_kwh,curtailed_pv_kwh\n";
    for (const auto& h : m.homes) {
      out << h.id << ',' << h.cost << ',' << h.settlement << ',' << h.grid_import_kwh << ',' << h.bought_kwh << ','
          << h.sold_kwh << ',' << h.curtailed_pv_kwh << '\n';
    }
  }
  {
    // Long format keeps the column set fixed regardless of the device mix.
    auto out = open_csv(dir / "traces.csv");
    out << "time_h,home,device,quantity,value\n";
    for (const auto& t : m.traces) {
      for (std::size_t i = 0; i < t.values.size() && i < m.series.size(); ++i) {
        if (!std::isfinite(t.values[i])) continue;
        out << m.series[i].time_h << ',' << t.home << ',' << t.device << ',' << t.quantity << ',' << t.values[i]
            << '\n';
      }
    }
  }
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out.precision(10);
  out << "helpful,peak_kw,cost,ev_violations\n";
  for (const auto& p : points) out << p.helpful << ',' << p.peak_kw << ',' << p.cost << ',' << p.ev_violations << '\n';
  return out.str();
}

}  // namespace cet::sim
