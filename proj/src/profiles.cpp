#include "cet/profiles.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cet::sim {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_number(const std::string& cell, std::size_t row, const std::string& source) {
  double value = 0.0;
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ProfileError(row, source + ":" + std::to_string(row) + ": '" + cell + "' is not a number");
  }
  return value;
}

// Relative tolerance for comparing timestamps parsed from text.
constexpr double kStepSlack = 1e-9;

}  // namespace

double Series::integral_hours() const {
  return std::accumulate(values.begin(), values.end(), 0.0) * step_minutes / 60.0;
}

std::size_t TimeTable::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw ProfileError(0, "missing column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

Series TimeTable::series(const std::string& name) const { return {step_minutes, data.at(column(name))}; }

TimeTable read_time_table(std::istream& in, const std::string& source) {
  TimeTable table;
  std::string line;
  std::size_t row = 0;
  bool have_header = false;
  std::vector<double> stamps;
  while (std::getline(in, line)) {
    ++row;
    const auto text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto cells = split(text);
    if (!have_header) {
      if (cells.size() < 2) throw ProfileError(row, source + ":" + std::to_string(row) + ": header needs a timestamp and at least one column");
      table.columns.assign(cells.begin() + 1, cells.end());
      table.data.resize(table.columns.size());
      have_header = true;
      continue;
    }
    if (cells.size() != table.columns.size() + 1) {
      throw ProfileError(row, source + ":" + std::to_string(row) + ": expected " +
                                  std::to_string(table.columns.size() + 1) + " fields, found " +
                                  std::to_string(cells.size()));
    }
    const double stamp = parse_number(cells[0], row, source);
    if (!stamps.empty()) {
      if (stamp <= stamps.back()) {
        throw ProfileError(row, source + ":" + std::to_string(row) + ": timestamps must increase");
      }
      const double step = stamp - stamps.back();
      if (stamps.size() == 1) {
        table.step_minutes = step;
      } else if (std::abs(step - table.step_minutes) > kStepSlack * std::max(1.0, table.step_minutes)) {
        throw ProfileError(row, source + ":" + std::to_string(row) + ": sampling is not uniform");
      }
    }
    stamps.push_back(stamp);
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      table.data[c].push_back(parse_number(cells[c + 1], row, source));
    }
    table.source_rows.push_back(row);
  }
  if (stamps.empty()) throw ProfileError(0, source + ": no samples (coverage gap)");
  if (stamps.size() == 1) throw ProfileError(0, source + ": a single sample does not define a sampling step");
  return table;
}

TimeTable read_time_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ProfileError(0, "cannot open " + path.string());
  return read_time_table(in, path.string());
}

Series resample(const Series& source, double step_minutes, double horizon_minutes) {
  if (!(step_minutes > 0.0) || !(horizon_minutes >= 0.0)) throw std::invalid_argument("invalid resampling step");
  if (source.step_minutes <= 0.0) throw ProfileError(0, "source series has no sampling step");
  if (source.duration_minutes() + kStepSlack * horizon_minutes < horizon_minutes) {
    throw ProfileError(0, "profile covers " + std::to_string(source.duration_minutes()) + " min but " +
                              std::to_string(horizon_minutes) + " min are required (coverage gap)");
  }
  const auto count = static_cast<std::size_t>(std::llround(horizon_minutes / step_minutes));
  Series out{step_minutes, std::vector<double>(count, 0.0)};
  for (std::size_t j = 0; j < count; ++j) {
    const double lo = static_cast<double>(j) * step_minutes;
    const double hi = lo + step_minutes;
    auto i = static_cast<std::size_t>(std::floor(lo / source.step_minutes + kStepSlack));
    double acc = 0.0;
    for (; i < source.values.size(); ++i) {
      const double s_lo = static_cast<double>(i) * source.step_minutes;
      const double s_hi = s_lo + source.step_minutes;
      if (s_lo >= hi) break;
      const double overlap = std::min(hi, s_hi) - std::max(lo, s_lo);
      if (overlap > 0.0) acc += overlap * source.values[i];
    }
    out.values[j] = acc / step_minutes;
  }
  return out;
}

std::vector<LoadProfile> load_profiles(const TimeTable& table, double step_minutes, double horizon_minutes) {
  std::vector<LoadProfile> out;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    for (std::size_t i = 0; i < table.data[c].size(); ++i) {
      if (table.data[c][i] < 0.0) {
        const auto row = table.source_rows.at(i);
        throw ProfileError(row, "row " + std::to_string(row) + ": negative demand in column '" + table.columns[c] + "'");
      }
    }
    Series s{table.step_minutes, table.data[c]};
    if (step_minutes > 0.0) s = resample(s, step_minutes, horizon_minutes);
    out.push_back({table.columns[c], std::move(s)});
  }
  return out;
}

std::vector<LoadProfile> load_profiles(const std::filesystem::path& path, double step_minutes, double horizon_minutes) {
  return load_profiles(read_time_table(path), step_minutes, horizon_minutes);
}

WeatherProfile load_weather(const TimeTable& table, double step_minutes, double horizon_minutes) {
  const auto irr = table.column("irradiance");
  for (std::size_t i = 0; i < table.data[irr].size(); ++i) {
    if (table.data[irr][i] < 0.0) {
      const auto row = table.source_rows.at(i);
      throw ProfileError(row, "row " + std::to_string(row) + ": negative irradiance");
    }
  }
  WeatherProfile w;
  w.irradiance = resample(table.series("irradiance"), step_minutes, horizon_minutes);
  w.temperature_c = resample(table.series("temperature_c"), step_minutes, horizon_minutes);
  return w;
}

}  // namespace cet::sim
