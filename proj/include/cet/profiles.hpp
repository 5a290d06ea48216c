#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

// Time-series inputs: CSV tables of "minute,<column>,..." rows where minute is
// an offset from the scenario start. Lines starting with '#' are comments.

namespace cet::sim {

class ProfileError : public std::runtime_error {
 public:
  /// `row` is the 1-based line number in the source file, 0 for file-level
  /// problems such as missing coverage.
  ProfileError(std::size_t row, const std::string& what) : std::runtime_error(what), row_(row) {}
  [[nodiscard]] std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

/// Uniformly sampled series. Sample i holds over [i*step, (i+1)*step) minutes.
struct Series {
  double step_minutes = 0.0;
  std::vector<double> values;

  [[nodiscard]] double duration_minutes() const { return step_minutes * static_cast<double>(values.size()); }
  /// Integral in value-hours (kWh for a kW series).
  [[nodiscard]] double integral_hours() const;
};

struct TimeTable {
  std::vector<std::string> columns;  // excluding the timestamp column
  double step_minutes = 0.0;
  std::vector<std::vector<double>> data;          // data[column][sample]
  std::vector<std::size_t> source_rows;           // line number of each sample

  [[nodiscard]] std::size_t column(const std::string& name) const;  // throws ProfileError
  [[nodiscard]] Series series(const std::string& name) const;
};

/// Parse a table. Requires a header, numeric cells, strictly increasing and
/// uniformly spaced timestamps, and at least one row.
TimeTable read_time_table(std::istream& in, const std::string& source);
TimeTable read_time_table(const std::filesystem::path& path);

/// Time-weighted average onto a new step over [0, horizon). Throws
/// ProfileError when the source does not cover the horizon.
Series resample(const Series& source, double step_minutes, double horizon_minutes);

struct LoadProfile {
  std::string name;
  Series kw;
};

/// Every column of a load table as a profile, rejecting negative demand with
/// its row number. When `step_minutes` is positive the profiles are resampled
/// onto that step over `horizon_minutes`.
std::vector<LoadProfile> load_profiles(const std::filesystem::path& path, double step_minutes = 0.0,
                                       double horizon_minutes = 0.0);
std::vector<LoadProfile> load_profiles(const TimeTable& table, double step_minutes = 0.0,
                                       double horizon_minutes = 0.0);

struct WeatherProfile {
  Series irradiance;     // kW/m^2
  Series temperature_c;  // outdoor
};

/// Table with "irradiance" and "temperature_c" columns.
WeatherProfile load_weather(const TimeTable& table, double step_minutes, double horizon_minutes);

}  // namespace cet::sim
