#pragma once

#include "canf/core.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>

namespace canf {

inline constexpr std::size_t kHoursPerWeek = 168;

struct LoadSeries {
  std::vector<double> values;  // kWh, hourly
  std::string start;           // ISO-8601 timestamp of values[0]
  std::string location;
};

/// Reads an hourly CSV with a header row. Rejects gaps or duplicate hours
/// (NonHourlyCadence), negative loads (NegativeLoad) and malformed rows
/// (ParseError, with the 1-based file line number).
LoadSeries load_csv(const std::string& path, const std::string& value_column = "load_kwh",
                    const std::string& timestamp_column = "timestamp");

void write_csv(const LoadSeries& series, const std::string& path,
               const std::string& value_column = "load_kwh",
               const std::string& timestamp_column = "timestamp");

/// Seconds since 1970-01-01T00:00:00Z for "YYYY-MM-DD[T ]HH:MM[:SS][Z]".
std::optional<long long> parse_iso8601(const std::string& text);
std::string format_iso8601(long long epoch_seconds);

/// A contiguous run of the series, `offset` hours after its start.
struct Segment {
  std::size_t offset = 0;
  std::vector<double> values;
};

struct WeekSplit {
  std::vector<Segment> train;
  std::vector<Segment> test;
  std::vector<std::size_t> test_weeks;  // 0-based week numbers, ascending
};

/// Cuts the series into 168-hour weeks anchored at its first hour (a partial
/// trailing week stays with the last whole week) and sends
/// ceil(test_fraction * weeks) of them, drawn uniformly, to the test side.
/// Consecutive weeks on the same side merge into one segment.
WeekSplit week_split(const LoadSeries& series, double test_fraction, std::uint64_t seed);

struct Standardization {
  double mean = 0.0;
  double std = 1.0;

  double apply(double x) const { return (x - mean) / std; }
  double invert(double x) const { return x * std + mean; }
};

struct SequenceDataset {
  Matrix windows;  // n x (L + 1 + K)
  int L = 0;
  int K = 0;
  Standardization stats;        // identity when the windows are raw
  bool standardized = false;
  std::vector<std::size_t> origins;  // series hour of each window's first value
  int skipped_segments = 0;

  Eigen::Index size() const { return windows.rows(); }
  int input_width() const { return L + 1; }
  int width() const { return L + 1 + K; }
  Matrix inputs() const { return windows.leftCols(L + 1); }
  Matrix targets() const { return windows.rightCols(K); }
};

/// Every stride-spaced window of length L+1+K inside each segment; windows
/// never straddle segments. Short segments are skipped; SegmentTooShort only
/// if every segment is skipped.
SequenceDataset rolling_windows(std::span<const Segment> segments, int L, int K, int stride = 1);

/// (x - mean) / std with the given statistics, or with the pooled mean and
/// population std of this dataset's entries.
SequenceDataset standardize(const SequenceDataset& ds,
                            std::optional<Standardization> stats = std::nullopt);
SequenceDataset destandardize(const SequenceDataset& ds);

/// Keeps the first (1 - fraction) of the rows as training and the rest as
/// validation.
std::pair<SequenceDataset, SequenceDataset> split_tail(const SequenceDataset& ds,
                                                       double fraction);

struct SynthParams {
  double offset = 1.0;            // mean load level, kWh
  double daily_amplitude = 0.45;  // relative swing of the daily cycle
  double harmonic = 0.5;          // second-harmonic weight within the day
  double weekly_amplitude = 0.15; // relative weekday/weekend modulation
  double noise_sd = 0.08;         // AR(1) innovation sd of the log-noise
  double noise_phi = 0.8;         // AR(1) coefficient of the log-noise
  double day_scale_sd = 0.2;      // sd of the per-day log activity factor
  std::string start = "2019-01-01T00:00:00";
  std::string location = "synthetic";
};

void to_json(nlohmann::json& j, const SynthParams& p);
void from_json(const nlohmann::json& j, SynthParams& p);

/// Seeded synthetic hourly load: a positive baseline with a daily profile
/// (fundamental + second harmonic), a weekly modulation, a random per-day
/// activity factor, and multiplicative AR(1) noise.
LoadSeries synth_load(int weeks, const SynthParams& params, std::uint64_t seed);

/// Sample autocorrelation at `lag`.
double autocorrelation(std::span<const double> values, std::size_t lag);

}  // namespace canf
