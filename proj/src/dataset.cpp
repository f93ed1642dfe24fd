#include "canf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace canf {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Howard Hinnant's days_from_civil.
long long days_from_civil(long long y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long long era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long long>(doe) - 719468;
}

void civil_from_days(long long z, long long& y, unsigned& m, unsigned& d) {
  z += 719468;
  const long long era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<long long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

}  // namespace

std::optional<long long> parse_iso8601(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int consumed = 0;
  const int got = std::sscanf(text.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi,
                              &consumed);
  if (got < 6 || (sep != 'T' && sep != ' ')) return std::nullopt;
  std::string rest = text.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && rest[0] == ':') {
    int more = 0;
    if (std::sscanf(rest.c_str(), ":%2d%n", &s, &more) != 1) return std::nullopt;
    rest = rest.substr(static_cast<std::size_t>(more));
  }
  if (!rest.empty() && rest != "Z") return std::nullopt;
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 ||
      s > 59)
    return std::nullopt;
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400LL +
         h * 3600LL + mi * 60LL + s;
}

std::string format_iso8601(long long epoch_seconds) {
  long long days = epoch_seconds / 86400;
  long long rem = epoch_seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  long long y = 0;
  unsigned m = 0, d = 0;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02lld:%02lld:%02lld", y, m, d, rem / 3600,
                (rem % 3600) / 60, rem % 60);
  return buf;
}

LoadSeries load_csv(const std::string& path, const std::string& value_column,
                    const std::string& timestamp_column) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kParse, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kParse, path + ": empty file");
  const auto header = split_csv_line(line);
  const auto find_col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw Error(ErrorKind::kParse, path + ": line 1: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t vcol = find_col(value_column);
  const std::size_t tcol = find_col(timestamp_column);

  LoadSeries series;
  std::optional<long long> previous;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv_line(line);
    const auto where = path + ": line " + std::to_string(line_no);
    if (fields.size() <= std::max(vcol, tcol))
      throw Error(ErrorKind::kParse, where + ": expected " + std::to_string(header.size()) +
                                         " fields, got " + std::to_string(fields.size()));
    const auto ts = parse_iso8601(fields[tcol]);
    if (!ts) throw Error(ErrorKind::kParse, where + ": bad timestamp '" + fields[tcol] + "'");
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(fields[vcol], &used);
      if (used != fields[vcol].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorKind::kParse, where + ": bad load value '" + fields[vcol] + "'");
    }
    if (!std::isfinite(value))
      throw Error(ErrorKind::kParse, where + ": non-finite load value");
    if (value < 0.0)
      throw Error(ErrorKind::kNegativeLoad,
                  where + ": negative load " + fields[vcol] + " at " + fields[tcol]);
    if (previous && *ts - *previous != 3600)
      throw Error(ErrorKind::kNonHourlyCadence,
                  where + ": timestamp " + fields[tcol] + " is not one hour after the previous row");
    if (!previous) series.start = format_iso8601(*ts);
    previous = ts;
    series.values.push_back(value);
  }
  if (series.values.empty()) throw Error(ErrorKind::kParse, path + ": no data rows");
  return series;
}

void write_csv(const LoadSeries& series, const std::string& path, const std::string& value_column,
               const std::string& timestamp_column) {
  const auto start = parse_iso8601(series.start);
  if (!start) throw Error(ErrorKind::kParse, "series start '" + series.start + "' is not ISO-8601");
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kParse, "cannot write '" + path + "'");
  out << timestamp_column << ',' << value_column << '\n';
  char buf[64];
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", series.values[i]);
    out << format_iso8601(*start + static_cast<long long>(i) * 3600) << ',' << buf << '\n';
  }
}

WeekSplit week_split(const LoadSeries& series, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw Error(ErrorKind::kConfig, "test fraction must lie in (0, 1)");
  const std::size_t weeks = series.values.size() / kHoursPerWeek;
  if (weeks < 8)
    throw Error(ErrorKind::kTooShort, "series spans " + std::to_string(weeks) +
                                          " whole weeks; at least 8 are required");
  const auto n_test = static_cast<std::size_t>(
      std::ceil(test_fraction * static_cast<double>(weeks) - 1e-9));

  std::vector<std::size_t> order(weeks);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<bool> is_test(weeks, false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  WeekSplit split;
  for (std::size_t w = 0; w < weeks; ++w)
    if (is_test[w]) split.test_weeks.push_back(w);

  std::size_t w = 0;
  while (w < weeks) {
    std::size_t end = w;
    while (end + 1 < weeks && is_test[end + 1] == is_test[w]) ++end;
    const std::size_t begin_hour = w * kHoursPerWeek;
    const std::size_t end_hour =
        end + 1 == weeks ? series.values.size() : (end + 1) * kHoursPerWeek;
    Segment seg{begin_hour, std::vector<double>(series.values.begin() + static_cast<std::ptrdiff_t>(begin_hour),
                                                series.values.begin() + static_cast<std::ptrdiff_t>(end_hour))};
    (is_test[w] ? split.test : split.train).push_back(std::move(seg));
    w = end + 1;
  }
  return split;
}

SequenceDataset rolling_windows(std::span<const Segment> segments, int L, int K, int stride) {
  if (L < 0 || K < 1 || stride < 1)
    throw Error(ErrorKind::kConfig, "rolling_windows needs L >= 0, K >= 1, stride >= 1");
  const auto width = static_cast<std::size_t>(L + 1 + K);
  SequenceDataset ds;
  ds.L = L;
  ds.K = K;
  std::size_t total = 0;
  for (const auto& seg : segments)
    if (seg.values.size() >= width) total += (seg.values.size() - width) / static_cast<std::size_t>(stride) + 1;
  ds.windows.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(width));
  Eigen::Index row = 0;
  for (const auto& seg : segments) {
    if (seg.values.size() < width) {
      ++ds.skipped_segments;
      std::clog << "warning: segment at hour " << seg.offset << " has " << seg.values.size()
                << " values, fewer than the window length " << width << "; skipped\n";
      continue;
    }
    for (std::size_t s = 0; s + width <= seg.values.size(); s += static_cast<std::size_t>(stride)) {
      for (std::size_t c = 0; c < width; ++c)
        ds.windows(row, static_cast<Eigen::Index>(c)) = seg.values[s + c];
      ds.origins.push_back(seg.offset + s);
      ++row;
    }
  }
  if (total == 0)
    throw Error(ErrorKind::kSegmentTooShort,
                "no segment is long enough for a window of length " + std::to_string(width));
  return ds;
}

SequenceDataset standardize(const SequenceDataset& ds, std::optional<Standardization> stats) {
  if (ds.standardized) throw Error(ErrorKind::kConfig, "dataset is already standardized");
  Standardization s;
  if (stats) {
    if (!(stats->std > 0.0)) throw Error(ErrorKind::kZeroVariance, "standardization std must be > 0");
    s = *stats;
  } else {
    s.mean = ds.windows.mean();
    s.std = std::sqrt((ds.windows.array() - s.mean).square().mean());
    if (!(s.std > 0.0)) throw Error(ErrorKind::kZeroVariance, "dataset has zero variance");
  }
  SequenceDataset out = ds;
  out.windows = (ds.windows.array() - s.mean) / s.std;
  out.stats = s;
  out.standardized = true;
  return out;
}

SequenceDataset destandardize(const SequenceDataset& ds) {
  SequenceDataset out = ds;
  if (!ds.standardized) return out;
  out.windows = ds.windows.array() * ds.stats.std + ds.stats.mean;
  out.stats = Standardization{};
  out.standardized = false;
  return out;
}

std::pair<SequenceDataset, SequenceDataset> split_tail(const SequenceDataset& ds, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw Error(ErrorKind::kConfig, "validation fraction must lie in [0, 1)");
  const Eigen::Index n = ds.size();
  const auto n_val = static_cast<Eigen::Index>(std::floor(fraction * static_cast<double>(n)));
  SequenceDataset train = ds, val = ds;
  train.windows = ds.windows.topRows(n - n_val);
  val.windows = ds.windows.bottomRows(n_val);
  train.origins.assign(ds.origins.begin(), ds.origins.begin() + (n - n_val));
  val.origins.assign(ds.origins.begin() + (n - n_val), ds.origins.end());
  return {std::move(train), std::move(val)};
}

void to_json(nlohmann::json& j, const SynthParams& p) {
  j = nlohmann::json{{"offset", p.offset},
                     {"daily_amplitude", p.daily_amplitude},
                     {"harmonic", p.harmonic},
                     {"weekly_amplitude", p.weekly_amplitude},
                     {"noise_sd", p.noise_sd},
                     {"noise_phi", p.noise_phi},
                     {"day_scale_sd", p.day_scale_sd},
                     {"start", p.start},
                     {"location", p.location}};
}

void from_json(const nlohmann::json& j, SynthParams& p) {
  SynthParams d;
  p.offset = j.value("offset", d.offset);
  p.daily_amplitude = j.value("daily_amplitude", d.daily_amplitude);
  p.harmonic = j.value("harmonic", d.harmonic);
  p.weekly_amplitude = j.value("weekly_amplitude", d.weekly_amplitude);
  p.noise_sd = j.value("noise_sd", d.noise_sd);
  p.noise_phi = j.value("noise_phi", d.noise_phi);
  p.day_scale_sd = j.value("day_scale_sd", d.day_scale_sd);
  p.start = j.value("start", d.start);
  p.location = j.value("location", d.location);
}

LoadSeries synth_load(int weeks, const SynthParams& p, std::uint64_t seed) {
  if (weeks < 1) throw Error(ErrorKind::kConfig, "synth_load needs weeks >= 1");
  if (!(p.offset > 0.0)) throw Error(ErrorKind::kConfig, "synthetic offset must be positive");
  if (!(std::abs(p.noise_phi) < 1.0)) throw Error(ErrorKind::kConfig, "noise_phi must lie in (-1, 1)");
  if (!parse_iso8601(p.start)) throw Error(ErrorKind::kConfig, "synthetic start is not ISO-8601");
  Rng rng(seed);
  const std::size_t hours = static_cast<std::size_t>(weeks) * kHoursPerWeek;
  LoadSeries s;
  s.start = p.start;
  s.location = p.location;
  s.values.resize(hours);
  // Start the noise in its stationary distribution.
  double noise = p.noise_sd > 0.0 ? rng.normal() * p.noise_sd / std::sqrt(1.0 - p.noise_phi * p.noise_phi)
                                  : 0.0;
  double day_factor = 1.0;
  for (std::size_t t = 0; t < hours; ++t) {
    const double hour = static_cast<double>(t % 24);
    const auto day = static_cast<double>((t / 24) % 7);
    if (t % 24 == 0) day_factor = p.day_scale_sd > 0.0 ? std::exp(p.day_scale_sd * rng.normal()) : 1.0;
    if (t > 0 && p.noise_sd > 0.0) noise = p.noise_phi * noise + p.noise_sd * rng.normal();
    const double profile = std::sin(2.0 * kPi * (hour - 9.0) / 24.0) +
                           p.harmonic * std::sin(4.0 * kPi * (hour - 3.0) / 24.0);
    const double daily = std::max(0.05, 1.0 + p.daily_amplitude * profile * day_factor);
    const double weekly = std::max(0.05, 1.0 + p.weekly_amplitude * std::cos(2.0 * kPi * day / 7.0));
    s.values[t] = p.offset * weekly * daily * std::exp(noise);
  }
  return s;
}

double autocorrelation(std::span<const double> values, std::size_t lag) {
  const std::size_t n = values.size();
  if (lag >= n) throw Error(ErrorKind::kTooShort, "autocorrelation lag exceeds series length");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    den += (values[i] - mean) * (values[i] - mean);
    if (i + lag < n) num += (values[i] - mean) * (values[i + lag] - mean);
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace canf
