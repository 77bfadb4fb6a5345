// SPDX-License-Identifier: Apache-2.0
#include "splitlstm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "splitlstm/random.hpp"

namespace splitlstm {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

TimeSeries parse_csv(const std::string& text, const std::string& column, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(source + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = split_fields(line);

  const auto col = std::find(header.begin(), header.end(), column);
  if (col == header.end()) {
    std::string names;
    for (const auto& h : header) names += (names.empty() ? "" : ", ") + h;
    throw ConfigError(source + ": no column '" + column + "' (available: " + names + ")");
  }
  const auto value_idx = static_cast<std::size_t>(col - header.begin());
  std::ptrdiff_t time_idx = -1;
  for (const char* name : {"date", "day", "timestamp"}) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it != header.end()) {
      time_idx = it - header.begin();
      break;
    }
  }

  TimeSeries series;
  series.source = source;
  std::vector<std::size_t> bad_rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    double v = 0.0;
    if (value_idx >= fields.size() || !parse_double(fields[value_idx], v)) {
      bad_rows.push_back(row);
      continue;
    }
    series.values.push_back(v);
    if (time_idx >= 0) {
      const auto t = static_cast<std::size_t>(time_idx);
      series.timestamps.push_back(t < fields.size() ? fields[t] : std::string());
    }
  }
  if (!bad_rows.empty()) {
    std::string rows;
    for (std::size_t i = 0; i < bad_rows.size() && i < 20; ++i) rows += (i ? ", " : "") + std::to_string(bad_rows[i]);
    if (bad_rows.size() > 20) rows += ", ...";
    throw ConfigError(source + ": non-numeric '" + column + "' in rows " + rows);
  }
  if (series.values.empty()) throw ConfigError(source + ": no data rows");
  return series;
}

TimeSeries load_csv(const std::filesystem::path& path, const std::string& column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_csv(text.str(), column, path.string());
}

TimeSeries generate_synthetic(std::uint64_t seed, int n_days) {
  if (n_days < kWindowLength + 1) throw ConfigError("synthetic series needs at least 16 days");
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  Rng rng(seed);
  TimeSeries series;
  series.source = "synthetic(seed=" + std::to_string(seed) + ")";
  series.values.reserve(static_cast<std::size_t>(n_days));
  series.timestamps.reserve(static_cast<std::size_t>(n_days));
  for (int t = 0; t < n_days; ++t) {
    const double v = 9.0 + 2.5 * std::sin(kTwoPi * t / 365.25) + 0.5 * std::sin(kTwoPi * t / 7.0) + 0.25 * rng.normal();
    series.values.push_back(std::clamp(v, 4.0, 14.0));
    series.timestamps.push_back(std::to_string(t));
  }
  return series;
}

std::string to_csv(const TimeSeries& series) {
  std::string out = std::string("day,") + kDefaultColumn + "\n";
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    out += (i < series.timestamps.size() ? series.timestamps[i] : std::to_string(i)) + "," +
           format_value(series.values[i]) + "\n";
  }
  return out;
}

std::pair<TimeSeries, TimeSeries> chronological_split(const TimeSeries& series, double train_fraction,
                                                      int window_length) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must be in (0, 1)");
  const std::size_t n = series.values.size();
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  const auto min_len = static_cast<std::size_t>(window_length + 1);
  if (n_train < min_len || n - n_train < min_len) {
    throw ConfigError("degenerate split: " + std::to_string(n_train) + "/" + std::to_string(n - n_train) +
                      " values, each side needs at least " + std::to_string(min_len));
  }
  auto part = [&](std::size_t lo, std::size_t hi) {
    TimeSeries s;
    s.source = series.source;
    s.values.assign(series.values.begin() + static_cast<std::ptrdiff_t>(lo),
                    series.values.begin() + static_cast<std::ptrdiff_t>(hi));
    if (series.timestamps.size() == n) {
      s.timestamps.assign(series.timestamps.begin() + static_cast<std::ptrdiff_t>(lo),
                          series.timestamps.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    return s;
  };
  return {part(0, n_train), part(n_train, n)};
}

NormalizationParams fit_minmax(std::span<const double> train) {
  if (train.empty()) throw ConfigError("cannot fit normalization on an empty series");
  const auto [lo, hi] = std::minmax_element(train.begin(), train.end());
  if (!(*hi > *lo)) throw ConfigError("cannot fit normalization on a constant series");
  return {*lo, *hi};
}

std::vector<double> apply_minmax(std::span<const double> values, const NormalizationParams& p) {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [&](double v) { return p.apply(v); });
  return out;
}

std::vector<double> invert_minmax(std::span<const double> values, const NormalizationParams& p) {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [&](double v) { return p.invert(v); });
  return out;
}

WindowedDataset make_windows(std::span<const double> values, int window_length) {
  const auto t = static_cast<std::size_t>(window_length);
  if (window_length < 1 || values.size() < t + 1) {
    throw ConfigError("series of length " + std::to_string(values.size()) + " is too short for windows of " +
                      std::to_string(window_length));
  }
  WindowedDataset out;
  out.reserve(values.size() - t);
  for (std::size_t i = 0; i + t < values.size(); ++i) {
    out.push_back({std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(i),
                                       values.begin() + static_cast<std::ptrdiff_t>(i + t)),
                   values[i + t]});
  }
  return out;
}

PreparedData prepare(const TimeSeries& series, double train_fraction, int window_length) {
  const auto [train, test] = chronological_split(series, train_fraction, window_length);
  PreparedData out;
  out.norm = fit_minmax(train.values);
  out.train = make_windows(apply_minmax(train.values, out.norm), window_length);
  out.test = make_windows(apply_minmax(test.values, out.norm), window_length);
  return out;
}

}  // namespace splitlstm
