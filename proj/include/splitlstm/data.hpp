// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "splitlstm/model.hpp"

namespace splitlstm {

inline constexpr const char* kDefaultColumn = "dissolved_oxygen";
inline constexpr double kDefaultTrainFraction = 0.7;

struct TimeSeries {
  std::vector<double> values;
  std::vector<std::string> timestamps;  // optional; empty or one per value
  std::string source;
};

struct NormalizationParams {
  double min = 0.0;
  double max = 1.0;

  double apply(double x) const noexcept { return (x - min) / (max - min); }
  double invert(double x) const noexcept { return x * (max - min) + min; }
};

struct Window {
  std::vector<double> x;  // window_length values, oldest first
  double y = 0.0;         // the value immediately after x
};

using WindowedDataset = std::vector<Window>;

/// Normalized, windowed train/test segments plus the fitted normalization.
struct PreparedData {
  WindowedDataset train;
  WindowedDataset test;
  NormalizationParams norm;
};

/// Reads one named column of a header-row CSV. A column named "date", "day"
/// or "timestamp" (first match) is kept as the timestamps.
TimeSeries load_csv(const std::filesystem::path& path, const std::string& column = kDefaultColumn);
TimeSeries parse_csv(const std::string& text, const std::string& column = kDefaultColumn,
                     const std::string& source = "<memory>");

/// Seasonal + weekly sinusoids with seeded Gaussian noise, clamped to [4, 14] mg/L.
TimeSeries generate_synthetic(std::uint64_t seed, int n_days);
/// "day,dissolved_oxygen" CSV with values printed to round-trip exactly.
std::string to_csv(const TimeSeries& series);

/// First floor(fraction * L) values train, remainder test.
std::pair<TimeSeries, TimeSeries> chronological_split(const TimeSeries& series,
                                                      double train_fraction = kDefaultTrainFraction,
                                                      int window_length = kWindowLength);

NormalizationParams fit_minmax(std::span<const double> train);
std::vector<double> apply_minmax(std::span<const double> values, const NormalizationParams& p);
std::vector<double> invert_minmax(std::span<const double> values, const NormalizationParams& p);

/// Stride-1 windows: x_i = values[i, i+T), y_i = values[i+T].
WindowedDataset make_windows(std::span<const double> values, int window_length = kWindowLength);

/// Split, fit normalization on train, normalize both, window each segment.
PreparedData prepare(const TimeSeries& series, double train_fraction = kDefaultTrainFraction,
                     int window_length = kWindowLength);

}  // namespace splitlstm
