#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gustcast/matrix.hpp"
#include "gustcast/nwp.hpp"

namespace gustcast::data {

// Model-ready arrays. One sample couples 48 lagged power values with the
// exogenous grids, time features and targets of the following 24 hours.
struct WindowedDataset {
  std::int64_t count = 0;
  std::int64_t lookback = 48;
  std::int64_t horizon = 24;
  int gfs_lat = 4, gfs_lon = 4, gfs_levels = 9;
  int arp_lat = 5, arp_lon = 5, arp_levels = 11;
  int farm_count = 7;

  std::vector<double> x_lags;   // [N, lookback, 1]
  std::vector<double> x_gfs;    // [N, horizon, gfs_lat, gfs_lon, gfs_levels]
  std::vector<double> x_arp;    // [N, horizon, arp_lat, arp_lon, arp_levels]
  std::vector<double> x_time;   // [N, horizon, 4]
  std::vector<double> x_farm;   // [N, farm_count] one-hot
  std::vector<double> y;        // [N, horizon]
  std::vector<std::int64_t> sample_timestamps;  // first target hour per sample
  std::vector<int> farm_ids;                    // provenance per sample

  std::int64_t gfs_frame() const { return static_cast<std::int64_t>(gfs_lat) * gfs_lon * gfs_levels; }
  std::int64_t arp_frame() const { return static_cast<std::int64_t>(arp_lat) * arp_lon * arp_levels; }

  bool layout_matches(const WindowedDataset& other) const;
  void validate() const;

  // Materialized row subset, order preserved.
  WindowedDataset select(std::span<const std::int64_t> indices) const;
};

struct WindowOptions {
  std::int64_t lookback = 48;
  std::int64_t horizon = 24;
  std::int64_t stride = 1;
  double month_period = 12.0;
  int farm_count = 7;
};

// Slides windows over every contiguous hourly segment of the power series.
// Exogenous grids are aligned to the 24 target hours (never the lag hours);
// both cubes must cover every target hour.
WindowedDataset window_samples(const PowerSeries& power, const SpeedCube& gfs, const SpeedCube& arp,
                               const WindowOptions& options);

// Row-wise concatenation of per-farm datasets (identical layouts). Farm
// one-hots and provenance ids are preserved, so deconcatenation by farm
// recovers the inputs.
WindowedDataset concat_farms_global(const std::vector<WindowedDataset>& datasets);

WindowedDataset filter_by_farm(const WindowedDataset& dataset, int farm_id);

struct SplitSpec {
  int test_days = 120;
  double val_fraction = 0.10;
  bool merge_after_tuning = true;
};

struct SplitResult {
  WindowedDataset train;
  WindowedDataset val;
  WindowedDataset test;
  std::int64_t test_region_start = 0;  // first test target hour
  // Train+val, for the merge-and-retrain pass.
  WindowedDataset merged() const;
};

// Chronological split: the last `test_days` non-overlapping 24-step blocks
// (anchored at the series end) become test batches; the last val_fraction of
// the remaining samples become validation. Samples whose target windows
// straddle the test boundary are dropped.
SplitResult split_train_val_test(const WindowedDataset& dataset, const SplitSpec& spec);

// Boundary used when fitting statistics before windowing: first hour of the
// test target region for a series ending at last_hour.
std::int64_t test_region_start_for(std::int64_t last_hour, int test_days);

// |normalized(t) - normalized(t-window)| >= threshold; first `window` entries
// are false.
std::vector<std::uint8_t> ramp_labels(std::span<const double> normalized, double threshold,
                                      std::int64_t window);

// Inverse-frequency class weights w_c = total / (2 * count_c).
std::pair<double, double> class_weights(std::span<const std::uint8_t> labels);

// Per-horizon-step flat feature rows for the tabular baselines, ordered
// sample-major then step-minor. Columns: GFS grid, ARPEGE grid, 4 time
// features, farm one-hot, then optionally the 48 lags.
Matrix tabular_features(const WindowedDataset& dataset, bool include_lags);
std::vector<double> tabular_targets(const WindowedDataset& dataset);
// Human-readable identity of a tabular column (for audits and tests).
std::string tabular_column_name(const WindowedDataset& dataset, std::int64_t column, bool include_lags);

// Step-h rows of a per-step matrix (rows laid out sample-major, step-minor).
std::vector<std::int64_t> step_row_indices(std::int64_t sample_count, std::int64_t horizon, std::int64_t step);

}  // namespace gustcast::data
