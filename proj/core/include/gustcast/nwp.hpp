#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gustcast::data {

enum class NwpSource { kGfs, kArpege };

std::string source_name(NwpSource s);
NwpSource source_from_name(const std::string& name);

struct NwpSourceSpec {
  NwpSource source = NwpSource::kGfs;
  int cadence_hours = 3;
  int lat_count = 4;
  int lon_count = 4;
  int raw_level_count = 24;
  int selected_level_count = 9;

  static NwpSourceSpec gfs() { return {NwpSource::kGfs, 3, 4, 4, 24, 9}; }
  static NwpSourceSpec arpege() { return {NwpSource::kArpege, 1, 5, 5, 27, 11}; }
  void validate() const;
};

// Gridded wind-vector components for one farm and one NWP source.
// u/v are dense [T, lat, lon, level]; `levels` is the level count actually
// carried (raw before selection, k afterwards).
struct NwpCube {
  NwpSourceSpec spec;
  int levels = 0;
  std::vector<std::int64_t> timestamps;  // UTC seconds, ascending
  std::vector<double> u;
  std::vector<double> v;

  std::int64_t cell_count() const {
    return static_cast<std::int64_t>(spec.lat_count) * spec.lon_count * levels;
  }
  std::size_t index(std::int64_t t, int lat, int lon, int level) const {
    return static_cast<std::size_t>(((t * spec.lat_count + lat) * spec.lon_count + lon) * levels + level);
  }
  void validate() const;
};

struct PowerSeries {
  int farm_id = 0;
  std::vector<std::int64_t> timestamps;  // hourly UTC, ascending
  std::vector<double> power;             // raw units
  std::vector<double> normalized;        // filled by normalize_power
  double x_min = 0.0;
  double x_max = 0.0;
};

// Elementwise magnitude sqrt(u^2 + v^2).
std::vector<double> wind_speed(std::span<const double> u, std::span<const double> v);

struct MinMax {
  double x_min = 0.0;
  double x_max = 1.0;
};

// Fit on the training range; throws on a constant series.
MinMax minmax_fit(std::span<const double> x);
// (x - min)/(max - min); values outside the fitted range are not clipped.
std::vector<double> minmax_transform(std::span<const double> x, const MinMax& anchors);

// Fits anchors on samples with timestamp < train_end (exclusive) and fills
// series.normalized for the whole range.
void normalize_power(PowerSeries& series, std::int64_t train_end);

// Fills hourly gaps of at most max_gap_hours with the mean of the flanking
// observed values. Longer gaps stay; windowing treats them as segment breaks.
void fill_small_gaps(PowerSeries& series, int max_gap_hours = 3);

// (moy_sin, moy_cos, hod_sin, hod_cos); month period is configurable.
std::array<double, 4> cyclic_time_features(std::int64_t timestamp, double month_period = 12.0);

// Densifies a cube to hourly cadence. Each missing hour takes the mean of the
// nearest preceding and following observed readings; hours outside the
// observed range replicate the single available neighbor. Observed hours pass
// through unchanged, so the operation is idempotent. The output range
// defaults to the observed bounds.
inline constexpr std::int64_t kObservedBound = -1;
NwpCube interpolate_hourly(const NwpCube& cube, std::int64_t range_first = kObservedBound,
                           std::int64_t range_last = kObservedBound);

// Mean wind speed over the grid cells of one level, per timestamp.
std::vector<double> spatial_mean_speed(const NwpCube& cube, int level);

// Pearson correlation; zero if either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

// Ranks levels by |corr(spatial-mean speed, power)| over the timestamps the
// cube and series share, restricted to t < train_end. Ties break toward the
// lower level index. Returns the k best, rank order.
std::vector<int> select_levels_by_correlation(const NwpCube& cube, const PowerSeries& power, int k,
                                              std::int64_t train_end);

// Reduced cube holding only the given levels, in the given order.
NwpCube select_cube_levels(const NwpCube& cube, const std::vector<int>& level_indices);

// Wind-speed grids of the selected levels, min-max scaled per channel with
// anchors fitted on t < train_end.
struct SpeedCube {
  NwpSourceSpec spec;
  std::vector<int> levels;               // raw-level identities of the channels
  std::vector<std::int64_t> timestamps;  // hourly
  std::vector<double> speed;             // [T, lat, lon, k]
  std::vector<MinMax> anchors;           // per channel

  std::int64_t channel_count() const { return static_cast<std::int64_t>(levels.size()); }
  std::int64_t frame_size() const {
    return static_cast<std::int64_t>(spec.lat_count) * spec.lon_count * channel_count();
  }
};

SpeedCube build_speed_cube(const NwpCube& hourly_cube, const std::vector<int>& level_indices,
                           std::int64_t train_end);
// Same, but with pre-fitted anchors (e.g. loaded from a manifest).
SpeedCube build_speed_cube_with_anchors(const NwpCube& hourly_cube,
                                        const std::vector<int>& level_indices,
                                        const std::vector<MinMax>& anchors);

}  // namespace gustcast::data
