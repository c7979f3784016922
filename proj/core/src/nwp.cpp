#include "gustcast/nwp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_map>

#include "gustcast/timeutil.hpp"

namespace gustcast::data {

std::string source_name(NwpSource s) { return s == NwpSource::kGfs ? "GFS" : "ARPEGE"; }

NwpSource source_from_name(const std::string& name) {
  if (name == "GFS") return NwpSource::kGfs;
  if (name == "ARPEGE") return NwpSource::kArpege;
  throw std::invalid_argument("nwp: unknown source '" + name + "'");
}

void NwpSourceSpec::validate() const {
  if (cadence_hours < 1 || lat_count < 1 || lon_count < 1 || raw_level_count < 1)
    throw std::invalid_argument("nwp: source spec counts must be positive");
  if (selected_level_count < 1 || selected_level_count > raw_level_count)
    throw std::invalid_argument("nwp: selected_level_count must lie in [1, raw_level_count]");
}

void NwpCube::validate() const {
  spec.validate();
  if (levels < 1) throw std::invalid_argument("nwp: cube carries no levels");
  const std::size_t expect = timestamps.size() * static_cast<std::size_t>(cell_count());
  if (u.size() != expect || v.size() != expect)
    throw std::invalid_argument("nwp: cube arrays do not match timestamps x grid");
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    if (timestamps[i] <= timestamps[i - 1])
      throw std::invalid_argument("nwp: cube timestamps must be strictly increasing");
}

std::vector<double> wind_speed(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw std::invalid_argument("wind_speed: component lengths differ (" + std::to_string(u.size()) +
                                " vs " + std::to_string(v.size()) + ")");
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = std::hypot(u[i], v[i]);
  return out;
}

MinMax minmax_fit(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("minmax: empty input");
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (*hi <= *lo)
    throw std::invalid_argument("minmax: constant series (min == max == " + std::to_string(*lo) + ")");
  return {*lo, *hi};
}

std::vector<double> minmax_transform(std::span<const double> x, const MinMax& anchors) {
  const double span = anchors.x_max - anchors.x_min;
  if (span <= 0.0) throw std::invalid_argument("minmax: invalid anchors (max <= min)");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - anchors.x_min) / span;
  return out;
}

void normalize_power(PowerSeries& series, std::int64_t train_end) {
  std::vector<double> train_values;
  train_values.reserve(series.power.size());
  for (std::size_t i = 0; i < series.timestamps.size(); ++i)
    if (series.timestamps[i] < train_end) train_values.push_back(series.power[i]);
  if (train_values.empty()) throw std::invalid_argument("normalize_power: no samples before train_end");
  const MinMax anchors = minmax_fit(train_values);
  series.x_min = anchors.x_min;
  series.x_max = anchors.x_max;
  series.normalized = minmax_transform(series.power, anchors);
}

void fill_small_gaps(PowerSeries& series, int max_gap_hours) {
  if (series.timestamps.size() < 2) return;
  std::vector<std::int64_t> ts;
  std::vector<double> power;
  ts.reserve(series.timestamps.size());
  power.reserve(series.power.size());
  ts.push_back(series.timestamps.front());
  power.push_back(series.power.front());
  for (std::size_t i = 1; i < series.timestamps.size(); ++i) {
    const std::int64_t gap = (series.timestamps[i] - series.timestamps[i - 1]) / timeutil::kHour;
    if (gap > 1 && gap <= max_gap_hours) {
      const double fill = 0.5 * (series.power[i - 1] + series.power[i]);
      for (std::int64_t g = 1; g < gap; ++g) {
        ts.push_back(series.timestamps[i - 1] + g * timeutil::kHour);
        power.push_back(fill);
      }
    }
    ts.push_back(series.timestamps[i]);
    power.push_back(series.power[i]);
  }
  series.timestamps = std::move(ts);
  series.power = std::move(power);
  series.normalized.clear();  // stale after editing the raw series
}

std::array<double, 4> cyclic_time_features(std::int64_t timestamp, double month_period) {
  if (month_period <= 0.0) throw std::invalid_argument("cyclic_time_features: month period must be positive");
  const double moy = static_cast<double>(timeutil::month_of_year(timestamp));
  const double hod = static_cast<double>(timeutil::hour_of_day(timestamp));
  const double two_pi = 2.0 * std::numbers::pi;
  return {std::sin(moy * two_pi / month_period), std::cos(moy * two_pi / month_period),
          std::sin(hod * two_pi / 24.0), std::cos(hod * two_pi / 24.0)};
}

NwpCube interpolate_hourly(const NwpCube& cube, std::int64_t range_first, std::int64_t range_last) {
  cube.validate();
  if (cube.timestamps.size() < 2)
    throw std::invalid_argument("interpolate: needs at least 2 observed readings");
  const std::int64_t obs_first = cube.timestamps.front();
  const std::int64_t obs_last = cube.timestamps.back();
  if (range_first == kObservedBound) range_first = obs_first;
  if (range_last == kObservedBound) range_last = obs_last;
  if (range_last < range_first) throw std::invalid_argument("interpolate: empty output range");
  const std::int64_t hours = (range_last - range_first) / timeutil::kHour + 1;
  const std::int64_t cells = cube.cell_count();

  NwpCube out;
  out.spec = cube.spec;
  out.levels = cube.levels;
  out.timestamps.resize(static_cast<std::size_t>(hours));
  out.u.assign(static_cast<std::size_t>(hours * cells), 0.0);
  out.v.assign(static_cast<std::size_t>(hours * cells), 0.0);

  // observed hour -> source row
  std::unordered_map<std::int64_t, std::size_t> observed;
  observed.reserve(cube.timestamps.size());
  for (std::size_t i = 0; i < cube.timestamps.size(); ++i) observed[cube.timestamps[i]] = i;

  auto copy_row = [&](std::size_t src, double* du, double* dv) {
    const double* su = cube.u.data() + static_cast<std::int64_t>(src) * cells;
    const double* sv = cube.v.data() + static_cast<std::int64_t>(src) * cells;
    std::copy(su, su + cells, du);
    std::copy(sv, sv + cells, dv);
  };

  std::size_t prev = 0;  // nearest observed row at or before the cursor
  for (std::int64_t h = 0; h < hours; ++h) {
    const std::int64_t ts = range_first + h * timeutil::kHour;
    out.timestamps[static_cast<std::size_t>(h)] = ts;
    double* du = out.u.data() + h * cells;
    double* dv = out.v.data() + h * cells;
    auto it = observed.find(ts);
    if (it != observed.end()) {
      prev = it->second;
      copy_row(it->second, du, dv);
      continue;
    }
    if (ts < obs_first) {  // only one neighbor exists: replicate it
      copy_row(0, du, dv);
      continue;
    }
    if (ts > obs_last) {
      copy_row(cube.timestamps.size() - 1, du, dv);
      continue;
    }
    while (prev + 1 < cube.timestamps.size() && cube.timestamps[prev + 1] < ts) ++prev;
    const std::size_t next = prev + 1;
    const double* au = cube.u.data() + static_cast<std::int64_t>(prev) * cells;
    const double* av = cube.v.data() + static_cast<std::int64_t>(prev) * cells;
    const double* bu = cube.u.data() + static_cast<std::int64_t>(next) * cells;
    const double* bv = cube.v.data() + static_cast<std::int64_t>(next) * cells;
    for (std::int64_t c = 0; c < cells; ++c) {
      du[c] = 0.5 * (au[c] + bu[c]);
      dv[c] = 0.5 * (av[c] + bv[c]);
    }
  }
  return out;
}

std::vector<double> spatial_mean_speed(const NwpCube& cube, int level) {
  if (level < 0 || level >= cube.levels)
    throw std::invalid_argument("spatial_mean_speed: level " + std::to_string(level) + " outside [0," +
                                std::to_string(cube.levels) + ")");
  const std::size_t t_count = cube.timestamps.size();
  std::vector<double> out(t_count, 0.0);
  const int cells = cube.spec.lat_count * cube.spec.lon_count;
  for (std::size_t t = 0; t < t_count; ++t) {
    double acc = 0.0;
    for (int lat = 0; lat < cube.spec.lat_count; ++lat)
      for (int lon = 0; lon < cube.spec.lon_count; ++lon) {
        const std::size_t i = cube.index(static_cast<std::int64_t>(t), lat, lon, level);
        acc += std::hypot(cube.u[i], cube.v[i]);
      }
    out[t] = acc / cells;
  }
  return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("pearson: inputs must be non-empty and equal length");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;  // undefined correlation reads as 0
  return sab / std::sqrt(saa * sbb);
}

std::vector<int> select_levels_by_correlation(const NwpCube& cube, const PowerSeries& power, int k,
                                              std::int64_t train_end) {
  if (k < 1 || k > cube.levels)
    throw std::invalid_argument("select_levels: k=" + std::to_string(k) + " outside [1," +
                                std::to_string(cube.levels) + "]");
  if (power.normalized.size() != power.timestamps.size())
    throw std::invalid_argument("select_levels: power series is not normalized yet");

  std::unordered_map<std::int64_t, std::size_t> power_at;
  power_at.reserve(power.timestamps.size());
  for (std::size_t i = 0; i < power.timestamps.size(); ++i)
    if (power.timestamps[i] < train_end) power_at[power.timestamps[i]] = i;

  std::vector<std::size_t> cube_rows;
  std::vector<double> y;
  for (std::size_t t = 0; t < cube.timestamps.size(); ++t) {
    auto it = power_at.find(cube.timestamps[t]);
    if (it == power_at.end()) continue;
    cube_rows.push_back(t);
    y.push_back(power.normalized[it->second]);
  }
  if (y.size() < 2) throw std::invalid_argument("select_levels: no overlapping training timestamps");

  std::vector<std::pair<double, int>> ranked;  // (|corr|, level)
  ranked.reserve(static_cast<std::size_t>(cube.levels));
  for (int level = 0; level < cube.levels; ++level) {
    const std::vector<double> mean_speed = spatial_mean_speed(cube, level);
    std::vector<double> x;
    x.reserve(cube_rows.size());
    for (std::size_t r : cube_rows) x.push_back(mean_speed[r]);
    ranked.emplace_back(std::abs(pearson(x, y)), level);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(ranked[static_cast<std::size_t>(i)].second);
  return out;
}

NwpCube select_cube_levels(const NwpCube& cube, const std::vector<int>& level_indices) {
  for (int lv : level_indices)
    if (lv < 0 || lv >= cube.levels)
      throw std::invalid_argument("select_cube_levels: level " + std::to_string(lv) + " out of range");
  NwpCube out;
  out.spec = cube.spec;
  out.levels = static_cast<int>(level_indices.size());
  out.timestamps = cube.timestamps;
  const std::size_t frames = cube.timestamps.size();
  out.u.resize(frames * static_cast<std::size_t>(out.cell_count()));
  out.v.resize(out.u.size());
  std::size_t o = 0;
  for (std::size_t t = 0; t < frames; ++t)
    for (int lat = 0; lat < cube.spec.lat_count; ++lat)
      for (int lon = 0; lon < cube.spec.lon_count; ++lon)
        for (int lv : level_indices) {
          const std::size_t i = cube.index(static_cast<std::int64_t>(t), lat, lon, lv);
          out.u[o] = cube.u[i];
          out.v[o] = cube.v[i];
          ++o;
        }
  return out;
}

namespace {

SpeedCube speed_cube_common(const NwpCube& hourly, const std::vector<int>& level_indices) {
  const NwpCube reduced = select_cube_levels(hourly, level_indices);
  SpeedCube out;
  out.spec = reduced.spec;
  out.levels = level_indices;
  out.timestamps = reduced.timestamps;
  out.speed = wind_speed(reduced.u, reduced.v);
  return out;
}

void scale_speed_channels(SpeedCube& cube) {
  const std::int64_t k = cube.channel_count();
  const std::int64_t frame = cube.frame_size();
  const std::int64_t t_count = static_cast<std::int64_t>(cube.timestamps.size());
  for (std::int64_t c = 0; c < k; ++c) {
    const MinMax& a = cube.anchors[static_cast<std::size_t>(c)];
    const double span = a.x_max - a.x_min;
    for (std::int64_t t = 0; t < t_count; ++t)
      for (std::int64_t cell = c; cell < frame; cell += k) {
        double& v = cube.speed[static_cast<std::size_t>(t * frame + cell)];
        v = (v - a.x_min) / span;
      }
  }
}

}  // namespace

SpeedCube build_speed_cube(const NwpCube& hourly_cube, const std::vector<int>& level_indices,
                           std::int64_t train_end) {
  SpeedCube out = speed_cube_common(hourly_cube, level_indices);
  const std::int64_t k = out.channel_count();
  const std::int64_t frame = out.frame_size();
  out.anchors.resize(static_cast<std::size_t>(k));
  for (std::int64_t c = 0; c < k; ++c) {
    std::vector<double> train_values;
    for (std::size_t t = 0; t < out.timestamps.size(); ++t) {
      if (out.timestamps[t] >= train_end) continue;
      for (std::int64_t cell = c; cell < frame; cell += k)
        train_values.push_back(out.speed[t * static_cast<std::size_t>(frame) + static_cast<std::size_t>(cell)]);
    }
    if (train_values.empty())
      throw std::invalid_argument("build_speed_cube: no training timestamps before train_end");
    out.anchors[static_cast<std::size_t>(c)] = minmax_fit(train_values);
  }
  scale_speed_channels(out);
  return out;
}

SpeedCube build_speed_cube_with_anchors(const NwpCube& hourly_cube,
                                        const std::vector<int>& level_indices,
                                        const std::vector<MinMax>& anchors) {
  SpeedCube out = speed_cube_common(hourly_cube, level_indices);
  if (anchors.size() != level_indices.size())
    throw std::invalid_argument("build_speed_cube: anchor count mismatch");
  out.anchors = anchors;
  scale_speed_channels(out);
  return out;
}

}  // namespace gustcast::data
