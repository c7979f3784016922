#include "gustcast/windowing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "gustcast/timeutil.hpp"

namespace gustcast::data {

namespace {

void append_block(std::vector<double>& dst, const std::vector<double>& src, std::int64_t row,
                  std::int64_t row_size) {
  dst.insert(dst.end(), src.begin() + row * row_size, src.begin() + (row + 1) * row_size);
}

}  // namespace

bool WindowedDataset::layout_matches(const WindowedDataset& other) const {
  return lookback == other.lookback && horizon == other.horizon && gfs_lat == other.gfs_lat &&
         gfs_lon == other.gfs_lon && gfs_levels == other.gfs_levels && arp_lat == other.arp_lat &&
         arp_lon == other.arp_lon && arp_levels == other.arp_levels && farm_count == other.farm_count;
}

void WindowedDataset::validate() const {
  const auto n = static_cast<std::size_t>(count);
  if (x_lags.size() != n * static_cast<std::size_t>(lookback) ||
      x_gfs.size() != n * static_cast<std::size_t>(horizon * gfs_frame()) ||
      x_arp.size() != n * static_cast<std::size_t>(horizon * arp_frame()) ||
      x_time.size() != n * static_cast<std::size_t>(horizon * 4) ||
      x_farm.size() != n * static_cast<std::size_t>(farm_count) ||
      y.size() != n * static_cast<std::size_t>(horizon) || sample_timestamps.size() != n ||
      farm_ids.size() != n)
    throw std::invalid_argument("windowed dataset: array sizes inconsistent with count");
}

WindowedDataset WindowedDataset::select(std::span<const std::int64_t> indices) const {
  WindowedDataset out = *this;
  out.count = static_cast<std::int64_t>(indices.size());
  out.x_lags.clear();
  out.x_gfs.clear();
  out.x_arp.clear();
  out.x_time.clear();
  out.x_farm.clear();
  out.y.clear();
  out.sample_timestamps.clear();
  out.farm_ids.clear();
  for (std::int64_t i : indices) {
    if (i < 0 || i >= count) throw std::invalid_argument("windowed dataset: select index out of range");
    append_block(out.x_lags, x_lags, i, lookback);
    append_block(out.x_gfs, x_gfs, i, horizon * gfs_frame());
    append_block(out.x_arp, x_arp, i, horizon * arp_frame());
    append_block(out.x_time, x_time, i, horizon * 4);
    append_block(out.x_farm, x_farm, i, farm_count);
    append_block(out.y, y, i, horizon);
    out.sample_timestamps.push_back(sample_timestamps[static_cast<std::size_t>(i)]);
    out.farm_ids.push_back(farm_ids[static_cast<std::size_t>(i)]);
  }
  return out;
}

WindowedDataset window_samples(const PowerSeries& power, const SpeedCube& gfs, const SpeedCube& arp,
                               const WindowOptions& options) {
  if (options.lookback < 1 || options.horizon < 1 || options.stride < 1)
    throw std::invalid_argument("window_samples: lookback/horizon/stride must be positive");
  if (power.normalized.size() != power.timestamps.size())
    throw std::invalid_argument("window_samples: power series is not normalized yet");
  if (power.farm_id < 0 || power.farm_id >= options.farm_count)
    throw std::invalid_argument("window_samples: farm_id " + std::to_string(power.farm_id) +
                                " outside farm_count " + std::to_string(options.farm_count));
  const std::int64_t window = options.lookback + options.horizon;
  if (static_cast<std::int64_t>(power.timestamps.size()) < window)
    throw std::invalid_argument("window_samples: series length " + std::to_string(power.timestamps.size()) +
                                " < lookback+horizon " + std::to_string(window));

  std::unordered_map<std::int64_t, std::size_t> gfs_at, arp_at;
  gfs_at.reserve(gfs.timestamps.size());
  for (std::size_t i = 0; i < gfs.timestamps.size(); ++i) gfs_at[gfs.timestamps[i]] = i;
  arp_at.reserve(arp.timestamps.size());
  for (std::size_t i = 0; i < arp.timestamps.size(); ++i) arp_at[arp.timestamps[i]] = i;

  WindowedDataset out;
  out.lookback = options.lookback;
  out.horizon = options.horizon;
  out.gfs_lat = gfs.spec.lat_count;
  out.gfs_lon = gfs.spec.lon_count;
  out.gfs_levels = static_cast<int>(gfs.channel_count());
  out.arp_lat = arp.spec.lat_count;
  out.arp_lon = arp.spec.lon_count;
  out.arp_levels = static_cast<int>(arp.channel_count());
  out.farm_count = options.farm_count;

  const std::int64_t gfs_frame = out.gfs_frame();
  const std::int64_t arp_frame = out.arp_frame();

  // contiguous hourly segments; longer gaps split the series
  std::size_t seg_begin = 0;
  const std::size_t total = power.timestamps.size();
  while (seg_begin < total) {
    std::size_t seg_end = seg_begin + 1;
    while (seg_end < total &&
           power.timestamps[seg_end] - power.timestamps[seg_end - 1] == timeutil::kHour)
      ++seg_end;
    const std::int64_t seg_len = static_cast<std::int64_t>(seg_end - seg_begin);
    if (seg_len >= window) {
      const std::int64_t n_seg = (seg_len - window) / options.stride + 1;
      for (std::int64_t s = 0; s < n_seg; ++s) {
        const std::size_t start = seg_begin + static_cast<std::size_t>(s * options.stride);
        const std::size_t target0 = start + static_cast<std::size_t>(options.lookback);
        for (std::size_t i = 0; i < static_cast<std::size_t>(options.lookback); ++i)
          out.x_lags.push_back(power.normalized[start + i]);
        for (std::size_t h = 0; h < static_cast<std::size_t>(options.horizon); ++h) {
          const std::int64_t ts = power.timestamps[target0 + h];
          auto git = gfs_at.find(ts);
          auto ait = arp_at.find(ts);
          if (git == gfs_at.end() || ait == arp_at.end())
            throw std::invalid_argument("window_samples: exogenous grids missing target hour " +
                                        timeutil::format_iso8601(ts));
          out.x_gfs.insert(out.x_gfs.end(), gfs.speed.begin() + static_cast<std::int64_t>(git->second) * gfs_frame,
                           gfs.speed.begin() + static_cast<std::int64_t>(git->second + 1) * gfs_frame);
          out.x_arp.insert(out.x_arp.end(), arp.speed.begin() + static_cast<std::int64_t>(ait->second) * arp_frame,
                           arp.speed.begin() + static_cast<std::int64_t>(ait->second + 1) * arp_frame);
          const auto tf = cyclic_time_features(ts, options.month_period);
          out.x_time.insert(out.x_time.end(), tf.begin(), tf.end());
          out.y.push_back(power.normalized[target0 + h]);
        }
        for (int f = 0; f < options.farm_count; ++f)
          out.x_farm.push_back(f == power.farm_id ? 1.0 : 0.0);
        out.sample_timestamps.push_back(power.timestamps[target0]);
        out.farm_ids.push_back(power.farm_id);
        ++out.count;
      }
    }
    seg_begin = seg_end;
  }
  if (out.count == 0)
    throw std::invalid_argument("window_samples: no contiguous segment long enough for a sample");
  out.validate();
  return out;
}

WindowedDataset concat_farms_global(const std::vector<WindowedDataset>& datasets) {
  if (datasets.empty()) throw std::invalid_argument("concat_farms_global: no datasets");
  WindowedDataset out = datasets.front();
  for (std::size_t k = 1; k < datasets.size(); ++k) {
    const WindowedDataset& d = datasets[k];
    if (!out.layout_matches(d))
      throw std::invalid_argument("concat_farms_global: dataset " + std::to_string(k) +
                                  " has a different layout");
    out.count += d.count;
    out.x_lags.insert(out.x_lags.end(), d.x_lags.begin(), d.x_lags.end());
    out.x_gfs.insert(out.x_gfs.end(), d.x_gfs.begin(), d.x_gfs.end());
    out.x_arp.insert(out.x_arp.end(), d.x_arp.begin(), d.x_arp.end());
    out.x_time.insert(out.x_time.end(), d.x_time.begin(), d.x_time.end());
    out.x_farm.insert(out.x_farm.end(), d.x_farm.begin(), d.x_farm.end());
    out.y.insert(out.y.end(), d.y.begin(), d.y.end());
    out.sample_timestamps.insert(out.sample_timestamps.end(), d.sample_timestamps.begin(),
                                 d.sample_timestamps.end());
    out.farm_ids.insert(out.farm_ids.end(), d.farm_ids.begin(), d.farm_ids.end());
  }
  out.validate();
  return out;
}

WindowedDataset filter_by_farm(const WindowedDataset& dataset, int farm_id) {
  std::vector<std::int64_t> indices;
  for (std::int64_t i = 0; i < dataset.count; ++i)
    if (dataset.farm_ids[static_cast<std::size_t>(i)] == farm_id) indices.push_back(i);
  return dataset.select(indices);
}

std::int64_t test_region_start_for(std::int64_t last_hour, int test_days) {
  return last_hour + timeutil::kHour - static_cast<std::int64_t>(test_days) * 24 * timeutil::kHour;
}

WindowedDataset SplitResult::merged() const {
  if (val.count == 0) return train;
  return concat_farms_global({train, val});
}

SplitResult split_train_val_test(const WindowedDataset& dataset, const SplitSpec& spec) {
  dataset.validate();
  if (spec.test_days < 1) throw std::invalid_argument("split: test_days must be positive");
  if (spec.val_fraction < 0.0 || spec.val_fraction >= 1.0)
    throw std::invalid_argument("split: val_fraction must lie in [0,1)");
  if (dataset.count < spec.test_days)
    throw std::invalid_argument("split: only " + std::to_string(dataset.count) + " samples for " +
                                std::to_string(spec.test_days) + " test blocks");
  for (std::size_t i = 1; i < dataset.sample_timestamps.size(); ++i)
    if (dataset.sample_timestamps[i] <= dataset.sample_timestamps[i - 1])
      throw std::invalid_argument("split: sample timestamps must be strictly increasing (single farm)");

  const std::int64_t block = dataset.horizon * timeutil::kHour;
  const std::int64_t last_target_end = dataset.sample_timestamps.back() + block;
  const std::int64_t test_start = last_target_end - static_cast<std::int64_t>(spec.test_days) * block;

  std::unordered_map<std::int64_t, std::int64_t> sample_at;
  sample_at.reserve(dataset.sample_timestamps.size());
  for (std::int64_t i = 0; i < dataset.count; ++i) sample_at[dataset.sample_timestamps[static_cast<std::size_t>(i)]] = i;

  std::vector<std::int64_t> test_idx;
  test_idx.reserve(static_cast<std::size_t>(spec.test_days));
  for (int b = 0; b < spec.test_days; ++b) {
    const std::int64_t ts = test_start + b * block;
    auto it = sample_at.find(ts);
    if (it == sample_at.end())
      throw std::invalid_argument("split: no sample starts at test block hour " +
                                  timeutil::format_iso8601(ts) + " (stride incompatible?)");
    test_idx.push_back(it->second);
  }

  std::vector<std::int64_t> pre_test;
  for (std::int64_t i = 0; i < dataset.count; ++i)
    if (dataset.sample_timestamps[static_cast<std::size_t>(i)] + block <= test_start) pre_test.push_back(i);
  if (pre_test.empty()) throw std::invalid_argument("split: no training samples before the test region");

  const auto val_count = static_cast<std::size_t>(
      std::llround(spec.val_fraction * static_cast<double>(pre_test.size())));
  const std::size_t train_count = pre_test.size() - val_count;

  SplitResult out;
  out.test_region_start = test_start;
  out.train = dataset.select(std::span<const std::int64_t>(pre_test.data(), train_count));
  out.val = dataset.select(std::span<const std::int64_t>(pre_test.data() + train_count, val_count));
  out.test = dataset.select(test_idx);
  return out;
}

std::vector<std::uint8_t> ramp_labels(std::span<const double> normalized, double threshold,
                                      std::int64_t window) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw std::invalid_argument("ramp_labels: threshold must lie in (0,1)");
  if (window < 1 || window >= static_cast<std::int64_t>(normalized.size()))
    throw std::invalid_argument("ramp_labels: window must lie in [1, series length)");
  std::vector<std::uint8_t> out(normalized.size(), 0);
  for (std::size_t t = static_cast<std::size_t>(window); t < normalized.size(); ++t)
    out[t] = std::abs(normalized[t] - normalized[t - static_cast<std::size_t>(window)]) >= threshold ? 1 : 0;
  return out;
}

std::pair<double, double> class_weights(std::span<const std::uint8_t> labels) {
  std::int64_t pos = 0;
  for (std::uint8_t l : labels) pos += l ? 1 : 0;
  const std::int64_t neg = static_cast<std::int64_t>(labels.size()) - pos;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("class_weights: a class has zero instances (pos=" + std::to_string(pos) +
                                ", neg=" + std::to_string(neg) + ")");
  const double total = static_cast<double>(labels.size());
  return {total / (2.0 * static_cast<double>(pos)), total / (2.0 * static_cast<double>(neg))};
}

Matrix tabular_features(const WindowedDataset& dataset, bool include_lags) {
  dataset.validate();
  const std::int64_t gfs_frame = dataset.gfs_frame();
  const std::int64_t arp_frame = dataset.arp_frame();
  const std::int64_t cols =
      gfs_frame + arp_frame + 4 + dataset.farm_count + (include_lags ? dataset.lookback : 0);
  Matrix out;
  out.rows = dataset.count * dataset.horizon;
  out.cols = cols;
  out.data.reserve(static_cast<std::size_t>(out.rows * out.cols));
  for (std::int64_t i = 0; i < dataset.count; ++i) {
    for (std::int64_t h = 0; h < dataset.horizon; ++h) {
      const auto gfs0 = (i * dataset.horizon + h) * gfs_frame;
      out.data.insert(out.data.end(), dataset.x_gfs.begin() + gfs0, dataset.x_gfs.begin() + gfs0 + gfs_frame);
      const auto arp0 = (i * dataset.horizon + h) * arp_frame;
      out.data.insert(out.data.end(), dataset.x_arp.begin() + arp0, dataset.x_arp.begin() + arp0 + arp_frame);
      const auto t0 = (i * dataset.horizon + h) * 4;
      out.data.insert(out.data.end(), dataset.x_time.begin() + t0, dataset.x_time.begin() + t0 + 4);
      const auto f0 = i * dataset.farm_count;
      out.data.insert(out.data.end(), dataset.x_farm.begin() + f0, dataset.x_farm.begin() + f0 + dataset.farm_count);
      if (include_lags) {
        const auto l0 = i * dataset.lookback;
        out.data.insert(out.data.end(), dataset.x_lags.begin() + l0, dataset.x_lags.begin() + l0 + dataset.lookback);
      }
    }
  }
  return out;
}

std::vector<double> tabular_targets(const WindowedDataset& dataset) { return dataset.y; }

std::string tabular_column_name(const WindowedDataset& dataset, std::int64_t column, bool include_lags) {
  const std::int64_t gfs_frame = dataset.gfs_frame();
  const std::int64_t arp_frame = dataset.arp_frame();
  std::int64_t c = column;
  if (c < gfs_frame) {
    const std::int64_t lat = c / (dataset.gfs_lon * dataset.gfs_levels);
    const std::int64_t lon = (c / dataset.gfs_levels) % dataset.gfs_lon;
    const std::int64_t lev = c % dataset.gfs_levels;
    return "gfs[lat=" + std::to_string(lat) + ",lon=" + std::to_string(lon) + ",ch=" + std::to_string(lev) + "]";
  }
  c -= gfs_frame;
  if (c < arp_frame) {
    const std::int64_t lat = c / (dataset.arp_lon * dataset.arp_levels);
    const std::int64_t lon = (c / dataset.arp_levels) % dataset.arp_lon;
    const std::int64_t lev = c % dataset.arp_levels;
    return "arpege[lat=" + std::to_string(lat) + ",lon=" + std::to_string(lon) + ",ch=" + std::to_string(lev) + "]";
  }
  c -= arp_frame;
  if (c < 4) {
    static const char* names[4] = {"time.moy_sin", "time.moy_cos", "time.hod_sin", "time.hod_cos"};
    return names[c];
  }
  c -= 4;
  if (c < dataset.farm_count) return "farm[" + std::to_string(c) + "]";
  c -= dataset.farm_count;
  if (include_lags && c < dataset.lookback) return "lag[" + std::to_string(c) + "]";
  throw std::invalid_argument("tabular_column_name: column " + std::to_string(column) + " out of range");
}

std::vector<std::int64_t> step_row_indices(std::int64_t sample_count, std::int64_t horizon,
                                           std::int64_t step) {
  if (step < 0 || step >= horizon)
    throw std::invalid_argument("step_row_indices: step outside horizon");
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(sample_count));
  for (std::int64_t i = 0; i < sample_count; ++i) out.push_back(i * horizon + step);
  return out;
}

}  // namespace gustcast::data
