#include "gustcast/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "gustcast/timeutil.hpp"

namespace gustcast::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 step keeps farm/source streams decorrelated
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<double> ar1_series(std::size_t n, double rho, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> out(n, 0.0);
  if (n == 0 || sigma == 0.0) return out;
  const double innovation = sigma * std::sqrt(std::max(1e-12, 1.0 - rho * rho));
  out[0] = sigma * gauss(rng);
  for (std::size_t t = 1; t < n; ++t) out[t] = rho * out[t - 1] + innovation * gauss(rng);
  return out;
}

// Slowly-rotating wind direction; only the magnitude carries signal.
double wind_direction(std::int64_t hour_index, int farm_id) {
  return kTwoPi * (0.13 * std::sin(kTwoPi * static_cast<double>(hour_index) / 311.0) +
                   0.07 * std::sin(kTwoPi * static_cast<double>(hour_index) / 53.0) +
                   0.05 * farm_id);
}

struct GridProfile {
  std::vector<double> cell_factor;   // [lat*lon], smooth spatial modulation
  std::vector<double> level_shear;   // [levels], monotone in level index
};

GridProfile make_profile(int lat_count, int lon_count, int levels, std::mt19937_64& rng) {
  GridProfile p;
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  const double ph = phase(rng);
  p.cell_factor.resize(static_cast<std::size_t>(lat_count) * lon_count);
  for (int la = 0; la < lat_count; ++la)
    for (int lo = 0; lo < lon_count; ++lo) {
      const double s = 0.045 * std::sin(kTwoPi * (la * 0.31 + lo * 0.17) + ph) +
                       0.03 * std::cos(kTwoPi * (la * 0.11 - lo * 0.23) + 0.5 * ph);
      p.cell_factor[static_cast<std::size_t>(la) * lon_count + lo] = 1.0 + s;
    }
  p.level_shear.resize(static_cast<std::size_t>(levels));
  for (int lv = 0; lv < levels; ++lv)
    p.level_shear[static_cast<std::size_t>(lv)] =
        0.7 + 0.6 * static_cast<double>(lv) / static_cast<double>(levels - 1);
  return p;
}

NwpCube build_cube(const NwpSourceSpec& spec, const std::vector<std::int64_t>& timestamps,
                   const std::vector<double>& truth_speed, std::int64_t start_ts, int farm_id,
                   double level_noise, bool quantize, std::mt19937_64& rng) {
  NwpCube cube;
  cube.spec = spec;
  cube.levels = spec.raw_level_count;
  cube.timestamps = timestamps;
  const std::int64_t cells = cube.cell_count();
  cube.u.resize(timestamps.size() * static_cast<std::size_t>(cells));
  cube.v.resize(cube.u.size());

  GridProfile profile = make_profile(spec.lat_count, spec.lon_count, spec.raw_level_count, rng);
  std::vector<std::vector<double>> level_wobble(static_cast<std::size_t>(spec.raw_level_count));
  for (auto& w : level_wobble) w = ar1_series(timestamps.size(), 0.9, level_noise, rng);

  for (std::size_t t = 0; t < timestamps.size(); ++t) {
    const std::int64_t hour_index = (timestamps[t] - start_ts) / timeutil::kHour;
    const double theta = wind_direction(hour_index, farm_id);
    const double base = truth_speed[static_cast<std::size_t>(hour_index)];
    std::size_t i = t * static_cast<std::size_t>(cells);
    for (int la = 0; la < spec.lat_count; ++la)
      for (int lo = 0; lo < spec.lon_count; ++lo) {
        const double cell = profile.cell_factor[static_cast<std::size_t>(la) * spec.lon_count + lo];
        for (int lv = 0; lv < spec.raw_level_count; ++lv, ++i) {
          const double speed = std::max(
              0.0, base * profile.level_shear[static_cast<std::size_t>(lv)] * cell +
                       level_wobble[static_cast<std::size_t>(lv)][t]);
          cube.u[i] = speed * std::cos(theta);
          cube.v[i] = speed * std::sin(theta);
          if (quantize) {
            // 1e-3 m/s grid: NWP-realistic and keeps the emitted CSVs compact
            cube.u[i] = std::round(cube.u[i] * 1000.0) / 1000.0;
            cube.v[i] = std::round(cube.v[i] * 1000.0) / 1000.0;
          }
        }
      }
  }
  return cube;
}

}  // namespace

double power_curve(double speed, double cut_in, double rated) {
  if (speed <= cut_in) return 0.0;
  if (speed >= rated) return 1.0;
  const double x = (speed - cut_in) / (rated - cut_in);
  return x * x * x;
}

SyntheticFarm generate_synthetic_farm(std::uint64_t seed, int farm_id, const SyntheticConfig& config) {
  if (config.days < 10) throw std::invalid_argument("synthetic: need at least 10 days");
  if (farm_id < 0) throw std::invalid_argument("synthetic: farm_id must be nonnegative");
  const std::size_t hours = static_cast<std::size_t>(config.days) * 24;

  // Shared weather stream depends on the master seed only, so that all farms
  // generated from one seed ride the same weather systems.
  std::mt19937_64 shared_rng(mix_seed(seed, 0));
  const std::vector<double> weather =
      ar1_series(hours, config.weather_persistence, config.weather_amplitude, shared_rng);

  std::mt19937_64 farm_rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(farm_id)));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double farm_bias = config.farm_bias_scale * unit(farm_rng);
  const std::vector<double> local = ar1_series(hours, 0.93, config.local_noise, farm_rng);

  std::vector<std::int64_t> hourly_ts(hours);
  std::vector<double> truth(hours);
  for (std::size_t t = 0; t < hours; ++t) {
    const std::int64_t ts = config.start_timestamp + static_cast<std::int64_t>(t) * timeutil::kHour;
    hourly_ts[t] = ts;
    const int hod = timeutil::hour_of_day(ts);
    const double day_of_year =
        static_cast<double>((ts - config.start_timestamp) / timeutil::kHour) / 24.0;
    const double diurnal = config.diurnal_amplitude * std::cos(kTwoPi * (hod - 2) / 24.0);
    const double seasonal = config.seasonal_amplitude * std::cos(kTwoPi * (day_of_year - 14.0) / 365.25);
    truth[t] = std::max(0.0, config.base_speed + diurnal + seasonal + weather[t] + farm_bias + local[t]);
  }

  SyntheticFarm farm;
  farm.power.farm_id = farm_id;
  farm.power.timestamps = hourly_ts;
  farm.power.power.resize(hours);
  const double capacity = config.base_capacity * (1.0 + 0.12 * farm_id);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t t = 0; t < hours; ++t) {
    double p = capacity * power_curve(truth[t], config.cut_in_speed, config.rated_speed);
    if (config.power_noise > 0.0) {
      p *= 1.0 + config.power_noise * gauss(farm_rng);
      p += 0.2 * config.power_noise * capacity * std::abs(gauss(farm_rng));
    }
    farm.power.power[t] = std::max(0.0, p);
  }

  // ARPEGE is hourly; GFS reports every third hour.
  std::vector<std::int64_t> gfs_ts;
  gfs_ts.reserve(hours / 3 + 1);
  for (std::size_t t = 0; t < hours; t += 3) gfs_ts.push_back(hourly_ts[t]);

  std::mt19937_64 gfs_rng(mix_seed(seed, 2000 + static_cast<std::uint64_t>(farm_id)));
  std::mt19937_64 arp_rng(mix_seed(seed, 3000 + static_cast<std::uint64_t>(farm_id)));
  farm.gfs = build_cube(NwpSourceSpec::gfs(), gfs_ts, truth, config.start_timestamp, farm_id,
                        config.level_noise, config.quantize_grid, gfs_rng);
  farm.arpege = build_cube(NwpSourceSpec::arpege(), hourly_ts, truth, config.start_timestamp,
                           farm_id, config.level_noise, config.quantize_grid, arp_rng);
  return farm;
}

}  // namespace gustcast::data
