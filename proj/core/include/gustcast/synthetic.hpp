#pragma once

#include <cstdint>

#include "gustcast/nwp.hpp"

namespace gustcast::data {

// Knobs for the bundled synthetic multi-farm dataset. The defaults aim for
// the qualitative shape of real hourly wind power: production concentrated at
// low output (median below mean), a nocturnal peak, a winter peak, and farms
// correlated through a shared weather component.
struct SyntheticConfig {
  int days = 365;
  std::int64_t start_timestamp = 1577836800;  // 2020-01-01T00:00:00Z

  double base_speed = 6.3;         // regional mean, m/s
  double diurnal_amplitude = 1.1;  // peaks shortly after midnight
  double seasonal_amplitude = 1.5; // peaks mid-January
  double weather_amplitude = 2.6;  // shared smooth weather systems
  double weather_persistence = 0.985;
  double farm_bias_scale = 0.7;    // per-farm constant offset
  double local_noise = 0.8;        // farm-local AR(1) speed noise
  double level_noise = 0.25;       // per-level observation noise in the cubes
  double power_noise = 0.02;       // multiplicative measurement noise

  double cut_in_speed = 3.0;       // m/s
  double rated_speed = 11.0;       // m/s
  double base_capacity = 80.0;     // raw power units; farms differ in scale

  // 1e-3 m/s grid quantization keeps the emitted CSVs compact.
  bool quantize_grid = true;

  SyntheticConfig with_zero_noise() const {
    SyntheticConfig c = *this;
    c.local_noise = 0.0;
    c.level_noise = 0.0;
    c.power_noise = 0.0;
    c.quantize_grid = false;
    return c;
  }
};

struct SyntheticFarm {
  PowerSeries power;  // hourly, raw units (normalized not yet filled)
  NwpCube gfs;        // 3-hourly, 24 raw levels, 4x4 grid
  NwpCube arpege;     // hourly, 27 raw levels, 5x5 grid
};

// Deterministic per (seed, farm_id, config). The same seed reproduces the
// shared weather component across farms, which is what correlates them.
SyntheticFarm generate_synthetic_farm(std::uint64_t seed, int farm_id, const SyntheticConfig& config);

// Saturating cubic turbine curve in [0,1]: zero below cut-in, cubic ramp,
// flat at rated speed and above.
double power_curve(double speed, double cut_in, double rated);

}  // namespace gustcast::data
