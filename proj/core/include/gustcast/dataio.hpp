#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gustcast/nwp.hpp"

namespace gustcast::data {

// Shortest round-trip decimal rendering (used by every CSV writer so reruns
// are byte-identical).
std::string format_double(double value);

// Power CSV: header "timestamp,power", ISO-8601 UTC, one row per hour.
void write_power_csv(const std::filesystem::path& path, const PowerSeries& series);
PowerSeries read_power_csv(const std::filesystem::path& path, int farm_id);

// NWP CSV (long form): header "timestamp,level,lat_idx,lon_idx,u,v"; one file
// per (farm, source); cadence per source.
void write_nwp_csv(const std::filesystem::path& path, const NwpCube& cube);
NwpCube read_nwp_csv(const std::filesystem::path& path, const NwpSourceSpec& spec);

// Statistics fitted on the training range, persisted by `prepare`.
struct FittedSourceStats {
  std::vector<int> levels;      // selected raw-level indices, rank order
  std::vector<MinMax> anchors;  // per selected channel
};

struct FittedFarmStats {
  std::int64_t train_end = 0;  // first test target hour; statistics use t < train_end
  double power_min = 0.0;
  double power_max = 0.0;
  FittedSourceStats gfs;
  FittedSourceStats arpege;
};

struct FarmManifestEntry {
  int id = 0;
  std::string power_csv;
  std::string gfs_csv;
  std::string arpege_csv;
  NwpSourceSpec gfs_spec = NwpSourceSpec::gfs();
  NwpSourceSpec arpege_spec = NwpSourceSpec::arpege();
  std::optional<FittedFarmStats> fitted;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  int days = 0;
  std::vector<FarmManifestEntry> farms;
};

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace gustcast::data
