#include "gustcast/dataio.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "gustcast/timeutil.hpp"

namespace gustcast::data {

using nlohmann::json;

std::string format_double(double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, ptr);
}

namespace {

double parse_double(std::string_view text, const std::string& context) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw std::invalid_argument(context + ": bad number '" + std::string(text) + "'");
  return value;
}

long parse_long(std::string_view text, const std::string& context) {
  long value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw std::invalid_argument(context + ": bad integer '" + std::string(text) + "'");
  return value;
}

std::vector<std::string_view> split_csv_line(std::string_view line, std::size_t expect,
                                             const std::string& context) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  if (fields.size() != expect)
    throw std::invalid_argument(context + ": expected " + std::to_string(expect) + " fields, got " +
                                std::to_string(fields.size()));
  return fields;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return is;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return os;
}

json source_spec_to_json(const NwpSourceSpec& spec) {
  return json{{"name", source_name(spec.source)},
              {"cadence_hours", spec.cadence_hours},
              {"lat_count", spec.lat_count},
              {"lon_count", spec.lon_count},
              {"raw_level_count", spec.raw_level_count},
              {"selected_level_count", spec.selected_level_count}};
}

NwpSourceSpec source_spec_from_json(const json& j) {
  NwpSourceSpec spec;
  spec.source = source_from_name(j.at("name").get<std::string>());
  spec.cadence_hours = j.at("cadence_hours").get<int>();
  spec.lat_count = j.at("lat_count").get<int>();
  spec.lon_count = j.at("lon_count").get<int>();
  spec.raw_level_count = j.at("raw_level_count").get<int>();
  spec.selected_level_count = j.at("selected_level_count").get<int>();
  spec.validate();
  return spec;
}

json fitted_source_to_json(const FittedSourceStats& s) {
  json anchors = json::array();
  for (const MinMax& a : s.anchors) anchors.push_back(json{{"min", a.x_min}, {"max", a.x_max}});
  return json{{"levels", s.levels}, {"anchors", anchors}};
}

FittedSourceStats fitted_source_from_json(const json& j) {
  FittedSourceStats s;
  s.levels = j.at("levels").get<std::vector<int>>();
  for (const auto& a : j.at("anchors"))
    s.anchors.push_back(MinMax{a.at("min").get<double>(), a.at("max").get<double>()});
  return s;
}

}  // namespace

void write_power_csv(const std::filesystem::path& path, const PowerSeries& series) {
  auto os = open_output(path);
  os << "timestamp,power\n";
  for (std::size_t i = 0; i < series.timestamps.size(); ++i)
    os << timeutil::format_iso8601(series.timestamps[i]) << ',' << format_double(series.power[i])
       << '\n';
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

PowerSeries read_power_csv(const std::filesystem::path& path, int farm_id) {
  auto is = open_input(path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("timestamp,power", 0) != 0)
    throw std::invalid_argument(path.string() + ": missing 'timestamp,power' header");
  PowerSeries series;
  series.farm_id = farm_id;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line, 2, path.string());
    series.timestamps.push_back(timeutil::parse_iso8601(std::string(fields[0])));
    series.power.push_back(parse_double(fields[1], path.string()));
  }
  if (series.timestamps.empty()) throw std::invalid_argument(path.string() + ": no rows");
  for (std::size_t i = 1; i < series.timestamps.size(); ++i)
    if (series.timestamps[i] <= series.timestamps[i - 1])
      throw std::invalid_argument(path.string() + ": timestamps must be strictly increasing");
  return series;
}

void write_nwp_csv(const std::filesystem::path& path, const NwpCube& cube) {
  cube.validate();
  auto os = open_output(path);
  os << "timestamp,level,lat_idx,lon_idx,u,v\n";
  std::string ts_text;
  for (std::size_t t = 0; t < cube.timestamps.size(); ++t) {
    ts_text = timeutil::format_iso8601(cube.timestamps[t]);
    for (int lv = 0; lv < cube.levels; ++lv)
      for (int la = 0; la < cube.spec.lat_count; ++la)
        for (int lo = 0; lo < cube.spec.lon_count; ++lo) {
          const std::size_t i = cube.index(static_cast<std::int64_t>(t), la, lo, lv);
          os << ts_text << ',' << lv << ',' << la << ',' << lo << ',' << format_double(cube.u[i])
             << ',' << format_double(cube.v[i]) << '\n';
        }
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

NwpCube read_nwp_csv(const std::filesystem::path& path, const NwpSourceSpec& spec) {
  auto is = open_input(path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("timestamp,level,lat_idx,lon_idx,u,v", 0) != 0)
    throw std::invalid_argument(path.string() + ": missing NWP long-form header");

  NwpCube cube;
  cube.spec = spec;
  cube.levels = spec.raw_level_count;
  const std::int64_t cells = cube.cell_count();

  std::int64_t current_ts = std::numeric_limits<std::int64_t>::min();
  std::string last_ts_text;
  std::int64_t row_in_frame = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line, 6, path.string());
    if (fields[0] != last_ts_text) {
      if (!cube.timestamps.empty() && row_in_frame != cells)
        throw std::invalid_argument(path.string() + ": incomplete frame before " + std::string(fields[0]));
      last_ts_text = std::string(fields[0]);
      current_ts = timeutil::parse_iso8601(last_ts_text);
      if (!cube.timestamps.empty() && current_ts <= cube.timestamps.back())
        throw std::invalid_argument(path.string() + ": timestamps must be grouped and ascending");
      cube.timestamps.push_back(current_ts);
      cube.u.resize(cube.timestamps.size() * static_cast<std::size_t>(cells));
      cube.v.resize(cube.u.size());
      row_in_frame = 0;
    }
    const long lv = parse_long(fields[1], path.string());
    const long la = parse_long(fields[2], path.string());
    const long lo = parse_long(fields[3], path.string());
    if (lv < 0 || lv >= spec.raw_level_count || la < 0 || la >= spec.lat_count || lo < 0 ||
        lo >= spec.lon_count)
      throw std::invalid_argument(path.string() + ": index out of range in row '" + line + "'");
    const std::size_t i =
        cube.index(static_cast<std::int64_t>(cube.timestamps.size()) - 1, static_cast<int>(la),
                   static_cast<int>(lo), static_cast<int>(lv));
    cube.u[i] = parse_double(fields[4], path.string());
    cube.v[i] = parse_double(fields[5], path.string());
    ++row_in_frame;
  }
  if (cube.timestamps.empty()) throw std::invalid_argument(path.string() + ": no rows");
  if (row_in_frame != cells)
    throw std::invalid_argument(path.string() + ": incomplete final frame");
  cube.validate();
  return cube;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  json j;
  j["version"] = 1;
  j["seed"] = manifest.seed;
  j["days"] = manifest.days;
  json farms = json::array();
  for (const auto& f : manifest.farms) {
    json jf{{"id", f.id},
            {"power_csv", f.power_csv},
            {"gfs_csv", f.gfs_csv},
            {"arpege_csv", f.arpege_csv},
            {"gfs_spec", source_spec_to_json(f.gfs_spec)},
            {"arpege_spec", source_spec_to_json(f.arpege_spec)}};
    if (f.fitted) {
      jf["fitted"] = json{{"train_end", timeutil::format_iso8601(f.fitted->train_end)},
                          {"power_min", f.fitted->power_min},
                          {"power_max", f.fitted->power_max},
                          {"gfs", fitted_source_to_json(f.fitted->gfs)},
                          {"arpege", fitted_source_to_json(f.fitted->arpege)}};
    }
    farms.push_back(std::move(jf));
  }
  j["farms"] = std::move(farms);
  auto os = open_output(path);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  auto is = open_input(path);
  json j = json::parse(is);
  if (j.at("version").get<int>() != 1)
    throw std::invalid_argument(path.string() + ": unsupported manifest version");
  DatasetManifest manifest;
  manifest.seed = j.at("seed").get<std::uint64_t>();
  manifest.days = j.value("days", 0);
  for (const auto& jf : j.at("farms")) {
    FarmManifestEntry f;
    f.id = jf.at("id").get<int>();
    f.power_csv = jf.at("power_csv").get<std::string>();
    f.gfs_csv = jf.at("gfs_csv").get<std::string>();
    f.arpege_csv = jf.at("arpege_csv").get<std::string>();
    f.gfs_spec = source_spec_from_json(jf.at("gfs_spec"));
    f.arpege_spec = source_spec_from_json(jf.at("arpege_spec"));
    if (jf.contains("fitted")) {
      const auto& ft = jf.at("fitted");
      FittedFarmStats stats;
      stats.train_end = timeutil::parse_iso8601(ft.at("train_end").get<std::string>());
      stats.power_min = ft.at("power_min").get<double>();
      stats.power_max = ft.at("power_max").get<double>();
      stats.gfs = fitted_source_from_json(ft.at("gfs"));
      stats.arpege = fitted_source_from_json(ft.at("arpege"));
      f.fitted = std::move(stats);
    }
    manifest.farms.push_back(std::move(f));
  }
  return manifest;
}

}  // namespace gustcast::data
