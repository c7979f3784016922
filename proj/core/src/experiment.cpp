#include "gustcast/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstring>
#include <limits>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>
#include <numeric>
#include <semaphore>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "gustcast/timeutil.hpp"

namespace gustcast::cli {

using nlohmann::json;

std::string mode_name(Mode mode) { return mode == Mode::kIndividual ? "individual" : "global"; }

Mode mode_from_name(const std::string& name) {
  if (name == "individual") return Mode::kIndividual;
  if (name == "global") return Mode::kGlobal;
  throw std::invalid_argument("unknown mode '" + name + "' (individual|global)");
}

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLr: return "lr";
    case ModelKind::kEt: return "et";
    case ModelKind::kGbm: return "gbm";
    case ModelKind::kCnn: return "cnn";
    case ModelKind::kCnnRnn: return "cnn-rnn";
    case ModelKind::kConv2dGbm: return "conv2d-gbm";
  }
  throw std::invalid_argument("model_kind_name: bad enum");
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "lr") return ModelKind::kLr;
  if (name == "et") return ModelKind::kEt;
  if (name == "gbm") return ModelKind::kGbm;
  if (name == "cnn") return ModelKind::kCnn;
  if (name == "cnn-rnn") return ModelKind::kCnnRnn;
  if (name == "conv2d-gbm") return ModelKind::kConv2dGbm;
  throw std::invalid_argument("unknown model '" + name + "' (lr|et|gbm|cnn|cnn-rnn|conv2d-gbm)");
}

void ExperimentConfig::validate() const {
  if (farms.empty()) throw std::invalid_argument("config: farm list is empty");
  if (mode == Mode::kGlobal && farms.size() < 2)
    throw std::invalid_argument("config: global mode requires at least 2 farms");
  if (model == ModelKind::kConv2dGbm && cnn_checkpoint.empty())
    throw std::invalid_argument("config: conv2d-gbm requires a trained global CNN checkpoint "
                                "(cnn_checkpoint)");
  if (data_dir.empty()) throw std::invalid_argument("config: data_dir is required");
  if (stride < 1) throw std::invalid_argument("config: stride must be >= 1");
  if (test_days < 1) throw std::invalid_argument("config: test_days must be >= 1");
  if (conv_filters.size() != 2 || conv_kernels.size() != 2)
    throw std::invalid_argument("config: exactly two conv layers are expected");
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["farms"] = c.farms;
  j["mode"] = mode_name(c.mode);
  j["model"] = model_kind_name(c.model);
  j["include_lags"] = c.include_lags;
  j["seed"] = c.seed;
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["run_name"] = c.run_name;
  j["stride"] = c.stride;
  j["test_days"] = c.test_days;
  j["val_fraction"] = c.val_fraction;
  j["month_period"] = c.month_period;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["dropout_rate"] = c.dropout_rate;
  j["conv_filters"] = c.conv_filters;
  j["conv_kernels"] = c.conv_kernels;
  j["encoder_units"] = c.encoder_units;
  j["dense_units"] = c.dense_units;
  j["lookback"] = c.lookback;
  j["cnn_checkpoint"] = c.cnn_checkpoint;
  j["gbm"] = {{"n_estimators", c.gbm.n_estimators},
              {"num_leaves", c.gbm.num_leaves},
              {"learning_rate", c.gbm.learning_rate},
              {"min_child_samples", c.gbm.min_child_samples}};
  j["et"] = {{"n_trees", c.et.n_trees}, {"min_samples_split", c.et.min_samples_split}};
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig c;
  if (j.contains("farms")) c.farms = j.at("farms").get<std::vector<int>>();
  if (j.contains("mode")) c.mode = mode_from_name(j.at("mode").get<std::string>());
  if (j.contains("model")) c.model = model_kind_from_name(j.at("model").get<std::string>());
  c.include_lags = j.value("include_lags", c.include_lags);
  c.seed = j.value("seed", c.seed);
  c.data_dir = j.value("data_dir", c.data_dir);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.run_name = j.value("run_name", c.run_name);
  c.stride = j.value("stride", c.stride);
  c.test_days = j.value("test_days", c.test_days);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.month_period = j.value("month_period", c.month_period);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  if (j.contains("conv_filters")) c.conv_filters = j.at("conv_filters").get<std::vector<std::int64_t>>();
  if (j.contains("conv_kernels")) c.conv_kernels = j.at("conv_kernels").get<std::vector<std::int64_t>>();
  if (j.contains("encoder_units")) c.encoder_units = j.at("encoder_units").get<std::vector<std::int64_t>>();
  if (j.contains("dense_units")) c.dense_units = j.at("dense_units").get<std::vector<std::int64_t>>();
  c.lookback = j.value("lookback", c.lookback);
  c.cnn_checkpoint = j.value("cnn_checkpoint", c.cnn_checkpoint);
  if (j.contains("gbm")) {
    const auto& g = j.at("gbm");
    c.gbm.n_estimators = g.value("n_estimators", c.gbm.n_estimators);
    c.gbm.num_leaves = g.value("num_leaves", c.gbm.num_leaves);
    c.gbm.learning_rate = g.value("learning_rate", c.gbm.learning_rate);
    c.gbm.min_child_samples = g.value("min_child_samples", c.gbm.min_child_samples);
  }
  if (j.contains("et")) {
    const auto& e = j.at("et");
    c.et.n_trees = e.value("n_trees", c.et.n_trees);
    c.et.min_samples_split = e.value("min_samples_split", c.et.min_samples_split);
  }
  return c;
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return config_from_json(text);
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = config_to_json(config);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 12);
}

int worker_thread_cap() {
  if (const char* env = std::getenv("GUSTCAST_THREADS")) {
    int value = 0;
    const auto [ptr, ec] = std::from_chars(env, env + std::strlen(env), value);
    if (ec == std::errc{} && ptr == env + std::strlen(env) && value >= 1) return value;
    throw std::invalid_argument("GUSTCAST_THREADS must be a positive integer, got '" + std::string(env) + "'");
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// ---------------------------------------------------------------------------
// Pipeline assembly

PreparedFarm prepare_farm(const data::DatasetManifest& manifest, std::size_t farm_index,
                          const std::filesystem::path& data_dir, const ExperimentConfig& config) {
  const data::FarmManifestEntry& entry = manifest.farms.at(farm_index);

  PreparedFarm out;
  out.farm_id = entry.id;
  out.power = data::read_power_csv(data_dir / entry.power_csv, entry.id);
  data::fill_small_gaps(out.power);

  out.train_end = data::test_region_start_for(out.power.timestamps.back(), config.test_days);
  data::normalize_power(out.power, out.train_end);

  data::NwpCube gfs_raw = data::read_nwp_csv(data_dir / entry.gfs_csv, entry.gfs_spec);
  data::NwpCube arp_raw = data::read_nwp_csv(data_dir / entry.arpege_csv, entry.arpege_spec);
  const data::NwpCube gfs_hourly =
      data::interpolate_hourly(gfs_raw, out.power.timestamps.front(), out.power.timestamps.back());
  const data::NwpCube arp_hourly =
      data::interpolate_hourly(arp_raw, out.power.timestamps.front(), out.power.timestamps.back());

  data::SpeedCube gfs_speed, arp_speed;
  const bool have_fitted = entry.fitted.has_value() && entry.fitted->train_end == out.train_end;
  if (have_fitted) {
    gfs_speed = data::build_speed_cube_with_anchors(gfs_hourly, entry.fitted->gfs.levels,
                                                    entry.fitted->gfs.anchors);
    arp_speed = data::build_speed_cube_with_anchors(arp_hourly, entry.fitted->arpege.levels,
                                                    entry.fitted->arpege.anchors);
  } else {
    const std::vector<int> gfs_levels = data::select_levels_by_correlation(
        gfs_hourly, out.power, entry.gfs_spec.selected_level_count, out.train_end);
    const std::vector<int> arp_levels = data::select_levels_by_correlation(
        arp_hourly, out.power, entry.arpege_spec.selected_level_count, out.train_end);
    gfs_speed = data::build_speed_cube(gfs_hourly, gfs_levels, out.train_end);
    arp_speed = data::build_speed_cube(arp_hourly, arp_levels, out.train_end);
  }

  out.fitted.train_end = out.train_end;
  out.fitted.power_min = out.power.x_min;
  out.fitted.power_max = out.power.x_max;
  out.fitted.gfs = data::FittedSourceStats{gfs_speed.levels, gfs_speed.anchors};
  out.fitted.arpege = data::FittedSourceStats{arp_speed.levels, arp_speed.anchors};

  data::WindowOptions wopts;
  wopts.lookback = config.lookback;
  wopts.horizon = 24;
  wopts.stride = config.stride;
  wopts.month_period = config.month_period;
  wopts.farm_count = static_cast<int>(manifest.farms.size());
  out.dataset = data::window_samples(out.power, gfs_speed, arp_speed, wopts);
  return out;
}

FarmSplits prepare_and_split(const ExperimentConfig& config) {
  const std::filesystem::path data_dir(config.data_dir);
  const data::DatasetManifest manifest = data::read_manifest(data_dir / "manifest.json");

  FarmSplits out;
  data::SplitSpec split_spec;
  split_spec.test_days = config.test_days;
  split_spec.val_fraction = config.val_fraction;
  for (int farm : config.farms) {
    const auto it =
        std::find_if(manifest.farms.begin(), manifest.farms.end(),
                     [farm](const data::FarmManifestEntry& e) { return e.id == farm; });
    if (it == manifest.farms.end())
      throw std::invalid_argument("farm " + std::to_string(farm) + " not present in manifest");
    const auto index = static_cast<std::size_t>(std::distance(manifest.farms.begin(), it));
    out.farms.push_back(prepare_farm(manifest, index, data_dir, config));
    out.splits.push_back(data::split_train_val_test(out.farms.back().dataset, split_spec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// generate / prepare

std::filesystem::path cmd_generate(const GenerateOptions& options) {
  if (options.farm_count < 1) throw std::invalid_argument("generate: farm_count must be >= 1");
  std::filesystem::create_directories(options.out_dir);

  data::SyntheticConfig synth = options.synthetic;
  synth.days = options.days;

  data::DatasetManifest manifest;
  manifest.seed = options.seed;
  manifest.days = options.days;
  for (int farm = 0; farm < options.farm_count; ++farm) {
    const data::SyntheticFarm generated = data::generate_synthetic_farm(options.seed, farm, synth);
    data::FarmManifestEntry entry;
    entry.id = farm;
    entry.power_csv = "farm" + std::to_string(farm) + "_power.csv";
    entry.gfs_csv = "farm" + std::to_string(farm) + "_gfs.csv";
    entry.arpege_csv = "farm" + std::to_string(farm) + "_arpege.csv";
    data::write_power_csv(options.out_dir / entry.power_csv, generated.power);
    data::write_nwp_csv(options.out_dir / entry.gfs_csv, generated.gfs);
    data::write_nwp_csv(options.out_dir / entry.arpege_csv, generated.arpege);
    manifest.farms.push_back(std::move(entry));
  }
  const std::filesystem::path manifest_path = options.out_dir / "manifest.json";
  data::write_manifest(manifest_path, manifest);
  return manifest_path;
}

void cmd_prepare(const ExperimentConfig& config) {
  const std::filesystem::path data_dir(config.data_dir);
  data::DatasetManifest manifest = data::read_manifest(data_dir / "manifest.json");
  for (std::size_t i = 0; i < manifest.farms.size(); ++i) {
    PreparedFarm prepared = prepare_farm(manifest, i, data_dir, config);
    manifest.farms[i].fitted = prepared.fitted;
  }
  data::write_manifest(data_dir / "manifest.json", manifest);
}

// ---------------------------------------------------------------------------
// cmd_train

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

bool is_tree_kind(ModelKind kind) {
  return kind == ModelKind::kLr || kind == ModelKind::kEt || kind == ModelKind::kGbm;
}

bool is_neural_kind(ModelKind kind) {
  return kind == ModelKind::kCnn || kind == ModelKind::kCnnRnn;
}

trees::BaseLearnerConfig tree_config_for(const ExperimentConfig& config, std::uint64_t seed_stream) {
  trees::BaseLearnerConfig base;
  switch (config.model) {
    case ModelKind::kLr: base.kind = trees::BaseLearner::kLinear; break;
    case ModelKind::kEt: base.kind = trees::BaseLearner::kExtraTrees; break;
    case ModelKind::kGbm:
    case ModelKind::kConv2dGbm: base.kind = trees::BaseLearner::kGbm; break;
    default: throw std::invalid_argument("not a tree model");
  }
  base.gbm = config.gbm;
  base.et = config.et;
  base.et.seed = mix_seed(config.seed, seed_stream);
  return base;
}

models::SpatialCnnConfig spatial_config_for(const ExperimentConfig& config, const FarmSplits& splits) {
  models::SpatialCnnConfig c;
  const data::WindowedDataset& ref = splits.farms.front().dataset;
  c.gfs = {ref.gfs_lat, ref.gfs_lon, ref.gfs_levels};
  c.arp = {ref.arp_lat, ref.arp_lon, ref.arp_levels};
  c.head.conv1_filters = static_cast<int>(config.conv_filters[0]);
  c.head.conv2_filters = static_cast<int>(config.conv_filters[1]);
  c.head.conv1_kernel = static_cast<int>(config.conv_kernels[0]);
  c.head.conv2_kernel = static_cast<int>(config.conv_kernels[1]);
  c.head.dropout_rate = config.dropout_rate;
  c.dense.hidden = config.dense_units;
  c.horizon = 24;
  c.farm_count = ref.farm_count;
  return c;
}

models::CnnRnnConfig cnn_rnn_config_for(const ExperimentConfig& config, const FarmSplits& splits) {
  const models::SpatialCnnConfig s = spatial_config_for(config, splits);
  models::CnnRnnConfig c;
  c.gfs = s.gfs;
  c.arp = s.arp;
  c.head = s.head;
  c.dense = s.dense;
  c.encoder_units = config.encoder_units;
  c.lookback = config.lookback;
  c.horizon = 24;
  c.farm_count = s.farm_count;
  return c;
}

models::TrainingConfig training_config_for(const ExperimentConfig& config, std::uint64_t seed_stream) {
  models::TrainingConfig t;
  t.batch_size = config.batch_size;
  t.max_epochs = config.max_epochs;
  t.patience = std::min(config.patience, config.max_epochs);
  t.seed = mix_seed(config.seed, seed_stream);
  t.adam.learning_rate = config.learning_rate;
  return t;
}

std::unique_ptr<models::NeuralModel> make_neural(const ExperimentConfig& config,
                                                 const FarmSplits& splits, std::uint64_t init_seed) {
  if (config.model == ModelKind::kCnn)
    return std::make_unique<models::SpatialCnn>(spatial_config_for(config, splits), init_seed);
  return std::make_unique<models::CnnRnn>(cnn_rnn_config_for(config, splits), init_seed);
}

// Trained artifacts for one run: either one global model or one per farm.
struct FittedForecaster {
  ModelKind kind;
  bool include_lags = false;
  std::map<int, trees::DirectMultiStep> tree_by_farm;        // individual trees
  std::optional<trees::DirectMultiStep> tree_global;         // global trees
  std::map<int, std::unique_ptr<models::NeuralModel>> nn_by_farm;
  std::unique_ptr<models::NeuralModel> nn_global;
  std::unique_ptr<models::SpatialCnn> hybrid_cnn;            // conv2d-gbm
  models::HybridModel hybrid;

  std::vector<double> predict_dataset(const data::WindowedDataset& dataset, int farm_id) {
    if (is_tree_kind(kind)) {
      const Matrix features = data::tabular_features(dataset, include_lags);
      const trees::DirectMultiStep& model =
          tree_global ? *tree_global : tree_by_farm.at(farm_id);
      return trees::predict(model, features);
    }
    if (is_neural_kind(kind)) {
      models::NeuralModel& model = nn_global ? *nn_global : *nn_by_farm.at(farm_id);
      return models::predict(model, dataset);
    }
    const Matrix conv = models::extract_conv_features(*hybrid_cnn, dataset);
    const Matrix tabular = data::tabular_features(dataset, include_lags);
    std::vector<int> row_farms(static_cast<std::size_t>(tabular.rows));
    for (std::int64_t r = 0; r < tabular.rows; ++r)
      row_farms[static_cast<std::size_t>(r)] = dataset.farm_ids[static_cast<std::size_t>(r / dataset.horizon)];
    return models::hybrid_predict(hybrid, conv, tabular, row_farms);
  }
};

double validation_nd_of(std::span<const double> predictions, const data::WindowedDataset& val) {
  const eval::MetricReport report =
      eval::per_batch_report(predictions, val.y, val.count, val.horizon);
  return report.avg_nd;
}

// Trees protocol: fit on train, score validation, then refit on train+val.
void fit_trees(FittedForecaster& fc, const ExperimentConfig& config, const FarmSplits& splits,
               double& validation_nd) {
  fc.include_lags = config.include_lags;
  std::vector<double> val_scores;
  if (config.mode == Mode::kGlobal) {
    std::vector<data::WindowedDataset> trains, vals, merged;
    for (const auto& s : splits.splits) {
      trains.push_back(s.train);
      vals.push_back(s.val);
      merged.push_back(s.merged());
    }
    const data::WindowedDataset train_all = data::concat_farms_global(trains);
    const data::WindowedDataset val_all = data::concat_farms_global(vals);
    const trees::BaseLearnerConfig learner = tree_config_for(config, 11);
    const trees::DirectMultiStep probe = trees::fit_direct_multistep(
        data::tabular_features(train_all, config.include_lags), train_all.y, train_all.horizon, learner);
    if (val_all.count > 0)
      val_scores.push_back(validation_nd_of(
          trees::predict(probe, data::tabular_features(val_all, config.include_lags)), val_all));
    const data::WindowedDataset merged_all = data::concat_farms_global(merged);
    fc.tree_global = trees::fit_direct_multistep(
        data::tabular_features(merged_all, config.include_lags), merged_all.y, merged_all.horizon, learner);
  } else {
    for (std::size_t i = 0; i < splits.splits.size(); ++i) {
      const auto& s = splits.splits[i];
      const int farm = splits.farms[i].farm_id;
      const trees::BaseLearnerConfig learner = tree_config_for(config, 100 + static_cast<std::uint64_t>(farm));
      const trees::DirectMultiStep probe = trees::fit_direct_multistep(
          data::tabular_features(s.train, config.include_lags), s.train.y, s.train.horizon, learner);
      if (s.val.count > 0)
        val_scores.push_back(validation_nd_of(
            trees::predict(probe, data::tabular_features(s.val, config.include_lags)), s.val));
      const data::WindowedDataset merged = s.merged();
      fc.tree_by_farm.emplace(farm, trees::fit_direct_multistep(
                                        data::tabular_features(merged, config.include_lags), merged.y,
                                        merged.horizon, learner));
    }
  }
  validation_nd =
      val_scores.empty() ? std::numeric_limits<double>::quiet_NaN()
                         : std::accumulate(val_scores.begin(), val_scores.end(), 0.0) /
                               static_cast<double>(val_scores.size());
}

// Neural protocol: validation-checkpointed fit finds the epoch budget, then a
// fresh model retrains on train+val for that many epochs.
void fit_neural(FittedForecaster& fc, const ExperimentConfig& config, const FarmSplits& splits,
                double& validation_nd, models::TrainingHistory& history_out,
                const std::filesystem::path& run_dir) {
  std::vector<double> val_scores;
  if (config.mode == Mode::kGlobal) {
    std::vector<data::WindowedDataset> trains, vals, merged;
    for (const auto& s : splits.splits) {
      trains.push_back(s.train);
      vals.push_back(s.val);
      merged.push_back(s.merged());
    }
    const data::WindowedDataset train_all = data::concat_farms_global(trains);
    const data::WindowedDataset val_all = data::concat_farms_global(vals);
    auto probe = make_neural(config, splits, mix_seed(config.seed, 21));
    const models::TrainingConfig tc = training_config_for(config, 22);
    history_out = models::train(*probe, train_all, val_all, tc);
    val_scores.push_back(validation_nd_of(models::predict(*probe, val_all), val_all));

    fc.nn_global = make_neural(config, splits, mix_seed(config.seed, 21));
    models::train_fixed(*fc.nn_global, data::concat_farms_global(merged), history_out.best_epoch + 1, tc);
    models::write_history_csv(run_dir / "history_global.csv", history_out);
    ad::save_checkpoint(run_dir / "checkpoint_global.ckpt", fc.nn_global->state_views());
  } else {
    for (std::size_t i = 0; i < splits.splits.size(); ++i) {
      const auto& s = splits.splits[i];
      const int farm = splits.farms[i].farm_id;
      auto probe = make_neural(config, splits, mix_seed(config.seed, 300 + static_cast<std::uint64_t>(farm)));
      const models::TrainingConfig tc = training_config_for(config, 400 + static_cast<std::uint64_t>(farm));
      models::TrainingHistory history = models::train(*probe, s.train, s.val, tc);
      val_scores.push_back(validation_nd_of(models::predict(*probe, s.val), s.val));

      auto final_model =
          make_neural(config, splits, mix_seed(config.seed, 300 + static_cast<std::uint64_t>(farm)));
      models::train_fixed(*final_model, s.merged(), history.best_epoch + 1, tc);
      models::write_history_csv(run_dir / ("history_farm" + std::to_string(farm) + ".csv"), history);
      ad::save_checkpoint(run_dir / ("checkpoint_farm" + std::to_string(farm) + ".ckpt"),
                          final_model->state_views());
      fc.nn_by_farm.emplace(farm, std::move(final_model));
      if (i == 0) history_out = history;
    }
  }
  validation_nd = val_scores.empty()
                      ? std::numeric_limits<double>::quiet_NaN()
                      : std::accumulate(val_scores.begin(), val_scores.end(), 0.0) /
                            static_cast<double>(val_scores.size());
}

// Conv2D+GBM: a trained global spatial CNN supplies extracted features; one
// GBM per farm trains on [original || extracted] rows of that farm.
void fit_hybrid(FittedForecaster& fc, const ExperimentConfig& config, const FarmSplits& splits,
                double& validation_nd) {
  fc.include_lags = config.include_lags;
  fc.hybrid_cnn = std::make_unique<models::SpatialCnn>(spatial_config_for(config, splits),
                                                       mix_seed(config.seed, 21));
  ad::load_checkpoint(config.cnn_checkpoint, fc.hybrid_cnn->state_views());
  fc.hybrid_cnn->set_trained();

  std::vector<data::WindowedDataset> merged, vals, trains;
  for (const auto& s : splits.splits) {
    trains.push_back(s.train);
    vals.push_back(s.val);
    merged.push_back(s.merged());
  }
  const data::WindowedDataset train_all = data::concat_farms_global(trains);
  const data::WindowedDataset val_all = data::concat_farms_global(vals);
  const data::WindowedDataset merged_all = data::concat_farms_global(merged);

  auto row_farms = [](const data::WindowedDataset& ds) {
    std::vector<int> out(static_cast<std::size_t>(ds.count * ds.horizon));
    for (std::int64_t r = 0; r < ds.count * ds.horizon; ++r)
      out[static_cast<std::size_t>(r)] = ds.farm_ids[static_cast<std::size_t>(r / ds.horizon)];
    return out;
  };

  {
    const Matrix conv = models::extract_conv_features(*fc.hybrid_cnn, train_all);
    const Matrix tabular = data::tabular_features(train_all, config.include_lags);
    const models::HybridModel probe =
        models::hybrid_fit(conv, tabular, train_all.y, row_farms(train_all), config.gbm);
    if (val_all.count > 0) {
      const Matrix conv_val = models::extract_conv_features(*fc.hybrid_cnn, val_all);
      const Matrix tab_val = data::tabular_features(val_all, config.include_lags);
      validation_nd = validation_nd_of(
          models::hybrid_predict(probe, conv_val, tab_val, row_farms(val_all)), val_all);
    } else {
      validation_nd = std::numeric_limits<double>::quiet_NaN();
    }
  }
  const Matrix conv = models::extract_conv_features(*fc.hybrid_cnn, merged_all);
  const Matrix tabular = data::tabular_features(merged_all, config.include_lags);
  fc.hybrid = models::hybrid_fit(conv, tabular, merged_all.y, row_farms(merged_all), config.gbm);
}

void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<PreparedFarm>& farms,
                           const std::vector<data::SplitResult>& splits,
                           const std::vector<std::vector<double>>& per_farm_predictions) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "farm,batch_index,step,timestamp,actual,predicted\n";
  for (std::size_t f = 0; f < farms.size(); ++f) {
    const data::WindowedDataset& test = splits[f].test;
    const std::vector<double>& pred = per_farm_predictions[f];
    for (std::int64_t b = 0; b < test.count; ++b)
      for (std::int64_t h = 0; h < test.horizon; ++h) {
        const std::int64_t ts = test.sample_timestamps[static_cast<std::size_t>(b)] + h * timeutil::kHour;
        const std::size_t i = static_cast<std::size_t>(b * test.horizon + h);
        os << farms[f].farm_id << ',' << b << ',' << h << ',' << timeutil::format_iso8601(ts) << ','
           << data::format_double(test.y[i]) << ',' << data::format_double(pred[i]) << '\n';
      }
  }
}

std::filesystem::path make_run_dir(const ExperimentConfig& config) {
  std::filesystem::path dir(config.out_dir);
  if (!config.run_name.empty()) {
    dir /= config.run_name;
  } else {
    // wall-clock prefix plus config hash; contents stay reproducible either way
    const auto now = std::chrono::system_clock::now();
    const std::int64_t secs =
        std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
    std::string stamp = timeutil::format_iso8601(secs);
    std::erase_if(stamp, [](char c) { return c == '-' || c == ':'; });
    dir /= stamp + "-" + config_hash(config);
  }
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

RunArtifact cmd_train(const ExperimentConfig& config) {
  config.validate();
  const FarmSplits splits = prepare_and_split(config);
  const std::filesystem::path run_dir = make_run_dir(config);

  {
    std::ofstream os(run_dir / "config.json");
    os << config_to_json(config) << '\n';
  }

  FittedForecaster forecaster;
  forecaster.kind = config.model;
  double validation_nd = std::numeric_limits<double>::quiet_NaN();
  models::TrainingHistory history;

  if (is_tree_kind(config.model)) {
    fit_trees(forecaster, config, splits, validation_nd);
    // persist tree dumps
    if (forecaster.tree_global) {
      trees::save_model(run_dir / "model_global.json", *forecaster.tree_global);
    } else {
      for (const auto& [farm, model] : forecaster.tree_by_farm)
        trees::save_model(run_dir / ("model_farm" + std::to_string(farm) + ".json"), model);
    }
  } else if (is_neural_kind(config.model)) {
    fit_neural(forecaster, config, splits, validation_nd, history, run_dir);
  } else {
    fit_hybrid(forecaster, config, splits, validation_nd);
    for (const auto& [farm, model] : forecaster.hybrid.per_farm) {
      std::ofstream os(run_dir / ("model_farm" + std::to_string(farm) + ".json"));
      os << trees::gbm_to_json(model) << '\n';
    }
  }

  RunArtifact artifact;
  artifact.run_dir = run_dir;
  artifact.config = config;
  artifact.validation_nd = validation_nd;

  std::vector<std::vector<double>> per_farm_predictions;
  for (std::size_t f = 0; f < splits.splits.size(); ++f) {
    const data::WindowedDataset& test = splits.splits[f].test;
    std::vector<double> pred = forecaster.predict_dataset(test, splits.farms[f].farm_id);
    eval::MetricReport report = eval::per_batch_report(pred, test.y, test.count, test.horizon);
    report.model = model_kind_name(config.model);
    report.mode = mode_name(config.mode);
    report.farm_id = splits.farms[f].farm_id;
    artifact.reports.push_back(std::move(report));
    per_farm_predictions.push_back(std::move(pred));
  }

  eval::write_metrics_csv(run_dir / "metrics.csv", artifact.reports);
  write_predictions_csv(run_dir / "predictions.csv", splits.farms, splits.splits, per_farm_predictions);
  return artifact;
}

std::vector<eval::MetricReport> cmd_evaluate(const std::filesystem::path& run_dir) {
  ExperimentConfig config = load_config_file(run_dir / "config.json");
  config.validate();
  const FarmSplits splits = prepare_and_split(config);

  FittedForecaster forecaster;
  forecaster.kind = config.model;
  forecaster.include_lags = config.include_lags;
  if (is_tree_kind(config.model)) {
    if (config.mode == Mode::kGlobal) {
      forecaster.tree_global = trees::load_model(run_dir / "model_global.json");
    } else {
      for (const auto& farm : splits.farms) {
        forecaster.tree_by_farm.emplace(
            farm.farm_id, trees::load_model(run_dir / ("model_farm" + std::to_string(farm.farm_id) + ".json")));
      }
    }
  } else if (is_neural_kind(config.model)) {
    if (config.mode == Mode::kGlobal) {
      forecaster.nn_global = make_neural(config, splits, mix_seed(config.seed, 21));
      ad::load_checkpoint(run_dir / "checkpoint_global.ckpt", forecaster.nn_global->state_views());
      forecaster.nn_global->set_trained();
    } else {
      for (const auto& farm : splits.farms) {
        auto model = make_neural(config, splits,
                                 mix_seed(config.seed, 300 + static_cast<std::uint64_t>(farm.farm_id)));
        ad::load_checkpoint(run_dir / ("checkpoint_farm" + std::to_string(farm.farm_id) + ".ckpt"),
                            model->state_views());
        model->set_trained();
        forecaster.nn_by_farm.emplace(farm.farm_id, std::move(model));
      }
    }
  } else {
    forecaster.hybrid_cnn = std::make_unique<models::SpatialCnn>(spatial_config_for(config, splits),
                                                                 mix_seed(config.seed, 21));
    ad::load_checkpoint(config.cnn_checkpoint, forecaster.hybrid_cnn->state_views());
    forecaster.hybrid_cnn->set_trained();
    for (const auto& farm : splits.farms) {
      std::ifstream is(run_dir / ("model_farm" + std::to_string(farm.farm_id) + ".json"));
      if (!is) throw std::runtime_error("missing hybrid model for farm " + std::to_string(farm.farm_id));
      std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
      forecaster.hybrid.per_farm.emplace(farm.farm_id, trees::gbm_from_json(text));
    }
  }

  std::vector<eval::MetricReport> reports;
  for (std::size_t f = 0; f < splits.splits.size(); ++f) {
    const data::WindowedDataset& test = splits.splits[f].test;
    const std::vector<double> pred = forecaster.predict_dataset(test, splits.farms[f].farm_id);
    eval::MetricReport report = eval::per_batch_report(pred, test.y, test.count, test.horizon);
    report.model = model_kind_name(config.model);
    report.mode = mode_name(config.mode);
    report.farm_id = splits.farms[f].farm_id;
    reports.push_back(std::move(report));
  }
  return reports;
}

// ---------------------------------------------------------------------------
// cmd_compare

CompareResult cmd_compare(const CompareOptions& options) {
  if (options.models.empty() || options.modes.empty())
    throw std::invalid_argument("compare: models and modes must be non-empty");

  struct Job {
    ModelKind model;
    Mode mode;
    ExperimentConfig config;
  };
  std::vector<Job> jobs;
  for (ModelKind model : options.models)
    for (Mode mode : options.modes) {
      ExperimentConfig c = options.base;
      c.model = model;
      c.mode = mode;
      c.run_name = model_kind_name(model) + "_" + mode_name(mode);
      jobs.push_back(Job{model, mode, std::move(c)});
    }

  const int cap = worker_thread_cap();
  std::counting_semaphore<256> gate(std::min(cap, 256));
  std::vector<std::future<RunArtifact>> futures;
  futures.reserve(jobs.size());
  for (const Job& job : jobs) {
    futures.push_back(std::async(std::launch::async, [&gate, config = job.config]() {
      gate.acquire();
      struct Release {
        std::counting_semaphore<256>& g;
        ~Release() { g.release(); }
      } release{gate};
      return cmd_train(config);
    }));
  }

  CompareResult result;
  result.baseline_model = options.baseline_model;
  result.baseline_mode = options.baseline_mode;
  for (auto& f : futures) result.runs.push_back(f.get());

  auto find_run = [&](ModelKind model, Mode mode) -> const RunArtifact* {
    for (const auto& run : result.runs)
      if (run.config.model == model && run.config.mode == mode) return &run;
    return nullptr;
  };
  const RunArtifact* baseline = find_run(options.baseline_model, options.baseline_mode);
  if (baseline == nullptr)
    throw std::invalid_argument("compare: baseline cell is not part of the grid");

  auto report_for_farm = [](const RunArtifact& run, int farm) -> const eval::MetricReport& {
    for (const auto& r : run.reports)
      if (r.farm_id == farm) return r;
    throw std::runtime_error("compare: missing farm report");
  };

  for (const auto& run : result.runs) {
    std::vector<double> farm_nd, farm_nrmse, base_nd, base_nrmse;
    for (int farm : options.base.farms) {
      const eval::MetricReport& mine = report_for_farm(run, farm);
      const eval::MetricReport& ref = report_for_farm(*baseline, farm);
      CompareCell cell;
      cell.model = run.config.model;
      cell.mode = run.config.mode;
      cell.farm_id = farm;
      cell.avg_nd = mine.avg_nd;
      cell.avg_nrmse = mine.avg_nrmse;
      if (&mine != &ref && mine.per_batch_nd.size() == ref.per_batch_nd.size() &&
          mine.per_batch_nd.size() >= 2) {
        const auto t_nd = eval::paired_t_test(mine.per_batch_nd, ref.per_batch_nd);
        const auto t_nrmse = eval::paired_t_test(mine.per_batch_nrmse, ref.per_batch_nrmse);
        cell.p_nd = t_nd.p_value;
        cell.p_nrmse = t_nrmse.p_value;
        cell.nd_significant = eval::significant_at_95(t_nd);
        cell.nrmse_significant = eval::significant_at_95(t_nrmse);
        cell.degenerate = t_nd.degenerate || t_nrmse.degenerate;
      } else {
        cell.degenerate = true;
        cell.p_nd = std::numeric_limits<double>::quiet_NaN();
        cell.p_nrmse = std::numeric_limits<double>::quiet_NaN();
      }
      result.cells.push_back(cell);
      farm_nd.push_back(mine.avg_nd);
      farm_nrmse.push_back(mine.avg_nrmse);
      base_nd.push_back(ref.avg_nd);
      base_nrmse.push_back(ref.avg_nrmse);
    }
    // Average row: pairs the per-farm averages
    CompareCell avg;
    avg.model = run.config.model;
    avg.mode = run.config.mode;
    avg.farm_id = -1;
    avg.avg_nd = std::accumulate(farm_nd.begin(), farm_nd.end(), 0.0) / static_cast<double>(farm_nd.size());
    avg.avg_nrmse =
        std::accumulate(farm_nrmse.begin(), farm_nrmse.end(), 0.0) / static_cast<double>(farm_nrmse.size());
    const bool is_baseline =
        run.config.model == options.baseline_model && run.config.mode == options.baseline_mode;
    if (!is_baseline && farm_nd.size() >= 2) {
      const auto t_nd = eval::paired_t_test(farm_nd, base_nd);
      const auto t_nrmse = eval::paired_t_test(farm_nrmse, base_nrmse);
      avg.p_nd = t_nd.p_value;
      avg.p_nrmse = t_nrmse.p_value;
      avg.nd_significant = eval::significant_at_95(t_nd);
      avg.nrmse_significant = eval::significant_at_95(t_nrmse);
      avg.degenerate = t_nd.degenerate || t_nrmse.degenerate;
    } else {
      avg.degenerate = true;
      avg.p_nd = std::numeric_limits<double>::quiet_NaN();
      avg.p_nrmse = std::numeric_limits<double>::quiet_NaN();
    }
    result.cells.push_back(avg);
  }
  return result;
}

void write_compare_csv(const std::filesystem::path& path, const CompareResult& result) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "model,mode,farm,avg_nd,avg_nrmse,p_nd,p_nrmse,nd_dagger,nrmse_dagger\n";
  for (const auto& cell : result.cells) {
    os << model_kind_name(cell.model) << ',' << mode_name(cell.mode) << ','
       << (cell.farm_id < 0 ? std::string("average") : std::to_string(cell.farm_id)) << ','
       << data::format_double(cell.avg_nd) << ',' << data::format_double(cell.avg_nrmse) << ','
       << (std::isnan(cell.p_nd) ? "nan" : data::format_double(cell.p_nd)) << ','
       << (std::isnan(cell.p_nrmse) ? "nan" : data::format_double(cell.p_nrmse)) << ','
       << (cell.nd_significant ? 1 : 0) << ',' << (cell.nrmse_significant ? 1 : 0) << '\n';
  }
}

std::string render_compare_table(const CompareResult& result) {
  // Table 4/5 shape: farms as rows, (mode, model) columns, ND then NRMSE.
  std::vector<std::pair<Mode, ModelKind>> columns;
  for (const auto& run : result.runs) columns.emplace_back(run.config.mode, run.config.model);
  std::stable_sort(columns.begin(), columns.end(), [](const auto& a, const auto& b) {
    return static_cast<int>(a.first) < static_cast<int>(b.first);
  });

  auto cell_of = [&](Mode mode, ModelKind model, int farm) -> const CompareCell* {
    for (const auto& c : result.cells)
      if (c.mode == mode && c.model == model && c.farm_id == farm) return &c;
    return nullptr;
  };

  std::vector<int> farm_rows;
  for (const auto& c : result.cells)
    if (c.farm_id >= 0 && !std::count(farm_rows.begin(), farm_rows.end(), c.farm_id))
      farm_rows.push_back(c.farm_id);
  std::sort(farm_rows.begin(), farm_rows.end());

  std::ostringstream os;
  for (const char* metric : {"ND", "NRMSE"}) {
    const bool use_nd = std::string(metric) == "ND";
    os << "(" << metric << ")\n";
    os << "        ";
    for (const auto& [mode, model] : columns)
      os << ' ' << mode_name(mode).substr(0, 4) << ':' << model_kind_name(model);
    os << '\n';
    auto row = [&](const std::string& label, int farm) {
      os << label;
      for (const auto& [mode, model] : columns) {
        const CompareCell* c = cell_of(mode, model, farm);
        if (c == nullptr) {
          os << "      -";
          continue;
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), " %.3f%s", use_nd ? c->avg_nd : c->avg_nrmse,
                      (use_nd ? c->nd_significant : c->nrmse_significant) ? "+" : " ");
        os << buf;
      }
      os << '\n';
    };
    for (int farm : farm_rows) row("WF" + std::to_string(farm) + "    ", farm);
    row("Average", -1);
    os << '\n';
  }
  os << "+ : significant at the 95% level (two-sided paired t-test vs "
     << model_kind_name(result.baseline_model) << "/" << mode_name(result.baseline_mode) << ")\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// cmd_gridsearch

trees::GridSearchResult cmd_gridsearch(const GridSearchOptions& options) {
  const ExperimentConfig& config = options.base;
  config.validate();
  if (!is_tree_kind(config.model))
    throw std::invalid_argument("gridsearch: only tree models (lr|et|gbm) are searchable");
  const FarmSplits splits = prepare_and_split(config);

  std::vector<data::WindowedDataset> trains, vals;
  for (const auto& s : splits.splits) {
    trains.push_back(s.train);
    vals.push_back(s.val);
  }
  const data::WindowedDataset train_all =
      config.mode == Mode::kGlobal ? data::concat_farms_global(trains) : trains.front();
  const data::WindowedDataset val_all =
      config.mode == Mode::kGlobal ? data::concat_farms_global(vals) : vals.front();
  if (config.mode == Mode::kIndividual && splits.splits.size() != 1)
    throw std::invalid_argument("gridsearch: individual mode expects exactly one farm");
  if (val_all.count == 0) throw std::invalid_argument("gridsearch: empty validation split");

  const Matrix train_x = data::tabular_features(train_all, config.include_lags);
  const Matrix val_x = data::tabular_features(val_all, config.include_lags);

  return trees::grid_search(options.grid, [&](const std::map<std::string, double>& params) {
    trees::BaseLearnerConfig learner = tree_config_for(config, 11);
    for (const auto& [key, value] : params) trees::apply_param(learner, key, value);
    const trees::DirectMultiStep model =
        trees::fit_direct_multistep(train_x, train_all.y, train_all.horizon, learner);
    const std::vector<double> pred = trees::predict(model, val_x);
    return eval::per_batch_report(pred, val_all.y, val_all.count, val_all.horizon).avg_nd;
  });
}

// ---------------------------------------------------------------------------
// cmd_plotdata

namespace {

struct PredictionRows {
  std::string model;
  // farm -> [batch][step] -> (timestamp, actual, predicted)
  std::map<int, std::map<std::int64_t, std::vector<std::array<double, 2>>>> values;
  std::map<int, std::map<std::int64_t, std::vector<std::string>>> timestamps;
};

PredictionRows read_predictions(const std::filesystem::path& run_dir) {
  ExperimentConfig config = load_config_file(run_dir / "config.json");
  std::ifstream is(run_dir / "predictions.csv");
  if (!is) throw std::runtime_error("missing predictions.csv in " + run_dir.string());
  std::string line;
  std::getline(is, line);  // header
  PredictionRows out;
  out.model = model_kind_name(config.model) + "_" + mode_name(config.mode);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    const int farm = std::stoi(fields[0]);
    const std::int64_t batch = std::stoll(fields[1]);
    out.values[farm][batch].push_back({std::stod(fields[4]), std::stod(fields[5])});
    out.timestamps[farm][batch].push_back(fields[3]);
  }
  return out;
}

}  // namespace

void cmd_plotdata(const std::vector<std::filesystem::path>& run_dirs,
                  const std::filesystem::path& out_dir, int farm_id) {
  if (run_dirs.empty()) throw std::invalid_argument("plotdata: no run directories given");
  std::filesystem::create_directories(out_dir);

  std::vector<PredictionRows> runs;
  for (const auto& dir : run_dirs) runs.push_back(read_predictions(dir));

  // Fig. 9 analog: per test batch, ND/NRMSE averaged over models and farms.
  std::map<std::int64_t, std::vector<double>> nd_by_batch, nrmse_by_batch;
  for (const auto& run : runs)
    for (const auto& [farm, batches] : run.values)
      for (const auto& [batch, rows] : batches) {
        std::vector<double> actual, predicted;
        for (const auto& r : rows) {
          actual.push_back(r[0]);
          predicted.push_back(r[1]);
        }
        bool all_zero = true;
        for (double v : actual)
          if (v != 0.0) all_zero = false;
        if (all_zero) continue;
        nd_by_batch[batch].push_back(eval::nd(actual, predicted));
        nrmse_by_batch[batch].push_back(eval::nrmse(actual, predicted));
      }
  {
    std::ofstream os(out_dir / "plot_batch_errors.csv");
    if (!os) throw std::runtime_error("cannot write plot_batch_errors.csv");
    os << "batch_index,avg_nd,avg_nrmse\n";
    for (const auto& [batch, nds] : nd_by_batch) {
      const auto& nrs = nrmse_by_batch[batch];
      const double mean_nd = std::accumulate(nds.begin(), nds.end(), 0.0) / static_cast<double>(nds.size());
      const double mean_nr = std::accumulate(nrs.begin(), nrs.end(), 0.0) / static_cast<double>(nrs.size());
      os << batch << ',' << data::format_double(mean_nd) << ',' << data::format_double(mean_nr) << '\n';
    }
  }

  // Fig. 8 analog: actual vs every model's prediction for one farm.
  const int farm = farm_id >= 0 ? farm_id : runs.front().values.begin()->first;
  {
    std::ofstream os(out_dir / "plot_predictions.csv");
    if (!os) throw std::runtime_error("cannot write plot_predictions.csv");
    os << "timestamp,actual";
    for (const auto& run : runs) os << ',' << run.model;
    os << '\n';
    const auto& ref = runs.front();
    auto farm_it = ref.values.find(farm);
    if (farm_it == ref.values.end())
      throw std::invalid_argument("plotdata: farm " + std::to_string(farm) + " absent from runs");
    for (const auto& [batch, rows] : farm_it->second) {
      for (std::size_t step = 0; step < rows.size(); ++step) {
        os << ref.timestamps.at(farm).at(batch)[step] << ','
           << data::format_double(rows[step][0]);
        for (const auto& run : runs)
          os << ',' << data::format_double(run.values.at(farm).at(batch)[step][1]);
        os << '\n';
      }
    }
  }
}

}  // namespace gustcast::cli
