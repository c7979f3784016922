#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gustcast/dataio.hpp"
#include "gustcast/metrics.hpp"
#include "gustcast/models.hpp"
#include "gustcast/synthetic.hpp"
#include "gustcast/trees.hpp"
#include "gustcast/windowing.hpp"

namespace gustcast::cli {

enum class Mode { kIndividual, kGlobal };
std::string mode_name(Mode mode);
Mode mode_from_name(const std::string& name);

enum class ModelKind { kLr, kEt, kGbm, kCnn, kCnnRnn, kConv2dGbm };
std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

// One experiment: a model trained in one mode over a farm set, reproducible
// from this structure alone.
struct ExperimentConfig {
  std::vector<int> farms{0, 1, 2, 3, 4, 5, 6};
  Mode mode = Mode::kIndividual;
  ModelKind model = ModelKind::kGbm;
  bool include_lags = true;
  std::uint64_t seed = 42;
  std::string data_dir;
  std::string out_dir = "runs";
  std::string run_name;  // optional fixed run directory name

  // pipeline
  std::int64_t stride = 1;
  int test_days = 120;
  double val_fraction = 0.10;
  double month_period = 12.0;

  // neural settings
  int max_epochs = 300;
  int patience = 20;
  std::int64_t batch_size = 64;
  double learning_rate = 1e-3;
  double dropout_rate = 0.2;
  std::vector<std::int64_t> conv_filters{264, 128};
  std::vector<std::int64_t> conv_kernels{4, 2};
  std::vector<std::int64_t> encoder_units{128, 64};
  std::vector<std::int64_t> dense_units{128, 64};
  std::int64_t lookback = 48;
  std::string cnn_checkpoint;  // conv2d-gbm: trained global spatial CNN

  // tree settings
  trees::GbmParams gbm;
  trees::EtParams et;

  void validate() const;
};

std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config_file(const std::filesystem::path& path);
// FNV-1a over the canonical JSON; names the run directory.
std::string config_hash(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Pipeline assembly

struct PreparedFarm {
  int farm_id = 0;
  std::int64_t train_end = 0;  // first test target hour
  data::PowerSeries power;     // normalized
  data::WindowedDataset dataset;
  data::FittedFarmStats fitted;
};

// Raw CSVs -> normalized, windowed, model-ready data for one farm. Every
// fitted statistic (anchors, level choice) uses timestamps before the test
// region only. Pre-fitted stats from the manifest are honored when present.
PreparedFarm prepare_farm(const data::DatasetManifest& manifest, std::size_t farm_index,
                          const std::filesystem::path& data_dir, const ExperimentConfig& config);

struct FarmSplits {
  std::vector<PreparedFarm> farms;
  std::vector<data::SplitResult> splits;  // aligned with farms
};

FarmSplits prepare_and_split(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Commands

struct GenerateOptions {
  std::uint64_t seed = 42;
  int days = 365;
  int farm_count = 7;
  std::filesystem::path out_dir;
  data::SyntheticConfig synthetic;
};

// Writes power and NWP CSVs plus manifest.json for `farm_count` farms.
std::filesystem::path cmd_generate(const GenerateOptions& options);

// Fits per-farm statistics and writes them back into the manifest.
void cmd_prepare(const ExperimentConfig& config);

struct RunArtifact {
  std::filesystem::path run_dir;
  ExperimentConfig config;
  std::vector<eval::MetricReport> reports;  // one per farm
  double validation_nd = 0.0;               // pre-merge validation score
};

// split -> fit (with validation checkpointing) -> merge-and-retrain ->
// evaluate on the untouched test batches -> persist everything under the run
// directory.
RunArtifact cmd_train(const ExperimentConfig& config);

// Re-evaluates a persisted run against its data; returns fresh reports.
std::vector<eval::MetricReport> cmd_evaluate(const std::filesystem::path& run_dir);

struct CompareCell {
  ModelKind model;
  Mode mode;
  int farm_id = -1;  // -1 marks the Average row
  double avg_nd = 0.0;
  double avg_nrmse = 0.0;
  double p_nd = 1.0;
  double p_nrmse = 1.0;
  bool nd_significant = false;
  bool nrmse_significant = false;
  bool degenerate = false;
};

struct CompareResult {
  std::vector<RunArtifact> runs;
  std::vector<CompareCell> cells;
  ModelKind baseline_model = ModelKind::kEt;
  Mode baseline_mode = Mode::kIndividual;
};

struct CompareOptions {
  ExperimentConfig base;              // shared settings (farms, data, seed, budgets)
  std::vector<ModelKind> models{ModelKind::kLr, ModelKind::kEt, ModelKind::kGbm, ModelKind::kCnn,
                                ModelKind::kCnnRnn};
  std::vector<Mode> modes{Mode::kIndividual, Mode::kGlobal};
  ModelKind baseline_model = ModelKind::kEt;
  Mode baseline_mode = Mode::kIndividual;
};

// The farms x models x modes grid with two-sided paired t-tests against the
// baseline cell; daggers mark p < 0.05. Runs execute in parallel workers
// capped by GUSTCAST_THREADS.
CompareResult cmd_compare(const CompareOptions& options);
void write_compare_csv(const std::filesystem::path& path, const CompareResult& result);
std::string render_compare_table(const CompareResult& result);

struct GridSearchOptions {
  ExperimentConfig base;
  trees::ParamGrid grid;
};
trees::GridSearchResult cmd_gridsearch(const GridSearchOptions& options);

// Figure-data CSVs from persisted runs: per-batch average errors across
// models, and actual-vs-predicted series for one farm.
void cmd_plotdata(const std::vector<std::filesystem::path>& run_dirs,
                  const std::filesystem::path& out_dir, int farm_id);

// Worker-parallelism cap (>=1). Reads GUSTCAST_THREADS.
int worker_thread_cap();

}  // namespace gustcast::cli
