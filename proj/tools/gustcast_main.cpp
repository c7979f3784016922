// gustcast — day-ahead wind power forecasting over synthetic multi-farm data.
//
// Subcommands: generate, prepare, train, evaluate, compare, gridsearch,
// plotdata. Failures exit nonzero with a machine-readable JSON error line on
// stderr.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gustcast/experiment.hpp"
#include "gustcast/metrics.hpp"

namespace cli = gustcast::cli;
namespace trees = gustcast::trees;

namespace {

struct CommonFlags {
  std::string config_file;
  std::string data_dir;
  std::string out_dir;
  std::string run_name;
  std::string mode;
  std::string model;
  std::vector<int> farms;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool lags = false, no_lags = false;
  std::int64_t stride = 0;
  int test_days = 0;
  int max_epochs = 0;
  int patience = -1;
  std::string cnn_checkpoint;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON config file (flags override its keys)");
    cmd->add_option("--data", data_dir, "dataset directory (holds manifest.json)");
    cmd->add_option("--out", out_dir, "output directory for runs");
    cmd->add_option("--run-name", run_name, "fixed run directory name");
    cmd->add_option("--mode", mode, "individual|global");
    cmd->add_option("--model", model, "lr|et|gbm|cnn|cnn-rnn|conv2d-gbm");
    cmd->add_option("--farms", farms, "farm ids (default 0..6)");
    cmd->add_option("--seed", seed, "experiment seed")->each([this](const std::string&) { seed_set = true; });
    cmd->add_flag("--lags", lags, "include the 48 power lags in tabular features");
    cmd->add_flag("--no-lags", no_lags, "exclude power lags from tabular features");
    cmd->add_option("--stride", stride, "training window stride in hours");
    cmd->add_option("--test-days", test_days, "test period length in days");
    cmd->add_option("--epochs", max_epochs, "neural max epochs");
    cmd->add_option("--patience", patience, "neural early-stopping patience");
    cmd->add_option("--cnn-checkpoint", cnn_checkpoint, "trained global CNN checkpoint (conv2d-gbm)");
  }

  cli::ExperimentConfig resolve() const {
    cli::ExperimentConfig config;
    if (!config_file.empty()) config = cli::load_config_file(config_file);
    if (!data_dir.empty()) config.data_dir = data_dir;
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (!run_name.empty()) config.run_name = run_name;
    if (!mode.empty()) config.mode = cli::mode_from_name(mode);
    if (!model.empty()) config.model = cli::model_kind_from_name(model);
    if (!farms.empty()) config.farms = farms;
    if (seed_set) config.seed = seed;
    if (lags && no_lags) throw CLI::ValidationError("--lags and --no-lags are mutually exclusive");
    if (lags) config.include_lags = true;
    if (no_lags) config.include_lags = false;
    if (stride > 0) config.stride = stride;
    if (test_days > 0) config.test_days = test_days;
    if (max_epochs > 0) config.max_epochs = max_epochs;
    if (patience >= 0) config.patience = patience;
    if (!cnn_checkpoint.empty()) config.cnn_checkpoint = cnn_checkpoint;
    return config;
  }
};

void print_reports(const std::vector<gustcast::eval::MetricReport>& reports) {
  for (const auto& r : reports) {
    std::printf("farm %d  %-10s %-10s avg ND %.4f  avg NRMSE %.4f  (%zu batches, %lld excluded)\n",
                r.farm_id, r.model.c_str(), r.mode.c_str(), r.avg_nd, r.avg_nrmse,
                r.per_batch_nd.size(), static_cast<long long>(r.excluded_batches));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gustcast: parallel CNN-RNN day-ahead wind power forecasting"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "write synthetic farm CSVs and a manifest");
  std::uint64_t gen_seed = 42;
  int gen_days = 365;
  int gen_farms = 7;
  std::string gen_out = "data";
  generate->add_option("--seed", gen_seed, "generator seed");
  generate->add_option("--days", gen_days, "days of hourly data per farm");
  generate->add_option("--farms", gen_farms, "number of farms");
  generate->add_option("--out", gen_out, "output directory")->required();

  // prepare
  auto* prepare = app.add_subcommand("prepare", "fit normalization anchors and level selection into the manifest");
  CommonFlags prepare_flags;
  prepare_flags.attach(prepare);

  // train
  auto* train = app.add_subcommand("train", "split, fit with validation checkpointing, merge-retrain, evaluate");
  CommonFlags train_flags;
  train_flags.attach(train);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "re-evaluate a persisted run");
  std::string eval_run;
  evaluate->add_option("--run", eval_run, "run directory")->required();

  // compare
  auto* compare = app.add_subcommand("compare", "train a models x modes grid and emit the comparison table");
  CommonFlags compare_flags;
  compare_flags.attach(compare);
  std::vector<std::string> compare_models{"lr", "et", "gbm", "cnn", "cnn-rnn"};
  std::vector<std::string> compare_modes{"individual", "global"};
  std::string baseline_model = "et";
  std::string baseline_mode = "individual";
  compare->add_option("--models", compare_models, "models in the grid");
  compare->add_option("--modes", compare_modes, "modes in the grid");
  compare->add_option("--baseline-model", baseline_model, "t-test reference model");
  compare->add_option("--baseline-mode", baseline_mode, "t-test reference mode");

  // gridsearch
  auto* gridsearch = app.add_subcommand("gridsearch", "exhaustive hyperparameter search on the validation split");
  CommonFlags grid_flags;
  grid_flags.attach(gridsearch);
  std::string grid_json;
  gridsearch->add_option("--grid", grid_json, "JSON object: {\"param\": [values...], ...}")->required();

  // plotdata
  auto* plotdata = app.add_subcommand("plotdata", "emit figure CSVs from persisted runs");
  std::vector<std::string> plot_runs;
  std::string plot_out = "plotdata";
  int plot_farm = -1;
  plotdata->add_option("--runs", plot_runs, "run directories")->required();
  plotdata->add_option("--out", plot_out, "output directory");
  plotdata->add_option("--farm", plot_farm, "farm for the prediction series (default: first)");

  try {
    app.parse(argc, argv);

    if (*generate) {
      cli::GenerateOptions options;
      options.seed = gen_seed;
      options.days = gen_days;
      options.farm_count = gen_farms;
      options.out_dir = gen_out;
      const auto manifest = cli::cmd_generate(options);
      std::printf("wrote %s (%d farms x %d days)\n", manifest.string().c_str(), gen_farms, gen_days);
      return 0;
    }
    if (*prepare) {
      cli::cmd_prepare(prepare_flags.resolve());
      std::printf("manifest updated with fitted statistics\n");
      return 0;
    }
    if (*train) {
      const cli::RunArtifact artifact = cli::cmd_train(train_flags.resolve());
      std::printf("run: %s\n", artifact.run_dir.string().c_str());
      print_reports(artifact.reports);
      return 0;
    }
    if (*evaluate) {
      print_reports(cli::cmd_evaluate(eval_run));
      return 0;
    }
    if (*compare) {
      cli::CompareOptions options;
      options.base = compare_flags.resolve();
      options.models.clear();
      for (const auto& m : compare_models) options.models.push_back(cli::model_kind_from_name(m));
      options.modes.clear();
      for (const auto& m : compare_modes) options.modes.push_back(cli::mode_from_name(m));
      options.baseline_model = cli::model_kind_from_name(baseline_model);
      options.baseline_mode = cli::mode_from_name(baseline_mode);
      const cli::CompareResult result = cli::cmd_compare(options);
      const std::filesystem::path out(options.base.out_dir);
      cli::write_compare_csv(out / "comparison.csv", result);
      const std::string table = cli::render_compare_table(result);
      std::fputs(table.c_str(), stdout);
      std::ofstream(out / "comparison.txt") << table;
      return 0;
    }
    if (*gridsearch) {
      cli::GridSearchOptions options;
      options.base = grid_flags.resolve();
      const auto j = nlohmann::json::parse(grid_json);
      for (const auto& [key, values] : j.items())
        options.grid.axes.emplace_back(key, values.get<std::vector<double>>());
      const trees::GridSearchResult result = cli::cmd_gridsearch(options);
      const std::filesystem::path out(options.base.out_dir);
      std::filesystem::create_directories(out);
      trees::write_grid_search_csv(out / "gridsearch.csv", result);
      std::printf("%zu configurations; best validation ND %.5f\n", result.table.size(),
                  result.best().validation_nd);
      for (const auto& [key, value] : result.best().params) std::printf("  %s = %g\n", key.c_str(), value);
      return 0;
    }
    if (*plotdata) {
      std::vector<std::filesystem::path> dirs(plot_runs.begin(), plot_runs.end());
      cli::cmd_plotdata(dirs, plot_out, plot_farm);
      std::printf("wrote %s/plot_batch_errors.csv and %s/plot_predictions.csv\n", plot_out.c_str(),
                  plot_out.c_str());
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << nlohmann::json{{"error", e.what()}}.dump() << std::endl;
    return app.exit(e) == 0 ? 1 : app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}}.dump() << std::endl;
    return 1;
  }
  return 0;
}
