#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gustcast/matrix.hpp"

namespace gustcast::trees {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;  // leaf prediction (mean of its rows)

  bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // node 0 is the root

  double predict_row(const double* row) const;
  std::int64_t leaf_count() const;
};

// ---------------------------------------------------------------------------
// Linear least squares

struct LinearModel {
  std::vector<double> coefficients;
  double intercept = 0.0;
};

// Normal equations; falls back to a ridge jitter of 1e-8 when the system is
// rank-deficient.
LinearModel fit_linear(const Matrix& x, std::span<const double> y);
std::vector<double> predict(const LinearModel& model, const Matrix& x);

// ---------------------------------------------------------------------------
// Leaf-wise gradient boosting

struct GbmParams {
  int n_estimators = 100;
  int num_leaves = 90;
  double learning_rate = 0.07;
  int min_child_samples = 22;
};

struct GbmModel {
  GbmParams params;
  double base_score = 0.0;
  std::vector<RegressionTree> trees;
};

// Stagewise least-squares boosting. Every tree is grown leaf-wise: the leaf
// with the largest variance-reduction gain splits first, until num_leaves is
// reached or no split leaves min_child_samples rows on both sides. Split
// search is exact over sorted feature values, thresholds at midpoints,
// ties broken by lowest feature index then lowest threshold.
GbmModel fit_gbm(const Matrix& x, std::span<const double> y, const GbmParams& params);
std::vector<double> predict(const GbmModel& model, const Matrix& x);

// Best split of a row set by variance reduction under a min-child constraint;
// exposed because the boosting stage and its test oracle share the contract.
struct SplitDecision {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};
SplitDecision best_split_exact(const Matrix& x, std::span<const double> y,
                               std::span<const std::int64_t> rows, int min_child_samples);

// ---------------------------------------------------------------------------
// Extremely randomized trees

struct EtParams {
  int n_trees = 120;
  int min_samples_split = 2;
  std::uint64_t seed = 0;
};

struct EtModel {
  EtParams params;
  std::vector<RegressionTree> trees;  // prediction is their mean
};

// Full-sample trees (no bootstrap); each node draws sqrt(F) candidate
// features (min 1) and one uniform threshold per candidate in the feature's
// observed range, keeping the best candidate by variance reduction. Trees are
// grown to purity (unbounded depth).
EtModel fit_extra_trees(const Matrix& x, std::span<const double> y, const EtParams& params);
std::vector<double> predict(const EtModel& model, const Matrix& x);

// ---------------------------------------------------------------------------
// Direct multi-step wrapper

enum class BaseLearner { kLinear, kGbm, kExtraTrees };

std::string base_learner_name(BaseLearner kind);
BaseLearner base_learner_from_name(const std::string& name);

struct BaseLearnerConfig {
  BaseLearner kind = BaseLearner::kGbm;
  GbmParams gbm;
  EtParams et;
};

using AnyModel = std::variant<LinearModel, GbmModel, EtModel>;
std::vector<double> predict(const AnyModel& model, const Matrix& x);

AnyModel fit_base_learner(const Matrix& x, std::span<const double> y, const BaseLearnerConfig& config);

// One independent sub-model per horizon step.
struct DirectMultiStep {
  std::int64_t horizon = 24;
  std::vector<AnyModel> models;
};

// Rows of `features` are laid out sample-major, step-minor (the
// tabular_features convention); step h trains only on step-h rows.
DirectMultiStep fit_direct_multistep(const Matrix& features, std::span<const double> targets,
                                     std::int64_t horizon, const BaseLearnerConfig& config);
// Predictions in the same row layout as the input.
std::vector<double> predict(const DirectMultiStep& model, const Matrix& features);

// ---------------------------------------------------------------------------
// Grid search

struct ParamGrid {
  // insertion-ordered (key, candidate values)
  std::vector<std::pair<std::string, std::vector<double>>> axes;
};

struct GridSearchRow {
  std::map<std::string, double> params;
  double validation_nd = 0.0;
};

struct GridSearchResult {
  std::vector<GridSearchRow> table;
  std::size_t best_index = 0;

  const GridSearchRow& best() const { return table.at(best_index); }
};

// Exhaustive Cartesian evaluation; `evaluate` returns the validation ND of
// one configuration. Lowest ND wins; ties keep the earlier row.
GridSearchResult grid_search(const ParamGrid& grid,
                             const std::function<double(const std::map<std::string, double>&)>& evaluate);

// Applies a grid key ("num_leaves", "learning_rate", "min_child_samples",
// "n_estimators", "n_trees") to the matching learner parameter.
void apply_param(BaseLearnerConfig& config, const std::string& key, double value);

void write_grid_search_csv(const std::filesystem::path& path, const GridSearchResult& result);

// ---------------------------------------------------------------------------
// JSON serialization (model-type tag + fitted hyperparameters + tree dumps)

std::string model_to_json(const DirectMultiStep& model);
DirectMultiStep model_from_json(const std::string& text);
void save_model(const std::filesystem::path& path, const DirectMultiStep& model);
DirectMultiStep load_model(const std::filesystem::path& path);

std::string gbm_to_json(const GbmModel& model);
GbmModel gbm_from_json(const std::string& text);

}  // namespace gustcast::trees
