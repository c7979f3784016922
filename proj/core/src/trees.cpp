#include "gustcast/trees.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace gustcast::trees {

using nlohmann::json;

double RegressionTree::predict_row(const double* row) const {
  if (nodes.empty()) throw std::runtime_error("tree: empty");
  std::int32_t i = 0;
  while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
    const TreeNode& n = nodes[static_cast<std::size_t>(i)];
    i = row[n.feature] < n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(i)].value;
}

std::int64_t RegressionTree::leaf_count() const {
  std::int64_t leaves = 0;
  for (const TreeNode& n : nodes) leaves += n.is_leaf() ? 1 : 0;
  return leaves;
}

// ---------------------------------------------------------------------------
// Linear least squares

LinearModel fit_linear(const Matrix& x, std::span<const double> y) {
  if (x.rows < 1) throw std::invalid_argument("fit_linear: empty input");
  if (static_cast<std::int64_t>(y.size()) != x.rows)
    throw std::invalid_argument("fit_linear: target length mismatch");
  const std::int64_t n = x.rows, f = x.cols;
  const std::int64_t p = f + 1;  // intercept column

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  RowMajorMap xm(x.data.data(), n, f);
  Eigen::Map<const Eigen::VectorXd> ym(y.data(), n);

  gram.topLeftCorner(f, f) = xm.transpose() * xm;
  gram.topRightCorner(f, 1) = xm.colwise().sum().transpose();
  gram.bottomLeftCorner(1, f) = xm.colwise().sum();
  gram(f, f) = static_cast<double>(n);
  rhs.head(f) = xm.transpose() * ym;
  rhs(f) = ym.sum();

  const auto ldlt = gram.ldlt();
  Eigen::VectorXd beta = ldlt.solve(rhs);
  const Eigen::VectorXd pivots = ldlt.vectorD().cwiseAbs();
  const bool deficient = n < p || !beta.allFinite() ||
                         pivots.minCoeff() <= 1e-12 * pivots.maxCoeff() ||
                         (gram * beta - rhs).norm() > 1e-6 * std::max(1.0, rhs.norm());
  if (deficient) {
    // ridge jitter, scaled to the Gram's magnitude so it actually regularizes
    Eigen::MatrixXd jittered = gram;
    jittered.diagonal().array() += 1e-8 * std::max(1.0, gram.diagonal().mean());
    beta = jittered.ldlt().solve(rhs);
  }

  LinearModel model;
  model.coefficients.assign(beta.data(), beta.data() + f);
  model.intercept = beta(f);
  return model;
}

std::vector<double> predict(const LinearModel& model, const Matrix& x) {
  if (static_cast<std::int64_t>(model.coefficients.size()) != x.cols)
    throw std::invalid_argument("predict: linear model expects " +
                                std::to_string(model.coefficients.size()) + " features, got " +
                                std::to_string(x.cols));
  std::vector<double> out(static_cast<std::size_t>(x.rows));
  for (std::int64_t r = 0; r < x.rows; ++r) {
    const double* row = x.row(r);
    double acc = model.intercept;
    for (std::int64_t c = 0; c < x.cols; ++c) acc += model.coefficients[static_cast<std::size_t>(c)] * row[c];
    out[static_cast<std::size_t>(r)] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split search

namespace {

// Threshold scan over one feature's values in (x, y)-sorted order. The (x, y)
// ordering pins the floating-point summation order, so split choices cannot
// drift under training-row permutations.
void scan_sorted_feature(const double* xs, const double* ys, std::int64_t n, int feature,
                         int min_child_samples, SplitDecision& best) {
  if (n < 2 * static_cast<std::int64_t>(min_child_samples)) return;
  if (xs[0] == xs[n - 1]) return;  // constant feature
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) total += ys[i];
  double left_sum = 0.0;
  for (std::int64_t i = 0; i < min_child_samples - 1 && i < n; ++i) left_sum += ys[i];
  const double parent = total * total / static_cast<double>(n);
  for (std::int64_t i = min_child_samples; i <= n - min_child_samples; ++i) {
    left_sum += ys[i - 1];
    if (xs[i - 1] == xs[i]) continue;  // no threshold separates equal values
    const double right_sum = total - left_sum;
    const double nl = static_cast<double>(i);
    const double nr = static_cast<double>(n - i);
    const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr - parent;
    if (gain > best.gain) {  // strict: ties keep the lowest feature/threshold
      best.found = true;
      best.feature = feature;
      best.threshold = 0.5 * (xs[i - 1] + xs[i]);
      best.gain = gain;
    }
  }
}

}  // namespace

SplitDecision best_split_exact(const Matrix& x, std::span<const double> y,
                               std::span<const std::int64_t> rows, int min_child_samples) {
  SplitDecision best;
  const std::int64_t n = static_cast<std::int64_t>(rows.size());
  if (n < 2 * static_cast<std::int64_t>(min_child_samples)) return best;

  std::vector<std::pair<double, double>> sorted(static_cast<std::size_t>(n));  // (x, y)
  std::vector<double> xs(static_cast<std::size_t>(n)), ys(static_cast<std::size_t>(n));
  for (int f = 0; f < x.cols; ++f) {
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t r = rows[static_cast<std::size_t>(i)];
      sorted[static_cast<std::size_t>(i)] = {x.at(r, f), y[static_cast<std::size_t>(r)]};
    }
    std::sort(sorted.begin(), sorted.end());
    for (std::int64_t i = 0; i < n; ++i) {
      xs[static_cast<std::size_t>(i)] = sorted[static_cast<std::size_t>(i)].first;
      ys[static_cast<std::size_t>(i)] = sorted[static_cast<std::size_t>(i)].second;
    }
    scan_sorted_feature(xs.data(), ys.data(), n, f, min_child_samples, best);
  }
  return best;
}

namespace {

double mean_of(std::span<const double> y, std::span<const std::int64_t> rows) {
  double acc = 0.0;
  for (std::int64_t r : rows) acc += y[static_cast<std::size_t>(r)];
  return acc / static_cast<double>(rows.size());
}

// Every open leaf keeps per-feature row lists in (x, y)-sorted order; a split
// partitions them order-preservingly, so no re-sorting is ever needed and the
// split choices are bit-identical to a fresh best_split_exact on the leaf.
struct SortedLeaf {
  std::int32_t node = -1;
  std::vector<std::vector<std::int32_t>> order;  // [feature][position] -> row
  SplitDecision split;

  std::int64_t count() const { return order.empty() ? 0 : static_cast<std::int64_t>(order[0].size()); }
};

class LeafwiseGrower {
 public:
  // columns: feature-major copy of the training matrix (cache-friendly gathers)
  // base_order: per feature, rows sorted by x (ties in input order); shared
  // across stages since x never changes
  LeafwiseGrower(const Matrix& x, const std::vector<double>& columns,
                 const std::vector<std::vector<std::int32_t>>& base_order, std::span<const double> y,
                 const GbmParams& params)
      : x_(x), columns_(columns), base_order_(base_order), y_(y), params_(params) {
    xs_.resize(static_cast<std::size_t>(x.rows));
    ys_.resize(static_cast<std::size_t>(x.rows));
  }

  RegressionTree grow() {
    RegressionTree tree;
    SortedLeaf root;
    root.node = 0;
    root.order = base_order_;
    // canonical (x, y) order: equal-x runs re-sorted by the current residuals
    // so split arithmetic cannot depend on the training-row order
    for (int f = 0; f < x_.cols; ++f) {
      auto& ord = root.order[static_cast<std::size_t>(f)];
      const double* col = column(f);
      std::size_t run = 0;
      for (std::size_t i = 1; i <= ord.size(); ++i) {
        if (i == ord.size() || col[ord[i]] != col[ord[run]]) {
          if (i - run > 1)
            std::sort(ord.begin() + static_cast<std::ptrdiff_t>(run), ord.begin() + static_cast<std::ptrdiff_t>(i),
                      [&](std::int32_t a, std::int32_t b) {
                        return y_[static_cast<std::size_t>(a)] < y_[static_cast<std::size_t>(b)];
                      });
          run = i;
        }
      }
    }
    tree.nodes.push_back(TreeNode{-1, 0.0, -1, -1, leaf_mean(root)});
    evaluate(root);

    std::vector<SortedLeaf> open;
    open.push_back(std::move(root));
    std::int64_t leaves = 1;

    while (leaves < params_.num_leaves) {
      // highest-gain splittable leaf; earlier leaf wins ties
      std::size_t pick = open.size();
      for (std::size_t i = 0; i < open.size(); ++i) {
        if (!open[i].split.found) continue;
        if (pick == open.size() || open[i].split.gain > open[pick].split.gain) pick = i;
      }
      if (pick == open.size()) break;

      SortedLeaf work = std::move(open[pick]);
      open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));

      SortedLeaf left, right;
      left.order.assign(static_cast<std::size_t>(x_.cols), {});
      right.order.assign(static_cast<std::size_t>(x_.cols), {});
      const double* split_col = column(work.split.feature);
      for (int f = 0; f < x_.cols; ++f) {
        for (std::int32_t r : work.order[static_cast<std::size_t>(f)])
          (split_col[r] < work.split.threshold ? left : right)
              .order[static_cast<std::size_t>(f)]
              .push_back(r);
      }

      left.node = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.push_back(TreeNode{-1, 0.0, -1, -1, leaf_mean(left)});
      right.node = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.push_back(TreeNode{-1, 0.0, -1, -1, leaf_mean(right)});

      TreeNode& parent = tree.nodes[static_cast<std::size_t>(work.node)];
      parent.feature = work.split.feature;
      parent.threshold = work.split.threshold;
      parent.left = left.node;
      parent.right = right.node;
      parent.value = 0.0;
      ++leaves;

      evaluate(left);
      evaluate(right);
      open.push_back(std::move(left));
      open.push_back(std::move(right));
    }
    return tree;
  }

 private:
  double leaf_mean(const SortedLeaf& leaf) const {
    double acc = 0.0;
    for (std::int32_t r : leaf.order[0]) acc += y_[static_cast<std::size_t>(r)];
    return acc / static_cast<double>(leaf.count());
  }

  void evaluate(SortedLeaf& leaf) {
    leaf.split = SplitDecision{};
    const std::int64_t n = leaf.count();
    if (n < 2 * static_cast<std::int64_t>(params_.min_child_samples)) return;
    for (int f = 0; f < x_.cols; ++f) {
      const auto& ord = leaf.order[static_cast<std::size_t>(f)];
      const double* col = column(f);
      if (col[ord.front()] == col[ord.back()]) continue;  // constant in this leaf
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int32_t r = ord[static_cast<std::size_t>(i)];
        xs_[static_cast<std::size_t>(i)] = col[r];
        ys_[static_cast<std::size_t>(i)] = y_[static_cast<std::size_t>(r)];
      }
      scan_sorted_feature(xs_.data(), ys_.data(), n, f, params_.min_child_samples, leaf.split);
    }
  }

  const double* column(int f) const { return columns_.data() + static_cast<std::int64_t>(f) * x_.rows; }

  const Matrix& x_;
  const std::vector<double>& columns_;
  const std::vector<std::vector<std::int32_t>>& base_order_;
  std::span<const double> y_;
  const GbmParams& params_;
  std::vector<double> xs_, ys_;
};

}  // namespace

GbmModel fit_gbm(const Matrix& x, std::span<const double> y, const GbmParams& params) {
  if (x.rows < 2 * static_cast<std::int64_t>(params.min_child_samples))
    throw std::invalid_argument("fit_gbm: " + std::to_string(x.rows) + " rows cannot satisfy min_child_samples " +
                                std::to_string(params.min_child_samples));
  if (static_cast<std::int64_t>(y.size()) != x.rows)
    throw std::invalid_argument("fit_gbm: target length mismatch");
  if (params.num_leaves < 2) throw std::invalid_argument("fit_gbm: num_leaves must be >= 2");

  GbmModel model;
  model.params = params;
  double base = 0.0;
  for (double v : y) base += v;
  model.base_score = base / static_cast<double>(y.size());

  std::vector<double> residual(y.begin(), y.end());
  for (double& r : residual) r -= model.base_score;

  std::vector<double> columns(static_cast<std::size_t>(x.rows * x.cols));
  for (std::int64_t r = 0; r < x.rows; ++r)
    for (std::int64_t f = 0; f < x.cols; ++f)
      columns[static_cast<std::size_t>(f * x.rows + r)] = x.at(r, f);

  std::vector<std::vector<std::int32_t>> base_order(static_cast<std::size_t>(x.cols));
  for (std::int64_t f = 0; f < x.cols; ++f) {
    auto& ord = base_order[static_cast<std::size_t>(f)];
    ord.resize(static_cast<std::size_t>(x.rows));
    std::iota(ord.begin(), ord.end(), 0);
    const double* col = columns.data() + f * x.rows;
    std::stable_sort(ord.begin(), ord.end(),
                     [col](std::int32_t a, std::int32_t b) { return col[a] < col[b]; });
  }

  for (int stage = 0; stage < params.n_estimators; ++stage) {
    RegressionTree tree = LeafwiseGrower(x, columns, base_order, residual, params).grow();
    for (std::int64_t r = 0; r < x.rows; ++r)
      residual[static_cast<std::size_t>(r)] -= params.learning_rate * tree.predict_row(x.row(r));
    model.trees.push_back(std::move(tree));
  }
  return model;
}

std::vector<double> predict(const GbmModel& model, const Matrix& x) {
  std::vector<double> out(static_cast<std::size_t>(x.rows));
  for (std::int64_t r = 0; r < x.rows; ++r) {
    const double* row = x.row(r);
    double acc = model.base_score;
    for (const RegressionTree& tree : model.trees) acc += model.params.learning_rate * tree.predict_row(row);
    out[static_cast<std::size_t>(r)] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Extra trees

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct EtGrower {
  const Matrix& x;
  std::span<const double> y;
  int min_samples_split;
  int candidate_count;
  std::mt19937_64 rng;
  RegressionTree tree;

  std::int32_t grow(std::vector<std::int64_t> rows) {
    const auto id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.push_back(TreeNode{-1, 0.0, -1, -1, mean_of(y, rows)});

    if (static_cast<int>(rows.size()) < min_samples_split) return id;
    const auto [ymin, ymax] = std::minmax_element(
        rows.begin(), rows.end(),
        [&](std::int64_t a, std::int64_t b) { return y[static_cast<std::size_t>(a)] < y[static_cast<std::size_t>(b)]; });
    if (y[static_cast<std::size_t>(*ymin)] == y[static_cast<std::size_t>(*ymax)]) return id;  // pure leaf

    // sample distinct candidate features
    std::vector<int> features(static_cast<std::size_t>(x.cols));
    std::iota(features.begin(), features.end(), 0);
    const int k = std::min<int>(candidate_count, static_cast<int>(x.cols));
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<int> pick(i, static_cast<int>(x.cols) - 1);
      std::swap(features[static_cast<std::size_t>(i)], features[static_cast<std::size_t>(pick(rng))]);
    }

    double total = 0.0;
    for (std::int64_t r : rows) total += y[static_cast<std::size_t>(r)];
    const double n = static_cast<double>(rows.size());

    SplitDecision best;
    for (int i = 0; i < k; ++i) {
      const int f = features[static_cast<std::size_t>(i)];
      double lo = x.at(rows.front(), f), hi = lo;
      for (std::int64_t r : rows) {
        lo = std::min(lo, x.at(r, f));
        hi = std::max(hi, x.at(r, f));
      }
      if (lo == hi) continue;  // constant in this node
      std::uniform_real_distribution<double> dist(lo, hi);
      const double threshold = dist(rng);
      double left_sum = 0.0;
      std::int64_t left_n = 0;
      for (std::int64_t r : rows) {
        if (x.at(r, f) < threshold) {
          left_sum += y[static_cast<std::size_t>(r)];
          ++left_n;
        }
      }
      if (left_n == 0 || left_n == static_cast<std::int64_t>(rows.size())) continue;
      const double right_sum = total - left_sum;
      const double nl = static_cast<double>(left_n);
      const double nr = n - nl;
      const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / n;
      if (!best.found || gain > best.gain) {
        best.found = true;
        best.feature = f;
        best.threshold = threshold;
        best.gain = gain;
      }
    }
    if (!best.found) return id;

    std::vector<std::int64_t> left_rows, right_rows;
    for (std::int64_t r : rows) (x.at(r, best.feature) < best.threshold ? left_rows : right_rows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    const std::int32_t left_id = grow(std::move(left_rows));
    const std::int32_t right_id = grow(std::move(right_rows));
    TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = left_id;
    node.right = right_id;
    node.value = 0.0;
    return id;
  }
};

}  // namespace

EtModel fit_extra_trees(const Matrix& x, std::span<const double> y, const EtParams& params) {
  if (x.rows < 2) throw std::invalid_argument("fit_extra_trees: needs at least 2 rows");
  if (static_cast<std::int64_t>(y.size()) != x.rows)
    throw std::invalid_argument("fit_extra_trees: target length mismatch");
  if (params.n_trees < 1) throw std::invalid_argument("fit_extra_trees: n_trees must be positive");

  EtModel model;
  model.params = params;
  const int candidates =
      std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(x.cols)))));
  std::vector<std::int64_t> all_rows(static_cast<std::size_t>(x.rows));
  std::iota(all_rows.begin(), all_rows.end(), 0);

  for (int t = 0; t < params.n_trees; ++t) {
    EtGrower grower{x, y, params.min_samples_split, candidates,
                    std::mt19937_64(mix_seed(params.seed, static_cast<std::uint64_t>(t))), {}};
    grower.grow(all_rows);
    model.trees.push_back(std::move(grower.tree));
  }
  return model;
}

std::vector<double> predict(const EtModel& model, const Matrix& x) {
  std::vector<double> out(static_cast<std::size_t>(x.rows), 0.0);
  for (std::int64_t r = 0; r < x.rows; ++r) {
    const double* row = x.row(r);
    double acc = 0.0;
    for (const RegressionTree& tree : model.trees) acc += tree.predict_row(row);
    out[static_cast<std::size_t>(r)] = acc / static_cast<double>(model.trees.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Direct multi-step

std::string base_learner_name(BaseLearner kind) {
  switch (kind) {
    case BaseLearner::kLinear: return "lr";
    case BaseLearner::kGbm: return "gbm";
    case BaseLearner::kExtraTrees: return "et";
  }
  throw std::invalid_argument("base_learner_name: bad enum");
}

BaseLearner base_learner_from_name(const std::string& name) {
  if (name == "lr") return BaseLearner::kLinear;
  if (name == "gbm") return BaseLearner::kGbm;
  if (name == "et") return BaseLearner::kExtraTrees;
  throw std::invalid_argument("unknown base learner '" + name + "'");
}

std::vector<double> predict(const AnyModel& model, const Matrix& x) {
  return std::visit([&](const auto& m) { return predict(m, x); }, model);
}

AnyModel fit_base_learner(const Matrix& x, std::span<const double> y, const BaseLearnerConfig& config) {
  switch (config.kind) {
    case BaseLearner::kLinear: return fit_linear(x, y);
    case BaseLearner::kGbm: return fit_gbm(x, y, config.gbm);
    case BaseLearner::kExtraTrees: return fit_extra_trees(x, y, config.et);
  }
  throw std::invalid_argument("fit_base_learner: bad enum");
}

DirectMultiStep fit_direct_multistep(const Matrix& features, std::span<const double> targets,
                                     std::int64_t horizon, const BaseLearnerConfig& config) {
  if (horizon < 1) throw std::invalid_argument("fit_direct_multistep: horizon must be positive");
  if (features.rows % horizon != 0)
    throw std::invalid_argument("fit_direct_multistep: rows not divisible by horizon");
  if (static_cast<std::int64_t>(targets.size()) != features.rows)
    throw std::invalid_argument("fit_direct_multistep: target length mismatch");
  const std::int64_t samples = features.rows / horizon;
  if (samples < 1) throw std::invalid_argument("fit_direct_multistep: missing step data");

  DirectMultiStep out;
  out.horizon = horizon;
  out.models.reserve(static_cast<std::size_t>(horizon));
  std::vector<double> step_y(static_cast<std::size_t>(samples));
  for (std::int64_t h = 0; h < horizon; ++h) {
    std::vector<std::int64_t> rows(static_cast<std::size_t>(samples));
    for (std::int64_t i = 0; i < samples; ++i) rows[static_cast<std::size_t>(i)] = i * horizon + h;
    Matrix step_x = features.select_rows(rows);
    for (std::int64_t i = 0; i < samples; ++i)
      step_y[static_cast<std::size_t>(i)] = targets[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])];
    BaseLearnerConfig step_config = config;
    // decorrelate ET streams across steps while keeping runs reproducible
    step_config.et.seed = mix_seed(config.et.seed, 7000 + static_cast<std::uint64_t>(h));
    out.models.push_back(fit_base_learner(step_x, step_y, step_config));
  }
  return out;
}

std::vector<double> predict(const DirectMultiStep& model, const Matrix& features) {
  if (features.rows % model.horizon != 0)
    throw std::invalid_argument("predict: rows not divisible by horizon");
  const std::int64_t samples = features.rows / model.horizon;
  std::vector<double> out(static_cast<std::size_t>(features.rows), 0.0);
  for (std::int64_t h = 0; h < model.horizon; ++h) {
    std::vector<std::int64_t> rows(static_cast<std::size_t>(samples));
    for (std::int64_t i = 0; i < samples; ++i) rows[static_cast<std::size_t>(i)] = i * model.horizon + h;
    const Matrix step_x = features.select_rows(rows);
    const std::vector<double> step_pred = predict(model.models[static_cast<std::size_t>(h)], step_x);
    for (std::int64_t i = 0; i < samples; ++i)
      out[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])] = step_pred[static_cast<std::size_t>(i)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid search

GridSearchResult grid_search(const ParamGrid& grid,
                             const std::function<double(const std::map<std::string, double>&)>& evaluate) {
  if (grid.axes.empty()) throw std::invalid_argument("grid_search: empty grid");
  for (const auto& [key, values] : grid.axes)
    if (values.empty()) throw std::invalid_argument("grid_search: axis '" + key + "' has no values");

  GridSearchResult result;
  std::vector<std::size_t> cursor(grid.axes.size(), 0);
  while (true) {
    std::map<std::string, double> params;
    for (std::size_t a = 0; a < grid.axes.size(); ++a)
      params[grid.axes[a].first] = grid.axes[a].second[cursor[a]];
    result.table.push_back(GridSearchRow{params, evaluate(params)});

    // odometer: last axis fastest
    std::size_t a = grid.axes.size();
    while (a > 0) {
      --a;
      if (++cursor[a] < grid.axes[a].second.size()) break;
      cursor[a] = 0;
      if (a == 0) {
        for (std::size_t i = 1; i < result.table.size(); ++i)
          if (result.table[i].validation_nd < result.table[result.best_index].validation_nd)
            result.best_index = i;
        return result;
      }
    }
  }
}

void apply_param(BaseLearnerConfig& config, const std::string& key, double value) {
  if (key == "num_leaves") config.gbm.num_leaves = static_cast<int>(value);
  else if (key == "learning_rate") config.gbm.learning_rate = value;
  else if (key == "min_child_samples") config.gbm.min_child_samples = static_cast<int>(value);
  else if (key == "n_estimators") config.gbm.n_estimators = static_cast<int>(value);
  else if (key == "n_trees") config.et.n_trees = static_cast<int>(value);
  else if (key == "min_samples_split") config.et.min_samples_split = static_cast<int>(value);
  else throw std::invalid_argument("grid_search: unknown parameter '" + key + "'");
}

void write_grid_search_csv(const std::filesystem::path& path, const GridSearchResult& result) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  // header from the first row's keys (all rows share them)
  os << "validation_nd,best";
  for (const auto& [key, _] : result.table.front().params) os << ',' << key;
  os << '\n';
  for (std::size_t i = 0; i < result.table.size(); ++i) {
    os << result.table[i].validation_nd << ',' << (i == result.best_index ? 1 : 0);
    for (const auto& [_, value] : result.table[i].params) os << ',' << value;
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// JSON serialization

namespace {

json tree_to_json(const RegressionTree& tree) {
  json nodes = json::array();
  for (const TreeNode& n : tree.nodes)
    nodes.push_back(json{{"feature", n.feature},
                         {"threshold", n.threshold},
                         {"left", n.left},
                         {"right", n.right},
                         {"value", n.value}});
  return json{{"nodes", std::move(nodes)}};
}

RegressionTree tree_from_json(const json& j) {
  RegressionTree tree;
  for (const auto& jn : j.at("nodes"))
    tree.nodes.push_back(TreeNode{jn.at("feature").get<int>(), jn.at("threshold").get<double>(),
                                  jn.at("left").get<std::int32_t>(), jn.at("right").get<std::int32_t>(),
                                  jn.at("value").get<double>()});
  return tree;
}

json any_model_to_json(const AnyModel& model) {
  if (const auto* lin = std::get_if<LinearModel>(&model)) {
    return json{{"type", "linear"}, {"coefficients", lin->coefficients}, {"intercept", lin->intercept}};
  }
  if (const auto* gbm = std::get_if<GbmModel>(&model)) {
    json trees = json::array();
    for (const auto& t : gbm->trees) trees.push_back(tree_to_json(t));
    return json{{"type", "gbm"},
                {"params",
                 {{"n_estimators", gbm->params.n_estimators},
                  {"num_leaves", gbm->params.num_leaves},
                  {"learning_rate", gbm->params.learning_rate},
                  {"min_child_samples", gbm->params.min_child_samples}}},
                {"base_score", gbm->base_score},
                {"trees", std::move(trees)}};
  }
  const auto& et = std::get<EtModel>(model);
  json trees = json::array();
  for (const auto& t : et.trees) trees.push_back(tree_to_json(t));
  return json{{"type", "et"},
              {"params",
               {{"n_trees", et.params.n_trees},
                {"min_samples_split", et.params.min_samples_split},
                {"seed", et.params.seed}}},
              {"trees", std::move(trees)}};
}

AnyModel any_model_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "linear") {
    LinearModel m;
    m.coefficients = j.at("coefficients").get<std::vector<double>>();
    m.intercept = j.at("intercept").get<double>();
    return m;
  }
  if (type == "gbm") {
    GbmModel m;
    const auto& p = j.at("params");
    m.params.n_estimators = p.at("n_estimators").get<int>();
    m.params.num_leaves = p.at("num_leaves").get<int>();
    m.params.learning_rate = p.at("learning_rate").get<double>();
    m.params.min_child_samples = p.at("min_child_samples").get<int>();
    m.base_score = j.at("base_score").get<double>();
    for (const auto& jt : j.at("trees")) m.trees.push_back(tree_from_json(jt));
    return m;
  }
  if (type == "et") {
    EtModel m;
    const auto& p = j.at("params");
    m.params.n_trees = p.at("n_trees").get<int>();
    m.params.min_samples_split = p.at("min_samples_split").get<int>();
    m.params.seed = p.at("seed").get<std::uint64_t>();
    for (const auto& jt : j.at("trees")) m.trees.push_back(tree_from_json(jt));
    return m;
  }
  throw std::invalid_argument("model json: unknown type '" + type + "'");
}

}  // namespace

std::string model_to_json(const DirectMultiStep& model) {
  json models = json::array();
  for (const auto& m : model.models) models.push_back(any_model_to_json(m));
  return json{{"type", "direct_multistep"}, {"horizon", model.horizon}, {"models", std::move(models)}}
      .dump(2);
}

DirectMultiStep model_from_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.at("type").get<std::string>() != "direct_multistep")
    throw std::invalid_argument("model json: expected type 'direct_multistep'");
  DirectMultiStep model;
  model.horizon = j.at("horizon").get<std::int64_t>();
  for (const auto& jm : j.at("models")) model.models.push_back(any_model_from_json(jm));
  if (static_cast<std::int64_t>(model.models.size()) != model.horizon)
    throw std::invalid_argument("model json: model count does not match horizon");
  return model;
}

void save_model(const std::filesystem::path& path, const DirectMultiStep& model) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << model_to_json(model) << '\n';
}

DirectMultiStep load_model(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return model_from_json(text);
}

std::string gbm_to_json(const GbmModel& model) { return any_model_to_json(AnyModel{model}).dump(2); }

GbmModel gbm_from_json(const std::string& text) {
  return std::get<GbmModel>(any_model_from_json(json::parse(text)));
}

}  // namespace gustcast::trees
