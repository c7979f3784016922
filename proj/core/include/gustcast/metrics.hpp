#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gustcast::eval {

// Normalized deviation: sum|yhat - y| / sum|y|. Throws when sum|y| == 0.
double nd(std::span<const double> y, std::span<const double> yhat);

// RMSE / mean|y|. Throws when mean|y| == 0.
double nrmse(std::span<const double> y, std::span<const double> yhat);

// Metrics per 24-step test batch plus their averages. Batches whose targets
// are all zero cannot be scored and are excluded (counted).
struct MetricReport {
  std::string model;
  std::string mode;  // "individual" | "global"
  int farm_id = -1;
  std::vector<std::int64_t> batch_indices;  // surviving batches
  std::vector<double> per_batch_nd;
  std::vector<double> per_batch_nrmse;
  double avg_nd = 0.0;
  double avg_nrmse = 0.0;
  std::int64_t excluded_batches = 0;
};

// predictions/targets are [batches, horizon] row-major.
MetricReport per_batch_report(std::span<const double> predictions, std::span<const double> targets,
                              std::int64_t batches, std::int64_t horizon);

// Regularized incomplete beta I_x(a, b) via the standard continued fraction,
// driven to ~1e-14 relative accuracy.
double regularized_incomplete_beta(double a, double b, double x);

// Student-t CDF with nu degrees of freedom; F_t(0; nu) == 0.5 exactly.
double student_t_cdf(double t, double nu);

struct PairedTTestResult {
  double t_statistic = 0.0;
  double degrees_of_freedom = 0.0;
  double p_value = 1.0;
  double mean_difference = 0.0;
  std::int64_t n = 0;
  bool degenerate = false;  // zero-variance differences; p undefined
};

// Two-sided paired t-test on d = a - b with sample (n-1) standard deviation.
PairedTTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

inline bool significant_at_95(const PairedTTestResult& r) { return !r.degenerate && r.p_value < 0.05; }

struct ClassificationScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_defined = true;  // false when no positives were predicted
  bool recall_defined = true;     // false when no positives exist
};

// Standard weighted precision/recall/F1; undefined ratios are reported as 0
// with the corresponding flag cleared. Weights default to 1 per instance.
ClassificationScores precision_recall_f1(std::span<const std::uint8_t> labels,
                                         std::span<const std::uint8_t> predictions,
                                         std::span<const double> weights = {});

// Metrics CSV: "farm,model,mode,batch_index,nd,nrmse", one row per surviving
// test batch.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricReport>& reports);
std::vector<MetricReport> read_metrics_csv(const std::filesystem::path& path);

}  // namespace gustcast::eval
