#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gustcast/metrics.hpp"
#include "oracles.hpp"

using namespace gustcast::eval;

namespace {

struct TTestCase {
  std::vector<double> a;
  std::vector<double> b;
  double p;  // reference p-value, precomputed at 50-digit precision
};

const std::vector<TTestCase> kTTestOracle = {
#include "ttest_oracle_table.inc"
};

}  // namespace

TEST(Nd, WorkedExamples) {
  std::vector<double> y{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(nd(y, y), 0.0);
  std::vector<double> yhat{2, 2, 2, 4};
  EXPECT_DOUBLE_EQ(nd(y, yhat), 0.2);  // 2/10
  // scale invariance
  std::vector<double> y2{3, 6, 9, 12}, yhat2{6, 6, 6, 12};
  EXPECT_NEAR(nd(y2, yhat2), 0.2, 1e-12);
  std::vector<double> zeros{0, 0};
  EXPECT_THROW(nd(zeros, zeros), std::invalid_argument);
  EXPECT_THROW(nd(y, zeros), std::invalid_argument);
}

TEST(Nrmse, WorkedExamples) {
  std::vector<double> y{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(nrmse(y, y), 0.0);
  std::vector<double> yhat{2, 2, 2, 4};
  EXPECT_NEAR(nrmse(y, yhat), std::sqrt(0.5) / 2.5, 1e-12);  // ~0.28284
  EXPECT_GE(nrmse(y, yhat), 0.0);
}

TEST(Metrics, AgreeWithNaiveOracleOnRandomPairs) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> dist(-5.0, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4 + rng() % 60;
    std::vector<double> y(n), yhat(n);
    for (auto& v : y) v = dist(rng);
    for (auto& v : yhat) v = dist(rng);
    const double denom_check = nd(y, yhat);
    EXPECT_NEAR(denom_check, oracle::nd_naive(y, yhat), 1e-9);
    EXPECT_NEAR(nrmse(y, yhat), oracle::nrmse_naive(y, yhat), 1e-9);
  }
}

TEST(Metrics, ScaleInvarianceProperty) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> dist(0.1, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 8 + rng() % 20;
    std::vector<double> y(n), yhat(n), ys(n), yhats(n);
    const double c = dist(rng) * 10.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = dist(rng);
      yhat[i] = dist(rng);
      ys[i] = c * y[i];
      yhats[i] = c * yhat[i];
    }
    EXPECT_NEAR(nd(ys, yhats), nd(y, yhat), 1e-12 * std::max(1.0, nd(y, yhat)));
    EXPECT_NEAR(nrmse(ys, yhats), nrmse(y, yhat), 1e-12 * std::max(1.0, nrmse(y, yhat)));
  }
}

TEST(Metrics, NdZeroIffExactMatch) {
  std::vector<double> y{0.5, 1.5, -2.0};
  std::vector<double> almost{0.5, 1.5, -2.0 + 1e-12};
  EXPECT_EQ(nd(y, y), 0.0);
  EXPECT_GT(nd(y, almost), 0.0);
}

TEST(PerBatchReport, AveragesAndExclusion) {
  // two batches of 3 steps: one perfect, one with ND 0.4
  std::vector<double> targets{1, 2, 2,  1, 2, 2};
  std::vector<double> preds{1, 2, 2,  1, 2, 4};  // |e|=2, sum|y|=5 -> 0.4
  auto report = per_batch_report(preds, targets, 2, 3);
  ASSERT_EQ(report.per_batch_nd.size(), 2u);
  EXPECT_DOUBLE_EQ(report.per_batch_nd[0], 0.0);
  EXPECT_DOUBLE_EQ(report.per_batch_nd[1], 0.4);
  EXPECT_DOUBLE_EQ(report.avg_nd, 0.2);

  // identical batches: average equals the single-batch value
  std::vector<double> t2{1, 2, 2, 1, 2, 2};
  std::vector<double> p2{2, 2, 2, 2, 2, 2};
  auto r2 = per_batch_report(p2, t2, 2, 3);
  EXPECT_DOUBLE_EQ(r2.avg_nd, r2.per_batch_nd[0]);

  // all-zero-target batch is excluded and counted
  std::vector<double> t3{0, 0, 0, 1, 2, 2};
  std::vector<double> p3{1, 1, 1, 1, 2, 2};
  auto r3 = per_batch_report(p3, t3, 2, 3);
  EXPECT_EQ(r3.excluded_batches, 1);
  ASSERT_EQ(r3.per_batch_nd.size(), 1u);
  EXPECT_EQ(r3.batch_indices[0], 1);
}

TEST(StudentT, CdfAtZeroIsExactlyHalf) {
  for (double nu : {1.0, 2.0, 3.0, 5.0, 10.0, 30.0, 119.0})
    EXPECT_EQ(student_t_cdf(0.0, nu), 0.5);
}

TEST(StudentT, CdfMonotoneInT) {
  for (double nu : {1.0, 3.0, 7.0, 25.0}) {
    double prev = 0.0;
    for (double t = -6.0; t <= 6.0; t += 0.25) {
      const double c = student_t_cdf(t, nu);
      EXPECT_GT(c, prev);
      prev = c;
    }
  }
}

TEST(StudentT, MatchesQuadratureOracle) {
  for (double nu : {1.0, 2.0, 4.0, 9.0, 29.0, 119.0})
    for (double t : {-4.2, -1.7320508, -0.3, 0.4, 1.1, 2.9, 5.5})
      EXPECT_NEAR(student_t_cdf(t, nu), oracle::student_t_cdf_simpson(t, nu), 1e-10);
}

TEST(PairedTTest, WorkedExample) {
  std::vector<double> a{1, 2, 3, 4}, b{2, 2, 4, 4};
  const auto r = paired_t_test(a, b);
  EXPECT_NEAR(r.t_statistic, -1.7320508, 1e-7);
  EXPECT_DOUBLE_EQ(r.degrees_of_freedom, 3.0);
  EXPECT_NEAR(r.p_value, 0.18169, 1e-5);
  EXPECT_FALSE(r.degenerate);
}

TEST(PairedTTest, FrozenHighPrecisionOracle) {
  ASSERT_EQ(kTTestOracle.size(), 25u);
  for (const auto& c : kTTestOracle) {
    const auto r = paired_t_test(c.a, c.b);
    ASSERT_FALSE(r.degenerate);
    EXPECT_NEAR(r.p_value, c.p, 1e-6);
  }
}

TEST(PairedTTest, SwapSymmetry) {
  std::vector<double> a{0.3, 1.9, -0.5, 2.2, 0.0, 1.1};
  std::vector<double> b{0.1, 2.4, -0.2, 1.8, 0.4, 0.9};
  const auto r1 = paired_t_test(a, b);
  const auto r2 = paired_t_test(b, a);
  EXPECT_NEAR(r1.t_statistic, -r2.t_statistic, 1e-12);
  EXPECT_NEAR(r1.p_value, r2.p_value, 1e-12);
}

TEST(PairedTTest, DegenerateOnZeroVariance) {
  std::vector<double> a{1, 2, 3}, b{1, 2, 3};
  const auto r = paired_t_test(a, b);
  EXPECT_TRUE(r.degenerate);
  EXPECT_TRUE(std::isnan(r.p_value));
  EXPECT_FALSE(significant_at_95(r));
  // constant nonzero difference is degenerate too
  std::vector<double> c{2, 3, 4};
  EXPECT_TRUE(paired_t_test(c, a).degenerate);
  std::vector<double> one{1.0};
  EXPECT_THROW(paired_t_test(one, one), std::invalid_argument);
}

TEST(PairedTTest, SignificanceRule) {
  PairedTTestResult r;
  r.p_value = 0.049;
  EXPECT_TRUE(significant_at_95(r));
  r.p_value = 0.05;
  EXPECT_FALSE(significant_at_95(r));
  r.degenerate = true;
  r.p_value = 0.01;
  EXPECT_FALSE(significant_at_95(r));
}

TEST(PrecisionRecallF1, WorkedExamples) {
  std::vector<std::uint8_t> labels{1, 1, 0, 1, 0};
  auto perfect = precision_recall_f1(labels, labels);
  EXPECT_DOUBLE_EQ(perfect.precision, 1.0);
  EXPECT_DOUBLE_EQ(perfect.recall, 1.0);
  EXPECT_DOUBLE_EQ(perfect.f1, 1.0);

  // no positives predicted while positives exist
  std::vector<std::uint8_t> none{0, 0, 0, 0, 0};
  auto degenerate = precision_recall_f1(labels, none);
  EXPECT_FALSE(degenerate.precision_defined);
  EXPECT_DOUBLE_EQ(degenerate.recall, 0.0);
  EXPECT_DOUBLE_EQ(degenerate.f1, 0.0);

  // TP=2, FP=1, FN=1 -> P = R = F1 = 2/3
  std::vector<std::uint8_t> truth{1, 1, 1, 0, 0};
  std::vector<std::uint8_t> pred{1, 1, 0, 1, 0};
  auto s = precision_recall_f1(truth, pred);
  EXPECT_NEAR(s.precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.recall, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.f1, 2.0 / 3.0, 1e-15);
}

TEST(PrecisionRecallF1, ClassWeightsBalanceCounts) {
  std::vector<std::uint8_t> labels{1, 0, 0, 0, 0};
  std::vector<std::uint8_t> pred{1, 1, 0, 0, 0};
  std::vector<double> weights{2.5, 0.625, 0.625, 0.625, 0.625};  // total/(2*count_c)
  auto s = precision_recall_f1(labels, pred, weights);
  // weighted TP = 2.5, FP = 0.625
  EXPECT_NEAR(s.precision, 2.5 / 3.125, 1e-15);
  EXPECT_DOUBLE_EQ(s.recall, 1.0);
}

TEST(MetricsCsv, RoundTripReproducesAverages) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "gustcast_metrics_test.csv";
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> dist(0.05, 1.0);
  MetricReport report;
  report.model = "gbm";
  report.mode = "individual";
  report.farm_id = 3;
  for (int b = 0; b < 17; ++b) {
    report.batch_indices.push_back(b);
    report.per_batch_nd.push_back(dist(rng));
    report.per_batch_nrmse.push_back(dist(rng));
  }
  double snd = 0, snr = 0;
  for (double v : report.per_batch_nd) snd += v;
  for (double v : report.per_batch_nrmse) snr += v;
  report.avg_nd = snd / 17;
  report.avg_nrmse = snr / 17;

  write_metrics_csv(path, {report});
  const auto restored = read_metrics_csv(path);
  ASSERT_EQ(restored.size(), 1u);
  EXPECT_EQ(restored[0].farm_id, 3);
  EXPECT_EQ(restored[0].model, "gbm");
  ASSERT_EQ(restored[0].per_batch_nd.size(), 17u);
  // shortest round-trip formatting: regenerated averages match exactly
  EXPECT_DOUBLE_EQ(restored[0].avg_nd, report.avg_nd);
  EXPECT_DOUBLE_EQ(restored[0].avg_nrmse, report.avg_nrmse);
  for (std::size_t i = 0; i < 17; ++i)
    EXPECT_DOUBLE_EQ(restored[0].per_batch_nd[i], report.per_batch_nd[i]);
  fs::remove(path);
}
