#include "gustcast/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include "gustcast/dataio.hpp"

namespace gustcast::eval {

double nd(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size())
    throw std::invalid_argument("nd: length mismatch " + std::to_string(y.size()) + " vs " +
                                std::to_string(yhat.size()));
  if (y.empty()) throw std::invalid_argument("nd: empty inputs");
  double err = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    err += std::abs(yhat[i] - y[i]);
    denom += std::abs(y[i]);
  }
  if (denom == 0.0) throw std::invalid_argument("nd: undefined for all-zero targets");
  return err / denom;
}

double nrmse(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size())
    throw std::invalid_argument("nrmse: length mismatch " + std::to_string(y.size()) + " vs " +
                                std::to_string(yhat.size()));
  if (y.empty()) throw std::invalid_argument("nrmse: empty inputs");
  const double n = static_cast<double>(y.size());
  double sq = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = yhat[i] - y[i];
    sq += d * d;
    denom += std::abs(y[i]);
  }
  if (denom == 0.0) throw std::invalid_argument("nrmse: undefined for all-zero targets");
  return std::sqrt(sq / n) / (denom / n);
}

MetricReport per_batch_report(std::span<const double> predictions, std::span<const double> targets,
                              std::int64_t batches, std::int64_t horizon) {
  const std::size_t expect = static_cast<std::size_t>(batches * horizon);
  if (predictions.size() != expect || targets.size() != expect)
    throw std::invalid_argument("per_batch_report: arrays do not match batches x horizon");
  MetricReport report;
  for (std::int64_t b = 0; b < batches; ++b) {
    const auto y = targets.subspan(static_cast<std::size_t>(b * horizon), static_cast<std::size_t>(horizon));
    const auto yhat =
        predictions.subspan(static_cast<std::size_t>(b * horizon), static_cast<std::size_t>(horizon));
    bool all_zero = true;
    for (double v : y)
      if (v != 0.0) { all_zero = false; break; }
    if (all_zero) {
      ++report.excluded_batches;
      continue;
    }
    report.batch_indices.push_back(b);
    report.per_batch_nd.push_back(nd(y, yhat));
    report.per_batch_nrmse.push_back(nrmse(y, yhat));
  }
  if (report.per_batch_nd.empty())
    throw std::invalid_argument("per_batch_report: every batch had all-zero targets");
  double snd = 0.0, snr = 0.0;
  for (double v : report.per_batch_nd) snd += v;
  for (double v : report.per_batch_nrmse) snr += v;
  report.avg_nd = snd / static_cast<double>(report.per_batch_nd.size());
  report.avg_nrmse = snr / static_cast<double>(report.per_batch_nrmse.size());
  return report;
}

namespace {

// Continued fraction for the incomplete beta (Lentz's algorithm).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw std::runtime_error("betacf: continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("incomplete beta: a,b must be positive");
  if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete beta: x must lie in [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double nu) {
  if (nu <= 0.0) throw std::invalid_argument("student_t_cdf: nu must be positive");
  if (t == 0.0) return 0.5;
  const double x = nu / (nu + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(nu / 2.0, 0.5, x);
  return t > 0.0 ? 1.0 - tail : tail;
}

PairedTTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired_t_test: length mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: needs at least 2 pairs");
  const std::int64_t n = static_cast<std::int64_t>(a.size());
  double mean_d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean_d += a[i] - b[i];
  mean_d /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dev = (a[i] - b[i]) - mean_d;
    ss += dev * dev;
  }
  PairedTTestResult r;
  r.n = n;
  r.degrees_of_freedom = static_cast<double>(n - 1);
  r.mean_difference = mean_d;
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    r.degenerate = true;
    r.t_statistic = 0.0;
    r.p_value = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.t_statistic = mean_d / (sd / std::sqrt(static_cast<double>(n)));
  r.p_value = 2.0 * (1.0 - student_t_cdf(std::abs(r.t_statistic), r.degrees_of_freedom));
  return r;
}

ClassificationScores precision_recall_f1(std::span<const std::uint8_t> labels,
                                         std::span<const std::uint8_t> predictions,
                                         std::span<const double> weights) {
  if (labels.size() != predictions.size())
    throw std::invalid_argument("precision_recall_f1: length mismatch");
  if (!weights.empty() && weights.size() != labels.size())
    throw std::invalid_argument("precision_recall_f1: weights length mismatch");
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const bool truth = labels[i] != 0;
    const bool pred = predictions[i] != 0;
    if (pred && truth) tp += w;
    else if (pred && !truth) fp += w;
    else if (!pred && truth) fn += w;
  }
  ClassificationScores s;
  if (tp + fp == 0.0) {
    s.precision = 0.0;
    s.precision_defined = false;
  } else {
    s.precision = tp / (tp + fp);
  }
  if (tp + fn == 0.0) {
    s.recall = 0.0;
    s.recall_defined = false;
  } else {
    s.recall = tp / (tp + fn);
  }
  s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricReport>& reports) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "farm,model,mode,batch_index,nd,nrmse\n";
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.per_batch_nd.size(); ++i)
      os << r.farm_id << ',' << r.model << ',' << r.mode << ',' << r.batch_indices[i] << ','
         << data::format_double(r.per_batch_nd[i]) << ',' << data::format_double(r.per_batch_nrmse[i])
         << '\n';
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<MetricReport> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind("farm,model,mode,batch_index,nd,nrmse", 0) != 0)
    throw std::invalid_argument(path.string() + ": missing metrics header");
  std::map<std::tuple<int, std::string, std::string>, MetricReport> grouped;
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
    if (fields.size() != 6) throw std::invalid_argument(path.string() + ": bad row '" + line + "'");
    const int farm = std::stoi(fields[0]);
    auto key = std::make_tuple(farm, fields[1], fields[2]);
    MetricReport& r = grouped[key];
    r.farm_id = farm;
    r.model = fields[1];
    r.mode = fields[2];
    r.batch_indices.push_back(std::stoll(fields[3]));
    r.per_batch_nd.push_back(std::stod(fields[4]));
    r.per_batch_nrmse.push_back(std::stod(fields[5]));
  }
  std::vector<MetricReport> out;
  for (auto& [key, r] : grouped) {
    double snd = 0.0, snr = 0.0;
    for (double v : r.per_batch_nd) snd += v;
    for (double v : r.per_batch_nrmse) snr += v;
    r.avg_nd = snd / static_cast<double>(r.per_batch_nd.size());
    r.avg_nrmse = snr / static_cast<double>(r.per_batch_nrmse.size());
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace gustcast::eval
