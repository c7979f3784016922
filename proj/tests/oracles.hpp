// Test-only oracles, written independently of the implementations they check:
// central finite differences, a direct-loop convolution, quadrature for the
// Student-t CDF, a brute-force split search, and naive metric formulas.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "gustcast/matrix.hpp"
#include "gustcast/tensor.hpp"

namespace oracle {

// Central finite differences of a re-runnable scalar forward pass with
// respect to one leaf tensor. Step per element: h_rel * max(1, |theta|).
template <typename T>
std::vector<T> finite_diff_grad(gustcast::ad::Tensor<T>& leaf, const std::function<T()>& forward,
                                T h_rel) {
  auto values = leaf.values_mut();
  std::vector<T> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T original = values[i];
    const T h = h_rel * std::max(T(1), std::abs(original));
    values[i] = original + h;
    const T up = forward();
    values[i] = original - h;
    const T down = forward();
    values[i] = original;
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

// max over elements of |a - b| / max(1, |a|, |b|)
template <typename T>
double max_rel_err(std::span<const T> a, std::span<const T> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({1.0, std::abs(static_cast<double>(a[i])),
                                   std::abs(static_cast<double>(b[i]))});
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) / denom);
  }
  return worst;
}

// Direct-loop valid/same convolution, channels-last, independent of the
// im2col path in the library.
inline std::vector<double> conv2d_naive(const std::vector<double>& x, std::int64_t batch,
                                        std::int64_t in_h, std::int64_t in_w, std::int64_t in_c,
                                        const std::vector<double>& kernel, std::int64_t kh,
                                        std::int64_t kw, std::int64_t out_c,
                                        const std::vector<double>& bias, std::int64_t stride,
                                        bool same_padding, std::int64_t& out_h, std::int64_t& out_w) {
  if (same_padding) {
    out_h = (in_h + stride - 1) / stride;
    out_w = (in_w + stride - 1) / stride;
  } else {
    out_h = (in_h - kh) / stride + 1;
    out_w = (in_w - kw) / stride + 1;
  }
  const std::int64_t pad_top =
      same_padding ? std::max<std::int64_t>(((out_h - 1) * stride + kh - in_h), 0) / 2 : 0;
  const std::int64_t pad_left =
      same_padding ? std::max<std::int64_t>(((out_w - 1) * stride + kw - in_w), 0) / 2 : 0;
  std::vector<double> out(static_cast<std::size_t>(batch * out_h * out_w * out_c), 0.0);
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t oh = 0; oh < out_h; ++oh)
      for (std::int64_t ow = 0; ow < out_w; ++ow)
        for (std::int64_t oc = 0; oc < out_c; ++oc) {
          double acc = bias[static_cast<std::size_t>(oc)];
          for (std::int64_t r = 0; r < kh; ++r)
            for (std::int64_t c = 0; c < kw; ++c)
              for (std::int64_t ic = 0; ic < in_c; ++ic) {
                const std::int64_t ih = oh * stride - pad_top + r;
                const std::int64_t iw = ow * stride - pad_left + c;
                if (ih < 0 || ih >= in_h || iw < 0 || iw >= in_w) continue;
                acc += x[static_cast<std::size_t>(((b * in_h + ih) * in_w + iw) * in_c + ic)] *
                       kernel[static_cast<std::size_t>(((r * kw + c) * in_c + ic) * out_c + oc)];
              }
          out[static_cast<std::size_t>(((b * out_h + oh) * out_w + ow) * out_c + oc)] = acc;
        }
  return out;
}

// Student-t CDF by adaptive Simpson quadrature of the density (an
// incomplete-beta-free route).
inline double simpson(const std::function<double(double)>& f, double a, double b, int depth,
                      double fa, double fm, double fb, double whole) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 1e-13)
    return left + right + (left + right - whole) / 15.0;
  return simpson(f, a, m, depth - 1, fa, flm, fm, left) +
         simpson(f, m, b, depth - 1, fm, frm, fb, right);
}

inline double student_t_cdf_simpson(double t, double nu) {
  const double ln_c = std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) -
                      0.5 * std::log(nu * std::acos(-1.0));
  auto pdf = [&](double x) { return std::exp(ln_c - (nu + 1.0) / 2.0 * std::log1p(x * x / nu)); };
  if (t == 0.0) return 0.5;
  const double hi = std::abs(t);
  const double fa = pdf(0.0), fb = pdf(hi), fm = pdf(hi / 2.0);
  const double whole = hi / 6.0 * (fa + 4.0 * fm + fb);
  const double integral = simpson(pdf, 0.0, hi, 48, fa, fm, fb, whole);
  return t > 0.0 ? 0.5 + integral : 0.5 - integral;
}

// Brute-force best variance-reduction split under a min-child constraint;
// naive two-pass SSE arithmetic, midpoint thresholds, lowest feature then
// lowest threshold on ties.
struct BruteSplit {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

inline double sse_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double sse = 0.0;
  for (double v : values) sse += (v - mean) * (v - mean);
  return sse;
}

inline BruteSplit brute_force_split(const gustcast::Matrix& x, const std::vector<double>& y,
                                    int min_child) {
  BruteSplit best;
  std::vector<double> parent_y = y;
  const double parent_sse = sse_of(parent_y);
  for (int f = 0; f < x.cols; ++f) {
    std::vector<double> values;
    for (std::int64_t r = 0; r < x.rows; ++r) values.push_back(x.at(r, f));
    std::vector<double> distinct = values;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (std::size_t k = 1; k < distinct.size(); ++k) {
      const double threshold = 0.5 * (distinct[k - 1] + distinct[k]);
      std::vector<double> left, right;
      for (std::int64_t r = 0; r < x.rows; ++r)
        (x.at(r, f) < threshold ? left : right).push_back(y[static_cast<std::size_t>(r)]);
      if (static_cast<int>(left.size()) < min_child || static_cast<int>(right.size()) < min_child)
        continue;
      const double gain = parent_sse - sse_of(left) - sse_of(right);
      if (gain > best.gain) {
        best.found = true;
        best.feature = f;
        best.threshold = threshold;
        best.gain = gain;
      }
    }
  }
  return best;
}

// Naive metric formulas with long double accumulation.
inline double nd_naive(const std::vector<double>& y, const std::vector<double>& yhat) {
  long double num = 0.0L, den = 0.0L;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += std::fabsl(static_cast<long double>(yhat[i]) - y[i]);
    den += std::fabsl(static_cast<long double>(y[i]));
  }
  return static_cast<double>(num / den);
}

inline double nrmse_naive(const std::vector<double>& y, const std::vector<double>& yhat) {
  long double sq = 0.0L, den = 0.0L;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const long double d = static_cast<long double>(yhat[i]) - y[i];
    sq += d * d;
    den += std::fabsl(static_cast<long double>(y[i]));
  }
  const long double n = static_cast<long double>(y.size());
  return static_cast<double>(std::sqrtl(sq / n) / (den / n));
}

}  // namespace oracle
