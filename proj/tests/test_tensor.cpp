#include <gtest/gtest.h>

#include <random>

#include "gustcast/ops.hpp"
#include "gustcast/tensor.hpp"
#include "oracles.hpp"

using namespace gustcast::ad;

namespace {

Tensor<double> tracked(Shape shape, std::vector<double> values) {
  auto t = Tensor<double>::from_values(std::move(shape), std::move(values));
  t.set_tracked();
  return t;
}

}  // namespace

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(Tensor<double>::from_values({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  EXPECT_THROW(Tensor<double>::from_values({0}, {}), std::invalid_argument);
  auto t = Tensor<double>::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.dim(1), 3);
}

TEST(Tensor, ScalarItem) {
  EXPECT_DOUBLE_EQ(Tensor<double>::scalar(3.5).item(), 3.5);
  auto v = Tensor<double>::from_values({2}, {1, 2});
  EXPECT_THROW(v.item(), std::invalid_argument);
}

TEST(Tensor, FiniteCheck) {
  auto ok = Tensor<double>::from_values({2}, {1.0, -2.0});
  EXPECT_TRUE(ok.all_finite());
  auto bad = Tensor<double>::from_values({2}, {1.0, std::nan("")});
  EXPECT_FALSE(bad.all_finite());
}

TEST(Backward, SumGivesOnes) {
  auto x = tracked({2, 3}, {1, -2, 3, 0.5, 4, -1});
  auto loss = sum(x);
  backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  auto x = tracked({4}, {1.0, -2.0, 0.25, 3.0});
  auto loss = sum(mul(x, x));
  backward(loss);
  const auto g = x.grad();
  const auto v = x.values();
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_DOUBLE_EQ(g[i], 2.0 * v[i]);
}

TEST(Backward, NonScalarLossRejected) {
  auto x = tracked({3}, {1, 2, 3});
  auto y = relu(x);
  EXPECT_THROW(backward(y), std::invalid_argument);
}

TEST(Backward, SecondBackwardWithoutRetainThrows) {
  auto x = tracked({3}, {1, 2, 3});
  auto loss = sum(mul(x, x));
  backward(loss);
  EXPECT_THROW(backward(loss), std::runtime_error);
}

TEST(Backward, RetainGraphAllowsSecondPass) {
  auto x = tracked({3}, {1, 2, 3});
  auto loss = sum(mul(x, x));
  backward(loss, /*retain_graph=*/true);
  const std::vector<double> first(x.grad().begin(), x.grad().end());
  backward(loss, /*retain_graph=*/true);  // accumulates a second time
  const auto second = x.grad();
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_DOUBLE_EQ(second[i], 2.0 * first[i]);
}

TEST(Backward, LinearityOfGradients) {
  // grad(a*loss1 + b*loss2) == a*grad1 + b*grad2 on the shared leaf
  const double a = 0.7, b = -1.3;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> values(12);
  for (auto& v : values) v = dist(rng);

  auto make_losses = [&](Tensor<double>& x) {
    auto loss1 = mean(mul(x, x));
    auto loss2 = sum(tanh_op(x));
    return std::pair{loss1, loss2};
  };

  auto x1 = tracked({3, 4}, values);
  auto [l1a, l1b] = make_losses(x1);
  backward(add(scale(l1a, a), scale(l1b, b)));
  const std::vector<double> combined(x1.grad().begin(), x1.grad().end());

  auto x2 = tracked({3, 4}, values);
  auto [l2a, l2b] = make_losses(x2);
  backward(l2a);
  const std::vector<double> g1(x2.grad().begin(), x2.grad().end());
  auto x3 = tracked({3, 4}, values);
  auto [l3a, l3b] = make_losses(x3);
  backward(l3b);
  const std::vector<double> g2(x3.grad().begin(), x3.grad().end());

  for (std::size_t i = 0; i < combined.size(); ++i)
    EXPECT_NEAR(combined[i], a * g1[i] + b * g2[i], 1e-12);
}

TEST(Ops, ReluExamples) {
  auto x = Tensor<double>::from_values({3}, {-1, 0, 2});
  auto y = relu(x);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), (std::vector<double>{0, 0, 2}));

  auto nonneg = Tensor<double>::from_values({3}, {0.0, 1.5, 7.0});
  auto id = relu(nonneg);
  EXPECT_EQ(std::vector<double>(id.values().begin(), id.values().end()),
            std::vector<double>(nonneg.values().begin(), nonneg.values().end()));

  auto twice = relu(relu(x));
  EXPECT_EQ(std::vector<double>(twice.values().begin(), twice.values().end()),
            std::vector<double>(y.values().begin(), y.values().end()));
}

TEST(Ops, DenseExamples) {
  // identity weight, zero bias -> input
  auto x = Tensor<double>::from_values({2, 2}, {1, 2, 3, 4});
  auto w = Tensor<double>::from_values({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<double>::zeros({2});
  auto y = dense(x, w, b);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), (std::vector<double>{1, 2, 3, 4}));

  // input [1,2], weight [[1],[1]], bias [1] -> [4]
  auto x2 = Tensor<double>::from_values({1, 2}, {1, 2});
  auto w2 = Tensor<double>::from_values({2, 1}, {1, 1});
  auto b2 = Tensor<double>::from_values({1}, {1});
  EXPECT_DOUBLE_EQ(dense(x2, w2, b2).item(), 4.0);

  // zero weight -> bias broadcast
  auto w0 = Tensor<double>::zeros({2, 3});
  auto b3 = Tensor<double>::from_values({3}, {5, 6, 7});
  auto y3 = dense(x, w0, b3);
  EXPECT_EQ(std::vector<double>(y3.values().begin(), y3.values().end()),
            (std::vector<double>{5, 6, 7, 5, 6, 7}));

  auto wbad = Tensor<double>::zeros({3, 2});
  EXPECT_THROW(dense(x, wbad, b), std::invalid_argument);
}

TEST(Ops, MseExamples) {
  auto p = Tensor<double>::from_values({1, 2}, {1, 2});
  EXPECT_DOUBLE_EQ(mse_loss(p, p).item(), 0.0);

  auto z = Tensor<double>::zeros({1, 2});
  auto ones = Tensor<double>::filled({1, 2}, 1.0);
  EXPECT_DOUBLE_EQ(mse_loss(z, ones).item(), 1.0);

  auto t = Tensor<double>::from_values({1, 2}, {2, 4});
  EXPECT_DOUBLE_EQ(mse_loss(p, t).item(), 2.5);  // (1 + 4) / 2
}

TEST(Ops, Conv2dExamples) {
  // [[1,2],[3,4]] with an all-ones 2x2 kernel, valid -> [[10]]
  auto x = Tensor<double>::from_values({1, 2, 2, 1}, {1, 2, 3, 4});
  auto k = Tensor<double>::filled({2, 2, 1, 1}, 1.0);
  auto b = Tensor<double>::zeros({1});
  auto y = conv2d(x, k, b, 1, Padding::kValid);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.values()[0], 10.0);

  // identity 1x1 kernel
  auto x2 = Tensor<double>::from_values({1, 3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto k1 = Tensor<double>::filled({1, 1, 1, 1}, 1.0);
  auto same = conv2d(x2, k1, b, 1, Padding::kValid);
  EXPECT_EQ(std::vector<double>(same.values().begin(), same.values().end()),
            std::vector<double>(x2.values().begin(), x2.values().end()));

  // 5x5 input, kernel 4, stride 1, same padding -> 5x5
  auto x3 = Tensor<double>::filled({1, 5, 5, 1}, 0.5);
  auto k4 = Tensor<double>::filled({4, 4, 1, 1}, 0.25);
  auto y3 = conv2d(x3, k4, b, 1, Padding::kSame);
  EXPECT_EQ(y3.shape(), (Shape{1, 5, 5, 1}));

  // kernel larger than input is an error under valid padding
  EXPECT_THROW(conv2d(x, k4, b, 1, Padding::kValid), std::invalid_argument);
  // channel mismatch
  auto kbad = Tensor<double>::filled({2, 2, 3, 1}, 1.0);
  EXPECT_THROW(conv2d(x, kbad, b, 1, Padding::kValid), std::invalid_argument);
}

TEST(Ops, Conv2dMatchesNaiveOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 8; ++trial) {
    const std::int64_t B = 1 + trial % 2, H = 3 + trial % 3, W = 4, Cin = 1 + trial % 3, Cout = 2;
    const std::int64_t kh = 2 + trial % 2, kw = 2;
    const std::int64_t stride = 1 + trial % 2;
    const bool same = trial % 3 == 0;
    std::vector<double> xv(static_cast<std::size_t>(B * H * W * Cin));
    std::vector<double> kv(static_cast<std::size_t>(kh * kw * Cin * Cout));
    std::vector<double> bv(static_cast<std::size_t>(Cout));
    for (auto& v : xv) v = dist(rng);
    for (auto& v : kv) v = dist(rng);
    for (auto& v : bv) v = dist(rng);

    auto y = conv2d(Tensor<double>::from_values({B, H, W, Cin}, xv),
                    Tensor<double>::from_values({kh, kw, Cin, Cout}, kv),
                    Tensor<double>::from_values({Cout}, bv), stride,
                    same ? Padding::kSame : Padding::kValid);
    std::int64_t oh = 0, ow = 0;
    const auto expect = oracle::conv2d_naive(xv, B, H, W, Cin, kv, kh, kw, Cout, bv, stride, same, oh, ow);
    ASSERT_EQ(y.shape(), (Shape{B, oh, ow, Cout}));
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y.values()[i], expect[i], 1e-12);
  }
}

TEST(Ops, MaxpoolExamples) {
  auto x = Tensor<double>::from_values({1, 2, 2, 1}, {1, 2, 3, 4});
  auto y = maxpool2d(x);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.values()[0], 4.0);

  auto c = Tensor<double>::filled({1, 4, 4, 2}, 3.25);
  auto yc = maxpool2d(c);
  for (double v : yc.values()) EXPECT_DOUBLE_EQ(v, 3.25);

  auto big = Tensor<double>::zeros({2, 5, 5, 128});
  EXPECT_EQ(maxpool2d(big).shape(), (Shape{2, 2, 2, 128}));

  auto tiny = Tensor<double>::zeros({1, 1, 4, 1});
  EXPECT_THROW(maxpool2d(tiny), std::invalid_argument);
}

TEST(Ops, MaxpoolTieRoutesToFirstInRowMajor) {
  auto x = Tensor<double>::filled({1, 2, 2, 1}, 1.0);
  x.set_tracked();
  auto loss = sum(maxpool2d(x));
  backward(loss);
  const auto g = x.grad();
  EXPECT_DOUBLE_EQ(g[0], 1.0);
  EXPECT_DOUBLE_EQ(g[1], 0.0);
  EXPECT_DOUBLE_EQ(g[2], 0.0);
  EXPECT_DOUBLE_EQ(g[3], 0.0);
}

TEST(Ops, ShapeAlgebraSweep) {
  // conv and pool output extents over every small geometry
  for (std::int64_t h = 1; h <= 8; ++h)
    for (std::int64_t w = 1; w <= 8; ++w)
      for (std::int64_t k = 1; k <= std::min(h, w); ++k)
        for (std::int64_t stride : {1, 2}) {
          auto x = Tensor<double>::filled({1, h, w, 1}, 1.0);
          auto kernel = Tensor<double>::filled({k, k, 1, 1}, 1.0);
          auto bias = Tensor<double>::zeros({1});
          auto valid = conv2d(x, kernel, bias, stride, Padding::kValid);
          EXPECT_EQ(valid.dim(1), (h - k) / stride + 1);
          EXPECT_EQ(valid.dim(2), (w - k) / stride + 1);
          auto same = conv2d(x, kernel, bias, stride, Padding::kSame);
          EXPECT_EQ(same.dim(1), (h + stride - 1) / stride);  // ceil(h/stride)
          EXPECT_EQ(same.dim(2), (w + stride - 1) / stride);
          if (h >= 2 && w >= 2) {
            auto pooled = maxpool2d(x);
            EXPECT_EQ(pooled.dim(1), (h - 2) / 2 + 1);
            EXPECT_EQ(pooled.dim(2), (w - 2) / 2 + 1);
          }
        }
}

TEST(Ops, DropoutModes) {
  std::mt19937_64 rng(3);
  auto x = Tensor<double>::filled({10}, 2.0);
  auto same1 = dropout(x, 0.0, true, rng);
  for (double v : same1.values()) EXPECT_DOUBLE_EQ(v, 2.0);
  auto same2 = dropout(x, 0.5, false, rng);
  for (double v : same2.values()) EXPECT_DOUBLE_EQ(v, 2.0);
  EXPECT_THROW(dropout(x, 1.0, true, rng), std::invalid_argument);
  EXPECT_THROW(dropout(x, -0.1, true, rng), std::invalid_argument);
}

TEST(Ops, DropoutSurvivorConcentration) {
  std::mt19937_64 rng(12345);
  const std::int64_t n = 100000;
  auto x = Tensor<double>::filled({n}, 1.0);
  auto y = dropout(x, 0.5, true, rng);
  std::int64_t survivors = 0;
  for (double v : y.values()) {
    if (v != 0.0) {
      EXPECT_DOUBLE_EQ(v, 2.0);  // inverted scaling 1/(1-rate)
      ++survivors;
    }
  }
  const double fraction = static_cast<double>(survivors) / static_cast<double>(n);
  EXPECT_NEAR(fraction, 0.5, 0.01);
}

TEST(Ops, DeterministicForwardAndGrad) {
  auto run = [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> xv(24), kv(8);
    for (auto& v : xv) v = dist(rng);
    for (auto& v : kv) v = dist(rng);
    auto x = tracked({1, 3, 4, 2}, xv);
    auto k = tracked({2, 2, 2, 1}, kv);
    auto b = tracked({1}, {0.1});
    std::mt19937_64 drop_rng(seed);
    auto y = dropout(relu(conv2d(x, k, b, 1, Padding::kSame)), 0.3, true, drop_rng);
    auto loss = mean(mul(y, y));
    backward(loss);
    std::vector<double> out{loss.item()};
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), k.grad().begin(), k.grad().end());
    return out;
  };
  EXPECT_EQ(run(99), run(99));  // bit-identical
}
