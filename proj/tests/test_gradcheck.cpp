// Finite-difference gradient checks for every differentiable op at both
// precisions, with randomized small shapes.
#include <gtest/gtest.h>

#include <random>

#include "gustcast/nn.hpp"
#include "gustcast/ops.hpp"
#include "oracles.hpp"

using namespace gustcast::ad;

namespace {

template <typename T>
struct Tolerances;
template <>
struct Tolerances<double> {
  static constexpr double h = 1e-5;
  static constexpr double tol = 1e-5;
};
template <>
struct Tolerances<float> {
  static constexpr float h = 1e-2f;
  static constexpr double tol = 1e-3;
};

template <typename T>
std::vector<T> random_values(std::int64_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = static_cast<T>(dist(rng));
  return out;
}

// Values pairwise separated by at least `gap` (keeps maxpool/relu away from
// their kinks under FD perturbation).
template <typename T>
std::vector<T> separated_values(std::int64_t n, std::mt19937_64& rng, double gap = 1e-3) {
  std::vector<T> out;
  while (true) {
    out = random_values<T>(n, rng);
    bool ok = true;
    for (std::size_t i = 0; i < out.size() && ok; ++i) {
      if (std::abs(static_cast<double>(out[i])) < gap) ok = false;
      for (std::size_t j = i + 1; j < out.size() && ok; ++j)
        if (std::abs(static_cast<double>(out[i]) - static_cast<double>(out[j])) < gap) ok = false;
    }
    if (ok) return out;
  }
}

// Fixed projection weights make the scalar loss sensitive to every output
// element with distinct signs.
template <typename T>
Tensor<T> projection_like(const Tensor<T>& out, std::mt19937_64& rng) {
  return Tensor<T>::from_values(out.shape(), random_values<T>(out.size(), rng, 0.25, 1.75));
}

// Runs the check for one op: forward must rebuild the graph each call.
template <typename T>
void expect_gradients_match(std::vector<Tensor<T>> leaves,
                            const std::function<Tensor<T>()>& forward_loss) {
  for (auto& leaf : leaves) leaf.set_tracked();
  Tensor<T> loss = forward_loss();
  backward(loss);
  auto value_fn = [&]() { return forward_loss().item(); };
  for (auto& leaf : leaves) {
    ASSERT_TRUE(leaf.has_grad());
    const std::vector<T> fd = oracle::finite_diff_grad<T>(leaf, value_fn, Tolerances<T>::h);
    const double err = oracle::max_rel_err<T>(leaf.grad(), fd);
    EXPECT_LT(err, Tolerances<T>::tol);
    leaf.zero_grad();
  }
}

template <typename T>
void check_elementwise_ops(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::int64_t n = 2 + static_cast<std::int64_t>(rng() % 5);
  auto a = Tensor<T>::from_values({n}, random_values<T>(n, rng));
  auto b = Tensor<T>::from_values({n}, random_values<T>(n, rng));
  auto w = Tensor<T>::from_values({n}, random_values<T>(n, rng, 0.25, 1.75));

  expect_gradients_match<T>({a, b}, [&]() { return sum(mul(w, add(a, b))); });
  expect_gradients_match<T>({a, b}, [&]() { return sum(mul(w, sub(a, b))); });
  expect_gradients_match<T>({a, b}, [&]() { return sum(mul(w, mul(a, b))); });
  expect_gradients_match<T>({a}, [&]() { return sum(mul(w, scale(a, T(1.7)))); });
  expect_gradients_match<T>({a}, [&]() { return sum(mul(w, tanh_op(a))); });
  expect_gradients_match<T>({a}, [&]() { return sum(mul(w, sigmoid(a))); });
  expect_gradients_match<T>({a}, [&]() { return mean(mul(a, a)); });

  auto a_sep = Tensor<T>::from_values({n}, separated_values<T>(n, rng, 0.05));
  expect_gradients_match<T>({a_sep}, [&]() { return sum(mul(w, relu(a_sep))); });

  auto target = Tensor<T>::from_values({n}, random_values<T>(n, rng));
  expect_gradients_match<T>({a}, [&]() { return mse_loss(a, target); });
}

template <typename T>
void check_matrix_ops(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::int64_t m = 2 + static_cast<std::int64_t>(rng() % 3);
  const std::int64_t k = 2 + static_cast<std::int64_t>(rng() % 3);
  const std::int64_t n = 1 + static_cast<std::int64_t>(rng() % 3);
  auto a = Tensor<T>::from_values({m, k}, random_values<T>(m * k, rng));
  auto b = Tensor<T>::from_values({k, n}, random_values<T>(k * n, rng));
  auto bias = Tensor<T>::from_values({n}, random_values<T>(n, rng));
  std::mt19937_64 wrng(seed ^ 0xABC);
  auto w = Tensor<T>::from_values({m, n}, random_values<T>(m * n, wrng, 0.25, 1.75));

  expect_gradients_match<T>({a, b}, [&]() { return sum(mul(w, matmul(a, b))); });
  expect_gradients_match<T>({a, b, bias}, [&]() { return sum(mul(w, dense(a, b, bias))); });
}

template <typename T>
void check_structural_ops(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::int64_t rows = 2 + static_cast<std::int64_t>(rng() % 3);
  const std::int64_t cols = 3 + static_cast<std::int64_t>(rng() % 3);
  auto a = Tensor<T>::from_values({rows, cols}, random_values<T>(rows * cols, rng));
  auto b = Tensor<T>::from_values({rows, 2}, random_values<T>(rows * 2, rng));
  std::mt19937_64 wrng(seed ^ 0x17);

  {
    auto w = Tensor<T>::from_values({rows, 2}, random_values<T>(rows * 2, wrng, 0.25, 1.75));
    expect_gradients_match<T>({a}, [&]() { return sum(mul(w, slice_cols(a, 1, 3))); });
  }
  {
    auto w = Tensor<T>::from_values({rows, cols + 2}, random_values<T>(rows * (cols + 2), wrng, 0.25, 1.75));
    expect_gradients_match<T>({a, b}, [&]() {
      std::vector<Tensor<T>> parts{a, b};
      return sum(mul(w, concat_cols(std::span<const Tensor<T>>(parts))));
    });
  }
  {
    std::vector<std::int64_t> rows_sel{0, rows - 1, 0};  // repeated row exercises scatter-add
    auto w = Tensor<T>::from_values({3, cols}, random_values<T>(3 * cols, wrng, 0.25, 1.75));
    expect_gradients_match<T>({a}, [&]() { return sum(mul(w, gather_rows(a, rows_sel))); });
  }
  {
    const std::int64_t steps = 3;
    auto seq = Tensor<T>::from_values({rows, steps, 2}, random_values<T>(rows * steps * 2, rng));
    auto w = Tensor<T>::from_values({rows, 2}, random_values<T>(rows * 2, wrng, 0.25, 1.75));
    expect_gradients_match<T>({seq}, [&]() { return sum(mul(w, slice_step(seq, 1))); });
  }
  {
    auto w = Tensor<T>::from_values({cols * rows}, random_values<T>(rows * cols, wrng, 0.25, 1.75));
    expect_gradients_match<T>({a}, [&]() { return sum(mul(w, reshape(a, {cols * rows}))); });
  }
}

template <typename T>
void check_spatial_ops(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::int64_t B = 1 + static_cast<std::int64_t>(rng() % 2);
  const std::int64_t H = 3 + static_cast<std::int64_t>(rng() % 3);
  const std::int64_t W = 3 + static_cast<std::int64_t>(rng() % 3);
  const std::int64_t C = 1 + static_cast<std::int64_t>(rng() % 2);
  const std::int64_t Cout = 1 + static_cast<std::int64_t>(rng() % 2);
  const std::int64_t kh = 2;
  const bool same = seed % 2 == 0;
  std::mt19937_64 wrng(seed ^ 0x55);

  auto x = Tensor<T>::from_values({B, H, W, C}, random_values<T>(B * H * W * C, rng));
  auto kernel = Tensor<T>::from_values({kh, kh, C, Cout}, random_values<T>(kh * kh * C * Cout, rng));
  auto bias = Tensor<T>::from_values({Cout}, random_values<T>(Cout, rng));
  {
    auto probe = conv2d(x, kernel, bias, 1, same ? Padding::kSame : Padding::kValid);
    auto w = projection_like(probe, wrng);
    expect_gradients_match<T>({x, kernel, bias}, [&]() {
      return sum(mul(w, conv2d(x, kernel, bias, 1, same ? Padding::kSame : Padding::kValid)));
    });
  }
  {
    auto xsep = Tensor<T>::from_values({B, H, W, C}, separated_values<T>(B * H * W * C, rng));
    auto probe = maxpool2d(xsep);
    auto w = projection_like(probe, wrng);
    expect_gradients_match<T>({xsep}, [&]() { return sum(mul(w, maxpool2d(xsep))); });
  }
  {
    auto gamma = Tensor<T>::from_values({C}, random_values<T>(C, rng, 0.5, 1.5));
    auto beta = Tensor<T>::from_values({C}, random_values<T>(C, rng));
    std::vector<T> rm(static_cast<std::size_t>(C), T(0)), rv(static_cast<std::size_t>(C), T(1));
    auto w = projection_like(x, wrng);
    expect_gradients_match<T>({x, gamma, beta}, [&]() {
      return sum(mul(w, batch_norm(x, gamma, beta, rm, rv, /*train=*/true, T(0.99), T(1e-5))));
    });
    // inference path (running stats held fixed)
    std::vector<T> rm2(static_cast<std::size_t>(C), T(0.1)), rv2(static_cast<std::size_t>(C), T(0.8));
    expect_gradients_match<T>({x, gamma, beta}, [&]() {
      return sum(mul(w, batch_norm(x, gamma, beta, rm2, rv2, /*train=*/false, T(0.99), T(1e-5))));
    });
  }
  {
    auto w = projection_like(x, wrng);
    const std::uint64_t mask_seed = seed ^ 0xD20;
    expect_gradients_match<T>({x}, [&]() {
      std::mt19937_64 mask_rng(mask_seed);  // same mask on every FD evaluation
      return sum(mul(w, dropout(x, 0.4, true, mask_rng)));
    });
  }
}

template <typename T>
void check_lstm_ops(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::int64_t B = 2, T_steps = 4, F = 2;
  LstmStack<T> stack(F, {3}, rng);
  auto seq = Tensor<T>::from_values({B, T_steps, F}, random_values<T>(B * T_steps * F, rng));
  seq.set_tracked();
  std::vector<Tensor<T>> params;
  stack.collect_params(params);

  auto forward = [&]() { return sum(stack.encode(seq).outputs); };
  Tensor<T> loss = forward();
  backward(loss);
  auto value_fn = [&]() { return forward().item(); };
  std::vector<Tensor<T>> leaves = params;
  leaves.push_back(seq);
  for (auto& leaf : leaves) {
    ASSERT_TRUE(leaf.has_grad());
    const std::vector<T> fd = oracle::finite_diff_grad<T>(leaf, value_fn, Tolerances<T>::h);
    EXPECT_LT(oracle::max_rel_err<T>(leaf.grad(), fd), Tolerances<T>::tol);
    leaf.zero_grad();
  }
}

}  // namespace

TEST(GradCheck, ElementwiseF64) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) check_elementwise_ops<double>(seed);
}
TEST(GradCheck, ElementwiseF32) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) check_elementwise_ops<float>(seed);
}
TEST(GradCheck, MatrixF64) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) check_matrix_ops<double>(seed);
}
TEST(GradCheck, MatrixF32) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) check_matrix_ops<float>(seed);
}
TEST(GradCheck, StructuralF64) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) check_structural_ops<double>(seed);
}
TEST(GradCheck, StructuralF32) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) check_structural_ops<float>(seed);
}
TEST(GradCheck, SpatialF64) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) check_spatial_ops<double>(seed);
}
TEST(GradCheck, SpatialF32) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) check_spatial_ops<float>(seed);
}
TEST(GradCheck, LstmF64) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) check_lstm_ops<double>(seed);
}
TEST(GradCheck, LstmF32) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) check_lstm_ops<float>(seed);
}
