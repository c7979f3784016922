#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gustcast/checkpoint.hpp"
#include "gustcast/nn.hpp"
#include "gustcast/ops.hpp"

using namespace gustcast::ad;

TEST(BatchNorm, HandComputedTwoPointChannel) {
  // gamma=1, beta=0, channel values {-1, 1}: biased variance 1, output
  // +-1/sqrt(1+eps)
  auto x = Tensor<double>::from_values({2, 1}, {-1.0, 1.0});
  auto gamma = Tensor<double>::filled({1}, 1.0);
  auto beta = Tensor<double>::zeros({1});
  std::vector<double> rm{0.0}, rv{1.0};
  const double eps = 1e-5;
  auto y = batch_norm(x, gamma, beta, rm, rv, true, 0.99, eps);
  const double expect = 1.0 / std::sqrt(1.0 + eps);
  EXPECT_NEAR(y.values()[0], -expect, 1e-15);
  EXPECT_NEAR(y.values()[1], expect, 1e-15);
  // running stats moved toward the batch moments
  EXPECT_NEAR(rm[0], 0.0, 1e-15);
  EXPECT_NEAR(rv[0], 0.99 * 1.0 + 0.01 * 1.0, 1e-15);
}

TEST(BatchNorm, ZeroGammaLeavesBeta) {
  auto x = Tensor<double>::from_values({3, 2}, {1, 2, 3, 4, 5, 6});
  auto gamma = Tensor<double>::zeros({2});
  auto beta = Tensor<double>::from_values({2}, {0.5, -1.5});
  std::vector<double> rm(2, 0.0), rv(2, 1.0);
  auto y = batch_norm(x, gamma, beta, rm, rv, true, 0.99, 1e-5);
  for (std::int64_t r = 0; r < 3; ++r) {
    EXPECT_DOUBLE_EQ(y.values()[r * 2 + 0], 0.5);
    EXPECT_DOUBLE_EQ(y.values()[r * 2 + 1], -1.5);
  }
}

TEST(BatchNorm, InferModeIsDeterministic) {
  auto x = Tensor<double>::from_values({2, 2}, {0.3, -0.7, 1.1, 0.2});
  auto gamma = Tensor<double>::filled({2}, 1.3);
  auto beta = Tensor<double>::filled({2}, 0.1);
  std::vector<double> rm{0.2, -0.1}, rv{0.9, 1.4};
  auto y1 = batch_norm(x, gamma, beta, rm, rv, false, 0.99, 1e-5);
  auto y2 = batch_norm(x, gamma, beta, rm, rv, false, 0.99, 1e-5);
  for (std::size_t i = 0; i < y1.values().size(); ++i)
    EXPECT_DOUBLE_EQ(y1.values()[i], y2.values()[i]);
}

TEST(BatchNorm, TrainModeNormalizesPerChannel) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> dist(-3.0, 5.0);
  const std::int64_t rows = 64, ch = 3;
  std::vector<double> values(static_cast<std::size_t>(rows * ch));
  for (auto& v : values) v = dist(rng);
  auto x = Tensor<double>::from_values({rows, ch}, values);
  auto gamma = Tensor<double>::filled({ch}, 1.0);
  auto beta = Tensor<double>::zeros({ch});
  std::vector<double> rm(ch, 0.0), rv(ch, 1.0);
  auto y = batch_norm(x, gamma, beta, rm, rv, true, 0.99, 1e-5);
  for (std::int64_t c = 0; c < ch; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) mean += y.values()[static_cast<std::size_t>(r * ch + c)];
    mean /= rows;
    for (std::int64_t r = 0; r < rows; ++r) {
      const double d = y.values()[static_cast<std::size_t>(r * ch + c)] - mean;
      var += d * d;
    }
    var /= rows;
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-4);  // eps shifts variance by ~1e-5 relative
  }
}

TEST(BatchNorm, SingleRowTrainRejected) {
  auto x = Tensor<double>::from_values({1, 2}, {1.0, 2.0});
  auto gamma = Tensor<double>::filled({2}, 1.0);
  auto beta = Tensor<double>::zeros({2});
  std::vector<double> rm(2, 0.0), rv(2, 1.0);
  EXPECT_THROW(batch_norm(x, gamma, beta, rm, rv, true, 0.99, 1e-5), std::invalid_argument);
}

TEST(Lstm, ZeroNetworkGivesZeroOutput) {
  std::mt19937_64 rng(1);
  LstmCell<double> cell(2, 3, rng);
  for (auto& p : {&cell.w_input_, &cell.w_hidden_, &cell.bias_})
    for (auto& v : p->values_mut()) v = 0.0;
  auto x = Tensor<double>::from_values({1, 2}, {0.7, -0.4});
  auto [out, state] = cell.step(cell.zero_state(1), x);
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 0.0);  // tanh(0) * sigmoid(0)
  for (double v : state.cell.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Lstm, EncodeShapesAndDeterminism) {
  std::mt19937_64 rng(7);
  LstmStack<double> stack(1, {4, 3}, rng);
  std::vector<double> seq_values(2 * 5 * 1, 0.3);
  auto seq = Tensor<double>::from_values({2, 5, 1}, seq_values);
  auto r1 = stack.encode(seq);
  auto r2 = stack.encode(seq);
  EXPECT_EQ(r1.outputs.shape(), (Shape{2, 5, 3}));
  ASSERT_EQ(r1.finals.size(), 2u);
  EXPECT_EQ(r1.finals[0].hidden.shape(), (Shape{2, 4}));
  EXPECT_EQ(r1.finals[1].hidden.shape(), (Shape{2, 3}));
  for (std::size_t i = 0; i < r1.outputs.values().size(); ++i)
    EXPECT_DOUBLE_EQ(r1.outputs.values()[i], r2.outputs.values()[i]);
}

TEST(Lstm, RejectsEmptyAndMismatched) {
  std::mt19937_64 rng(7);
  LstmStack<double> stack(1, {4}, rng);
  EXPECT_THROW(stack.encode(Tensor<double>::from_values({2, 2}, {1, 2, 3, 4})), std::invalid_argument);
  LstmCell<double> cell(2, 3, rng);
  auto bad = Tensor<double>::from_values({1, 5}, {1, 2, 3, 4, 5});
  EXPECT_THROW(cell.step(cell.zero_state(1), bad), std::invalid_argument);
}

TEST(Lstm, ForgetGateBiasInitializedToOne) {
  std::mt19937_64 rng(2);
  LstmCell<double> cell(1, 4, rng);
  const auto b = cell.bias_.values();
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(b[4 + i], 1.0);   // forget block
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(b[i], 0.0);       // input block
}

TEST(Adam, ZeroGradientLeavesParamsAdvancesStep) {
  auto p = Tensor<double>::from_values({3}, {1.0, -2.0, 0.5});
  p.set_tracked();
  Adam<double> opt({p}, {});
  // zero but present gradient
  auto loss = scale(sum(p), 0.0);
  backward(loss);
  opt.step();
  EXPECT_EQ(opt.step_count(), 1);
  EXPECT_DOUBLE_EQ(p.values()[0], 1.0);
  EXPECT_DOUBLE_EQ(p.values()[1], -2.0);
  EXPECT_DOUBLE_EQ(p.values()[2], 0.5);
}

TEST(Adam, FirstStepOfUnitGradientIsMinusLr) {
  auto p = Tensor<double>::scalar(0.0);
  p.set_tracked();
  AdamConfig cfg;  // lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8
  Adam<double> opt({p}, cfg);
  backward(sum(p));  // gradient 1
  opt.step();
  // bias-corrected m_hat = v_hat = 1 -> step = -lr / (1 + eps)
  EXPECT_NEAR(p.values()[0], -cfg.learning_rate / (1.0 + cfg.epsilon), 1e-15);
}

TEST(Adam, IdenticalParamsStayIdentical) {
  auto p1 = Tensor<double>::from_values({2}, {0.4, -0.6});
  auto p2 = Tensor<double>::from_values({2}, {0.4, -0.6});
  p1.set_tracked();
  p2.set_tracked();
  Adam<double> opt({p1, p2}, {});
  for (int iter = 0; iter < 5; ++iter) {
    opt.zero_grad();
    auto loss = add(mean(mul(p1, p1)), mean(mul(p2, p2)));
    backward(loss);
    opt.step();
    for (int i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(p1.values()[i], p2.values()[i]);
  }
}

TEST(Adam, MissingGradientIsAnError) {
  auto p = Tensor<double>::scalar(1.0);
  p.set_tracked();
  Adam<double> opt({p}, {});
  EXPECT_THROW(opt.step(), std::runtime_error);
}

TEST(Sgd, PlainStep) {
  auto p = Tensor<double>::scalar(2.0);
  p.set_tracked();
  Sgd<double> opt({p}, 0.1);
  backward(sum(p));
  opt.step();
  EXPECT_NEAR(p.values()[0], 1.9, 1e-15);
}

TEST(Checkpoint, RoundTripAndShapeValidation) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "gustcast_ckpt_test.ckpt";

  std::mt19937_64 rng(9);
  DenseLayer<double> layer(3, 2, rng);
  BatchNormLayer<double> bn(2);
  bn.running_mean_ = {0.25, -0.5};
  bn.running_var_ = {1.5, 0.75};

  StateViews<double> views;
  layer.append_state("dense", views);
  bn.append_state("bn", views);
  save_checkpoint(path, views);

  DenseLayer<double> restored(3, 2, rng);  // different init
  BatchNormLayer<double> bn2(2);
  StateViews<double> views2;
  restored.append_state("dense", views2);
  bn2.append_state("bn", views2);
  load_checkpoint(path, views2);

  for (std::size_t i = 0; i < layer.weight_.values().size(); ++i)
    EXPECT_DOUBLE_EQ(restored.weight_.values()[i], layer.weight_.values()[i]);
  EXPECT_DOUBLE_EQ(bn2.running_mean_[0], 0.25);
  EXPECT_DOUBLE_EQ(bn2.running_var_[1], 0.75);

  // shape mismatch is rejected
  DenseLayer<double> wrong(3, 4, rng);
  BatchNormLayer<double> bn3(2);
  StateViews<double> views3;
  wrong.append_state("dense", views3);
  bn3.append_state("bn", views3);
  EXPECT_THROW(load_checkpoint(path, views3), std::runtime_error);

  fs::remove(path);
}

TEST(Checkpoint, RejectsCorruptHeader) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "gustcast_ckpt_bad.ckpt";
  std::ofstream(path) << "not a checkpoint";
  std::mt19937_64 rng(9);
  DenseLayer<double> layer(2, 2, rng);
  StateViews<double> views;
  layer.append_state("dense", views);
  EXPECT_THROW(load_checkpoint(path, views), std::runtime_error);
  fs::remove(path);
}

TEST(Snapshot, RestoreRecoversExactState) {
  std::mt19937_64 rng(5);
  DenseLayer<double> layer(4, 3, rng);
  StateViews<double> views;
  layer.append_state("dense", views);
  const auto snap = snapshot_state(views);
  const std::vector<double> before(layer.weight_.values().begin(), layer.weight_.values().end());
  for (auto& v : layer.weight_.values_mut()) v += 1.0;
  restore_state(views, snap);
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_DOUBLE_EQ(layer.weight_.values()[i], before[i]);
}
