#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <vector>

#include "gustcast/checkpoint.hpp"
#include "gustcast/matrix.hpp"
#include "gustcast/nn.hpp"
#include "gustcast/trees.hpp"
#include "gustcast/windowing.hpp"

namespace gustcast::models {

using ad::Tensor;

struct GridShape {
  int lat = 4;
  int lon = 4;
  int channels = 9;
};

struct CnnHeadConfig {
  int conv1_filters = 264;
  int conv1_kernel = 4;
  int conv1_stride = 1;
  int conv2_filters = 128;
  int conv2_kernel = 2;
  int conv2_stride = 1;
  ad::Padding padding = ad::Padding::kSame;
  double dropout_rate = 0.2;
  double bn_momentum = 0.99;
  double bn_eps = 1e-5;
};

// Two conv blocks (conv -> batchnorm -> relu), 2x2/2 max pool, dropout,
// flatten. One parameter set serves every horizon step: callers batch the
// per-step grids into frames [B*steps, H, W, C].
class CnnHead {
 public:
  CnnHead() = default;
  CnnHead(GridShape grid, const CnnHeadConfig& config, std::mt19937_64& rng);

  // frames [F,H,W,C] -> flat features [F, feature_width()]
  Tensor<double> forward(const Tensor<double>& frames, bool train, std::mt19937_64& dropout_rng);

  std::int64_t feature_width() const;
  const GridShape& grid() const { return grid_; }
  void collect_params(std::vector<Tensor<double>>& out);
  void append_state(const std::string& prefix, ad::StateViews<double>& out);

 private:
  GridShape grid_;
  CnnHeadConfig config_;
  ad::Conv2dLayer<double> conv1_, conv2_;
  ad::BatchNormLayer<double> bn1_, bn2_;
};

struct DenseStackConfig {
  std::vector<std::int64_t> hidden{128, 64};
};

// Hidden dense layers with ReLU, then one linear output unit.
class DenseStack {
 public:
  DenseStack() = default;
  DenseStack(std::int64_t in_width, const DenseStackConfig& config, std::mt19937_64& rng);

  Tensor<double> forward(const Tensor<double>& x) const;  // [B,F] -> [B,1]

  void collect_params(std::vector<Tensor<double>>& out);
  void append_state(const std::string& prefix, ad::StateViews<double>& out);

 private:
  std::vector<ad::DenseLayer<double>> hidden_;
  ad::DenseLayer<double> output_;
};

// Untracked input tensors for one mini-batch. CNN frames are laid out
// sample-major, step-minor: frame b*horizon + h is sample b's step-h grid.
struct NeuralBatch {
  std::int64_t count = 0;
  std::int64_t horizon = 24;
  Tensor<double> lags;        // [B, lookback, 1]
  Tensor<double> gfs_frames;  // [B*horizon, H, W, C]
  Tensor<double> arp_frames;  // [B*horizon, H, W, C]
  std::vector<Tensor<double>> step_time_farm;  // per step [B, 4 + farm_count]
  Tensor<double> targets;     // [B, horizon]
};

NeuralBatch make_batch(const data::WindowedDataset& dataset, std::span<const std::int64_t> indices);

// Common surface the training loop drives.
class NeuralModel {
 public:
  virtual ~NeuralModel() = default;

  virtual Tensor<double> forward(const NeuralBatch& batch, bool train) = 0;
  virtual std::vector<Tensor<double>> parameters() = 0;
  virtual ad::StateViews<double> state_views() = 0;
  virtual std::int64_t horizon() const = 0;

  void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }
  bool trained() const { return trained_; }
  void set_trained(bool on = true) { trained_ = on; }

 protected:
  std::mt19937_64 dropout_rng_{0};
  bool trained_ = false;
};

struct SpatialCnnConfig {
  GridShape gfs{4, 4, 9};
  GridShape arp{5, 5, 11};
  CnnHeadConfig head;
  DenseStackConfig dense;
  std::int64_t horizon = 24;
  int time_features = 4;
  int farm_count = 7;
};

// Spatial-only forecaster: per step, conv features of both sources plus time
// and farm features feed the dense stack; no lag input anywhere.
class SpatialCnn : public NeuralModel {
 public:
  SpatialCnn(const SpatialCnnConfig& config, std::uint64_t init_seed);

  Tensor<double> forward(const NeuralBatch& batch, bool train) override;
  std::vector<Tensor<double>> parameters() override;
  ad::StateViews<double> state_views() override;
  std::int64_t horizon() const override { return config_.horizon; }

  const SpatialCnnConfig& config() const { return config_; }
  std::int64_t fused_width() const;

  // Pooled-and-flattened conv features of both heads, dropout and batchnorm
  // in inference mode; rows sample-major, step-minor. Requires a trained
  // model.
  Matrix conv_features(const NeuralBatch& batch);

  CnnHead& gfs_head() { return gfs_head_; }
  CnnHead& arp_head() { return arp_head_; }

 private:
  SpatialCnnConfig config_;
  CnnHead gfs_head_, arp_head_;
  DenseStack dense_;
};

struct CnnRnnConfig {
  GridShape gfs{4, 4, 9};
  GridShape arp{5, 5, 11};
  CnnHeadConfig head;
  DenseStackConfig dense;
  std::vector<std::int64_t> encoder_units{128, 64};
  std::int64_t lookback = 48;
  std::int64_t horizon = 24;
  int time_features = 4;
  int farm_count = 7;
};

// Parallel CNN-RNN: an LSTM encoder summarizes the 48 lagged power values;
// its top-layer final state seeds a decoder cell unrolled across the horizon.
// Step h fuses the decoder output with both conv feature vectors and the
// step's time/farm features, then the shared dense stack emits the scalar
// prediction for that step.
class CnnRnn : public NeuralModel {
 public:
  CnnRnn(const CnnRnnConfig& config, std::uint64_t init_seed);

  Tensor<double> forward(const NeuralBatch& batch, bool train) override;
  std::vector<Tensor<double>> parameters() override;
  ad::StateViews<double> state_views() override;
  std::int64_t horizon() const override { return config_.horizon; }

  const CnnRnnConfig& config() const { return config_; }
  std::int64_t fused_width() const;
  std::int64_t decoder_units() const { return config_.encoder_units.back(); }

 private:
  CnnRnnConfig config_;
  CnnHead gfs_head_, arp_head_;
  ad::LstmStack<double> encoder_;
  ad::LstmCell<double> decoder_;
  DenseStack dense_;
};

struct TrainingConfig {
  std::int64_t batch_size = 64;
  int max_epochs = 300;
  int patience = 20;
  std::uint64_t seed = 0;
  ad::AdamConfig adam;
};

struct TrainingHistory {
  std::vector<double> train_mse;  // per epoch
  std::vector<double> val_mse;    // per epoch (empty for fixed-epoch runs)
  int best_epoch = -1;            // 0-based epoch whose weights were kept
  double best_val_mse = 0.0;
};

// Mini-batch Adam on MSE with per-epoch validation and best-epoch weight
// checkpointing; early stop when the validation loss has not improved for
// `patience` epochs. Deterministic given the seed (batch order and dropout
// both derive from it). Throws on a non-finite loss.
TrainingHistory train(NeuralModel& model, const data::WindowedDataset& train_set,
                      const data::WindowedDataset& val_set, const TrainingConfig& config);

// Fixed-epoch run without validation (the merge-and-retrain pass).
TrainingHistory train_fixed(NeuralModel& model, const data::WindowedDataset& train_set, int epochs,
                            const TrainingConfig& config);

void write_history_csv(const std::filesystem::path& path, const TrainingHistory& history);

// Inference over a whole dataset; returns [N, horizon] row-major predictions.
std::vector<double> predict(NeuralModel& model, const data::WindowedDataset& dataset,
                            std::int64_t batch_size = 256);

// Conv feature extraction over a whole dataset: [N*horizon, 1024] for the
// default heads (512 per source).
Matrix extract_conv_features(SpatialCnn& model, const data::WindowedDataset& dataset,
                             std::int64_t batch_size = 256);

// GBM per farm on [original tabular || extracted conv] columns.
struct HybridModel {
  std::vector<std::string> farm_order;  // bookkeeping only
  std::map<int, trees::GbmModel> per_farm;
  bool include_lags = false;
};

HybridModel hybrid_fit(const Matrix& conv_features, const Matrix& tabular,
                       std::span<const double> targets, std::span<const int> row_farm_ids,
                       const trees::GbmParams& params);
std::vector<double> hybrid_predict(const HybridModel& model, const Matrix& conv_features,
                                   const Matrix& tabular, std::span<const int> row_farm_ids);

}  // namespace gustcast::models
