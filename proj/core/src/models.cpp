#include "gustcast/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "gustcast/dataio.hpp"

namespace gustcast::models {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

// ---------------------------------------------------------------------------
// CnnHead

CnnHead::CnnHead(GridShape grid, const CnnHeadConfig& config, std::mt19937_64& rng)
    : grid_(grid), config_(config) {
  conv1_ = ad::Conv2dLayer<double>(grid.channels, config.conv1_filters, config.conv1_kernel,
                                   config.conv1_stride, config.padding, rng);
  bn1_ = ad::BatchNormLayer<double>(config.conv1_filters, config.bn_momentum, config.bn_eps);
  conv2_ = ad::Conv2dLayer<double>(config.conv1_filters, config.conv2_filters, config.conv2_kernel,
                                   config.conv2_stride, config.padding, rng);
  bn2_ = ad::BatchNormLayer<double>(config.conv2_filters, config.bn_momentum, config.bn_eps);
}

std::int64_t CnnHead::feature_width() const {
  const std::int64_t h1 = ad::conv_out_extent(grid_.lat, config_.conv1_kernel, config_.conv1_stride,
                                              config_.padding);
  const std::int64_t w1 = ad::conv_out_extent(grid_.lon, config_.conv1_kernel, config_.conv1_stride,
                                              config_.padding);
  const std::int64_t h2 = ad::conv_out_extent(h1, config_.conv2_kernel, config_.conv2_stride, config_.padding);
  const std::int64_t w2 = ad::conv_out_extent(w1, config_.conv2_kernel, config_.conv2_stride, config_.padding);
  return ad::pool_out_extent(h2) * ad::pool_out_extent(w2) * config_.conv2_filters;
}

Tensor<double> CnnHead::forward(const Tensor<double>& frames, bool train,
                                std::mt19937_64& dropout_rng) {
  Tensor<double> x = ad::relu(bn1_.forward(conv1_.forward(frames), train));
  x = ad::relu(bn2_.forward(conv2_.forward(x), train));
  x = ad::maxpool2d(x);
  x = ad::dropout(x, config_.dropout_rate, train, dropout_rng);
  return ad::reshape(x, {frames.dim(0), feature_width()});
}

void CnnHead::collect_params(std::vector<Tensor<double>>& out) {
  conv1_.collect_params(out);
  bn1_.collect_params(out);
  conv2_.collect_params(out);
  bn2_.collect_params(out);
}

void CnnHead::append_state(const std::string& prefix, ad::StateViews<double>& out) {
  conv1_.append_state(prefix + ".conv1", out);
  bn1_.append_state(prefix + ".bn1", out);
  conv2_.append_state(prefix + ".conv2", out);
  bn2_.append_state(prefix + ".bn2", out);
}

// ---------------------------------------------------------------------------
// DenseStack

DenseStack::DenseStack(std::int64_t in_width, const DenseStackConfig& config, std::mt19937_64& rng) {
  std::int64_t width = in_width;
  for (std::int64_t units : config.hidden) {
    hidden_.emplace_back(width, units, rng);
    width = units;
  }
  output_ = ad::DenseLayer<double>(width, 1, rng);
}

Tensor<double> DenseStack::forward(const Tensor<double>& x) const {
  Tensor<double> h = x;
  for (const auto& layer : hidden_) h = ad::relu(layer.forward(h));
  return output_.forward(h);
}

void DenseStack::collect_params(std::vector<Tensor<double>>& out) {
  for (auto& layer : hidden_) layer.collect_params(out);
  output_.collect_params(out);
}

void DenseStack::append_state(const std::string& prefix, ad::StateViews<double>& out) {
  for (std::size_t i = 0; i < hidden_.size(); ++i)
    hidden_[i].append_state(prefix + ".hidden" + std::to_string(i), out);
  output_.append_state(prefix + ".output", out);
}

// ---------------------------------------------------------------------------
// Batch assembly

NeuralBatch make_batch(const data::WindowedDataset& dataset, std::span<const std::int64_t> indices) {
  const std::int64_t b = static_cast<std::int64_t>(indices.size());
  if (b == 0) throw std::invalid_argument("make_batch: empty index set");
  const std::int64_t horizon = dataset.horizon;
  const std::int64_t gfs_frame = dataset.gfs_frame();
  const std::int64_t arp_frame = dataset.arp_frame();
  const std::int64_t tf_width = 4 + dataset.farm_count;

  NeuralBatch batch;
  batch.count = b;
  batch.horizon = horizon;

  std::vector<double> lags;
  lags.reserve(static_cast<std::size_t>(b * dataset.lookback));
  std::vector<double> gfs;
  gfs.reserve(static_cast<std::size_t>(b * horizon * gfs_frame));
  std::vector<double> arp;
  arp.reserve(static_cast<std::size_t>(b * horizon * arp_frame));
  std::vector<double> targets;
  targets.reserve(static_cast<std::size_t>(b * horizon));
  std::vector<std::vector<double>> tf(static_cast<std::size_t>(horizon));
  for (auto& v : tf) v.reserve(static_cast<std::size_t>(b * tf_width));

  for (std::int64_t i : indices) {
    if (i < 0 || i >= dataset.count) throw std::invalid_argument("make_batch: index out of range");
    lags.insert(lags.end(), dataset.x_lags.begin() + i * dataset.lookback,
                dataset.x_lags.begin() + (i + 1) * dataset.lookback);
    gfs.insert(gfs.end(), dataset.x_gfs.begin() + i * horizon * gfs_frame,
               dataset.x_gfs.begin() + (i + 1) * horizon * gfs_frame);
    arp.insert(arp.end(), dataset.x_arp.begin() + i * horizon * arp_frame,
               dataset.x_arp.begin() + (i + 1) * horizon * arp_frame);
    targets.insert(targets.end(), dataset.y.begin() + i * horizon, dataset.y.begin() + (i + 1) * horizon);
    for (std::int64_t h = 0; h < horizon; ++h) {
      auto& row = tf[static_cast<std::size_t>(h)];
      const auto t0 = (i * horizon + h) * 4;
      row.insert(row.end(), dataset.x_time.begin() + t0, dataset.x_time.begin() + t0 + 4);
      const auto f0 = i * dataset.farm_count;
      row.insert(row.end(), dataset.x_farm.begin() + f0, dataset.x_farm.begin() + f0 + dataset.farm_count);
    }
  }

  batch.lags = Tensor<double>::from_values({b, dataset.lookback, 1}, std::move(lags));
  batch.gfs_frames = Tensor<double>::from_values(
      {b * horizon, dataset.gfs_lat, dataset.gfs_lon, dataset.gfs_levels}, std::move(gfs));
  batch.arp_frames = Tensor<double>::from_values(
      {b * horizon, dataset.arp_lat, dataset.arp_lon, dataset.arp_levels}, std::move(arp));
  batch.targets = Tensor<double>::from_values({b, horizon}, std::move(targets));
  batch.step_time_farm.reserve(static_cast<std::size_t>(horizon));
  for (std::int64_t h = 0; h < horizon; ++h)
    batch.step_time_farm.push_back(
        Tensor<double>::from_values({b, tf_width}, std::move(tf[static_cast<std::size_t>(h)])));
  return batch;
}

namespace {

std::vector<std::int64_t> step_rows(std::int64_t batch, std::int64_t horizon, std::int64_t step) {
  std::vector<std::int64_t> rows(static_cast<std::size_t>(batch));
  for (std::int64_t i = 0; i < batch; ++i) rows[static_cast<std::size_t>(i)] = i * horizon + step;
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// SpatialCnn

SpatialCnn::SpatialCnn(const SpatialCnnConfig& config, std::uint64_t init_seed) : config_(config) {
  std::mt19937_64 rng(mix_seed(init_seed, 0x5CC));
  gfs_head_ = CnnHead(config.gfs, config.head, rng);
  arp_head_ = CnnHead(config.arp, config.head, rng);
  dense_ = DenseStack(fused_width(), config.dense, rng);
}

std::int64_t SpatialCnn::fused_width() const {
  return gfs_head_.feature_width() + arp_head_.feature_width() + config_.time_features +
         config_.farm_count;
}

Tensor<double> SpatialCnn::forward(const NeuralBatch& batch, bool train) {
  Tensor<double> gfs_flat = gfs_head_.forward(batch.gfs_frames, train, dropout_rng_);
  Tensor<double> arp_flat = arp_head_.forward(batch.arp_frames, train, dropout_rng_);
  std::vector<Tensor<double>> step_outputs;
  step_outputs.reserve(static_cast<std::size_t>(batch.horizon));
  for (std::int64_t h = 0; h < batch.horizon; ++h) {
    const auto rows = step_rows(batch.count, batch.horizon, h);
    std::vector<Tensor<double>> parts{ad::gather_rows(gfs_flat, rows), ad::gather_rows(arp_flat, rows),
                                      batch.step_time_farm[static_cast<std::size_t>(h)]};
    Tensor<double> fused = ad::concat_cols(std::span<const Tensor<double>>(parts));
    step_outputs.push_back(dense_.forward(fused));
  }
  return ad::concat_cols(std::span<const Tensor<double>>(step_outputs));
}

std::vector<Tensor<double>> SpatialCnn::parameters() {
  std::vector<Tensor<double>> out;
  gfs_head_.collect_params(out);
  arp_head_.collect_params(out);
  dense_.collect_params(out);
  return out;
}

ad::StateViews<double> SpatialCnn::state_views() {
  ad::StateViews<double> out;
  gfs_head_.append_state("gfs_head", out);
  arp_head_.append_state("arp_head", out);
  dense_.append_state("dense", out);
  return out;
}

Matrix SpatialCnn::conv_features(const NeuralBatch& batch) {
  if (!trained())
    throw std::runtime_error("conv_features: model has not been trained (or loaded from a checkpoint)");
  Tensor<double> gfs_flat = gfs_head_.forward(batch.gfs_frames, /*train=*/false, dropout_rng_);
  Tensor<double> arp_flat = arp_head_.forward(batch.arp_frames, /*train=*/false, dropout_rng_);
  const std::int64_t rows = batch.count * batch.horizon;
  const std::int64_t gw = gfs_head_.feature_width();
  const std::int64_t aw = arp_head_.feature_width();
  Matrix out = Matrix::zeros(rows, gw + aw);
  const auto gv = gfs_flat.values();
  const auto av = arp_flat.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy(gv.begin() + r * gw, gv.begin() + (r + 1) * gw, out.data.begin() + r * out.cols);
    std::copy(av.begin() + r * aw, av.begin() + (r + 1) * aw, out.data.begin() + r * out.cols + gw);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CnnRnn

CnnRnn::CnnRnn(const CnnRnnConfig& config, std::uint64_t init_seed) : config_(config) {
  std::mt19937_64 rng(mix_seed(init_seed, 0xC22));
  gfs_head_ = CnnHead(config.gfs, config.head, rng);
  arp_head_ = CnnHead(config.arp, config.head, rng);
  encoder_ = ad::LstmStack<double>(1, config.encoder_units, rng);
  decoder_ = ad::LstmCell<double>(config.time_features + config.farm_count,
                                  config.encoder_units.back(), rng);
  dense_ = DenseStack(fused_width(), config.dense, rng);
}

std::int64_t CnnRnn::fused_width() const {
  return decoder_units() + gfs_head_.feature_width() + arp_head_.feature_width() +
         config_.time_features + config_.farm_count;
}

Tensor<double> CnnRnn::forward(const NeuralBatch& batch, bool train) {
  if (batch.lags.dim(1) != config_.lookback)
    throw std::invalid_argument("cnn-rnn: batch lookback " + std::to_string(batch.lags.dim(1)) +
                                " != configured " + std::to_string(config_.lookback));
  Tensor<double> gfs_flat = gfs_head_.forward(batch.gfs_frames, train, dropout_rng_);
  Tensor<double> arp_flat = arp_head_.forward(batch.arp_frames, train, dropout_rng_);

  auto encoded = encoder_.encode(batch.lags);
  // context vector: the top encoder layer's final state seeds the decoder
  ad::LstmState<double> state = encoded.finals.back();

  std::vector<Tensor<double>> step_outputs;
  step_outputs.reserve(static_cast<std::size_t>(batch.horizon));
  for (std::int64_t h = 0; h < batch.horizon; ++h) {
    const Tensor<double>& dec_in = batch.step_time_farm[static_cast<std::size_t>(h)];
    auto [dec_out, next_state] = decoder_.step(state, dec_in);
    state = next_state;
    const auto rows = step_rows(batch.count, batch.horizon, h);
    std::vector<Tensor<double>> parts{dec_out, ad::gather_rows(gfs_flat, rows),
                                      ad::gather_rows(arp_flat, rows), dec_in};
    Tensor<double> fused = ad::concat_cols(std::span<const Tensor<double>>(parts));
    step_outputs.push_back(dense_.forward(fused));
  }
  return ad::concat_cols(std::span<const Tensor<double>>(step_outputs));
}

std::vector<Tensor<double>> CnnRnn::parameters() {
  std::vector<Tensor<double>> out;
  gfs_head_.collect_params(out);
  arp_head_.collect_params(out);
  encoder_.collect_params(out);
  decoder_.collect_params(out);
  dense_.collect_params(out);
  return out;
}

ad::StateViews<double> CnnRnn::state_views() {
  ad::StateViews<double> out;
  gfs_head_.append_state("gfs_head", out);
  arp_head_.append_state("arp_head", out);
  encoder_.append_state("encoder", out);
  decoder_.append_state("decoder", out);
  dense_.append_state("dense", out);
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

double dataset_mse(NeuralModel& model, const data::WindowedDataset& dataset, std::int64_t batch_size) {
  double se = 0.0;
  std::int64_t n = 0;
  for (std::int64_t start = 0; start < dataset.count; start += batch_size) {
    const std::int64_t stop = std::min(dataset.count, start + batch_size);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    NeuralBatch batch = make_batch(dataset, idx);
    Tensor<double> pred = model.forward(batch, /*train=*/false);
    const auto pv = pred.values();
    const auto tv = batch.targets.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double d = pv[i] - tv[i];
      se += d * d;
    }
    n += static_cast<std::int64_t>(pv.size());
  }
  return se / static_cast<double>(n);
}

TrainingHistory train_impl(NeuralModel& model, const data::WindowedDataset& train_set,
                           const data::WindowedDataset* val_set, int max_epochs, int patience,
                           const TrainingConfig& config) {
  if (train_set.count == 0) throw std::invalid_argument("train: empty training set");
  if (config.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");

  ad::Adam<double> optimizer(model.parameters(), config.adam);
  model.reseed_dropout(mix_seed(config.seed, 0xD120));

  auto views = model.state_views();
  std::vector<std::vector<double>> best_snapshot;
  TrainingHistory history;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;

  std::vector<std::int64_t> order(static_cast<std::size_t>(train_set.count));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0xE90C + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_se = 0.0;
    std::int64_t epoch_n = 0;
    for (std::int64_t start = 0; start < train_set.count; start += config.batch_size) {
      const std::int64_t stop = std::min(train_set.count, start + config.batch_size);
      std::span<const std::int64_t> idx(order.data() + start, static_cast<std::size_t>(stop - start));
      NeuralBatch batch = make_batch(train_set, idx);
      optimizer.zero_grad();
      Tensor<double> pred = model.forward(batch, /*train=*/true);
      Tensor<double> loss = ad::mse_loss(pred, batch.targets);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 " (diverged; lower the learning rate or inspect the data)");
      ad::backward(loss);
      optimizer.step();
      epoch_se += loss_value * static_cast<double>(pred.size());
      epoch_n += pred.size();
    }
    history.train_mse.push_back(epoch_se / static_cast<double>(epoch_n));

    if (val_set == nullptr) continue;

    const double val_mse = dataset_mse(model, *val_set, config.batch_size);
    history.val_mse.push_back(val_mse);
    if (val_mse < best_val) {
      best_val = val_mse;
      history.best_epoch = epoch;
      history.best_val_mse = val_mse;
      best_snapshot = ad::snapshot_state(views);
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best > patience) break;
    }
  }

  if (val_set != nullptr && !best_snapshot.empty()) ad::restore_state(views, best_snapshot);
  if (val_set == nullptr) {
    history.best_epoch = static_cast<int>(history.train_mse.size()) - 1;
    history.best_val_mse = std::numeric_limits<double>::quiet_NaN();
  }
  model.set_trained();
  return history;
}

}  // namespace

TrainingHistory train(NeuralModel& model, const data::WindowedDataset& train_set,
                      const data::WindowedDataset& val_set, const TrainingConfig& config) {
  if (val_set.count == 0) throw std::invalid_argument("train: empty validation set");
  if (config.patience > config.max_epochs)
    throw std::invalid_argument("train: patience must not exceed max_epochs");
  return train_impl(model, train_set, &val_set, config.max_epochs, config.patience, config);
}

TrainingHistory train_fixed(NeuralModel& model, const data::WindowedDataset& train_set, int epochs,
                            const TrainingConfig& config) {
  return train_impl(model, train_set, nullptr, epochs, 0, config);
}

void write_history_csv(const std::filesystem::path& path, const TrainingHistory& history) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "epoch,train_mse,val_mse\n";
  for (std::size_t e = 0; e < history.train_mse.size(); ++e) {
    os << e << ',' << data::format_double(history.train_mse[e]) << ',';
    if (e < history.val_mse.size()) os << data::format_double(history.val_mse[e]);
    os << '\n';
  }
}

std::vector<double> predict(NeuralModel& model, const data::WindowedDataset& dataset,
                            std::int64_t batch_size) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(dataset.count * dataset.horizon));
  for (std::int64_t start = 0; start < dataset.count; start += batch_size) {
    const std::int64_t stop = std::min(dataset.count, start + batch_size);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    NeuralBatch batch = make_batch(dataset, idx);
    Tensor<double> pred = model.forward(batch, /*train=*/false);
    const auto pv = pred.values();
    out.insert(out.end(), pv.begin(), pv.end());
  }
  return out;
}

Matrix extract_conv_features(SpatialCnn& model, const data::WindowedDataset& dataset,
                             std::int64_t batch_size) {
  Matrix out;
  out.rows = 0;
  out.cols = 0;
  for (std::int64_t start = 0; start < dataset.count; start += batch_size) {
    const std::int64_t stop = std::min(dataset.count, start + batch_size);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    NeuralBatch batch = make_batch(dataset, idx);
    Matrix part = model.conv_features(batch);
    if (out.cols == 0) out.cols = part.cols;
    out.rows += part.rows;
    out.data.insert(out.data.end(), part.data.begin(), part.data.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Conv2D + GBM hybrid

HybridModel hybrid_fit(const Matrix& conv_features, const Matrix& tabular,
                       std::span<const double> targets, std::span<const int> row_farm_ids,
                       const trees::GbmParams& params) {
  if (conv_features.rows != tabular.rows)
    throw std::invalid_argument("hybrid_fit: row mismatch between conv features and tabular features");
  if (static_cast<std::int64_t>(targets.size()) != tabular.rows ||
      static_cast<std::int64_t>(row_farm_ids.size()) != tabular.rows)
    throw std::invalid_argument("hybrid_fit: target/provenance length mismatch");

  // column order: original features first, extracted features appended
  const Matrix joined = tabular.hstack(conv_features);

  std::map<int, std::vector<std::int64_t>> rows_by_farm;
  for (std::int64_t r = 0; r < joined.rows; ++r) rows_by_farm[row_farm_ids[static_cast<std::size_t>(r)]].push_back(r);

  HybridModel model;
  for (const auto& [farm, rows] : rows_by_farm) {
    const Matrix x = joined.select_rows(rows);
    std::vector<double> y;
    y.reserve(rows.size());
    for (std::int64_t r : rows) y.push_back(targets[static_cast<std::size_t>(r)]);
    model.per_farm.emplace(farm, trees::fit_gbm(x, y, params));
    model.farm_order.push_back("farm" + std::to_string(farm));
  }
  return model;
}

std::vector<double> hybrid_predict(const HybridModel& model, const Matrix& conv_features,
                                   const Matrix& tabular, std::span<const int> row_farm_ids) {
  if (conv_features.rows != tabular.rows)
    throw std::invalid_argument("hybrid_predict: row mismatch");
  const Matrix joined = tabular.hstack(conv_features);
  std::vector<double> out(static_cast<std::size_t>(joined.rows), 0.0);
  std::map<int, std::vector<std::int64_t>> rows_by_farm;
  for (std::int64_t r = 0; r < joined.rows; ++r) rows_by_farm[row_farm_ids[static_cast<std::size_t>(r)]].push_back(r);
  for (const auto& [farm, rows] : rows_by_farm) {
    auto it = model.per_farm.find(farm);
    if (it == model.per_farm.end())
      throw std::invalid_argument("hybrid_predict: no model for farm " + std::to_string(farm));
    const std::vector<double> pred = trees::predict(it->second, joined.select_rows(rows));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<std::size_t>(rows[i])] = pred[i];
  }
  return out;
}

}  // namespace gustcast::models
