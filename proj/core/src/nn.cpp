#include "gustcast/nn.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace gustcast::ad {

template <typename T>
void init_fan_in_uniform(Tensor<T>& param, std::int64_t fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(1.0 / static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (T& v : param.values_mut()) v = static_cast<T>(dist(rng));
}

namespace {

template <typename T>
NamedView<T> view_of(const std::string& name, Tensor<T>& t) {
  return NamedView<T>{name, t.shape(), t.values_mut()};
}

template <typename T>
NamedView<T> view_of(const std::string& name, std::vector<T>& v) {
  return NamedView<T>{name, Shape{static_cast<std::int64_t>(v.size())}, std::span<T>(v)};
}

}  // namespace

// ---------------------------------------------------------------------------
// DenseLayer

template <typename T>
DenseLayer<T>::DenseLayer(std::int64_t in_features, std::int64_t units, std::mt19937_64& rng) {
  weight_ = Tensor<T>::zeros({in_features, units});
  bias_ = Tensor<T>::zeros({units});
  init_fan_in_uniform(weight_, in_features, rng);
  weight_.set_tracked();
  bias_.set_tracked();
}

template <typename T>
void DenseLayer<T>::collect_params(std::vector<Tensor<T>>& out) {
  out.push_back(weight_);
  out.push_back(bias_);
}

template <typename T>
void DenseLayer<T>::append_state(const std::string& prefix, StateViews<T>& out) {
  out.push_back(view_of(prefix + ".weight", weight_));
  out.push_back(view_of(prefix + ".bias", bias_));
}

// ---------------------------------------------------------------------------
// Conv2dLayer

template <typename T>
Conv2dLayer<T>::Conv2dLayer(std::int64_t in_channels, std::int64_t filters, std::int64_t kernel,
                            std::int64_t stride, Padding padding, std::mt19937_64& rng)
    : stride_(stride), padding_(padding) {
  kernel_ = Tensor<T>::zeros({kernel, kernel, in_channels, filters});
  bias_ = Tensor<T>::zeros({filters});
  init_fan_in_uniform(kernel_, kernel * kernel * in_channels, rng);
  kernel_.set_tracked();
  bias_.set_tracked();
}

template <typename T>
void Conv2dLayer<T>::collect_params(std::vector<Tensor<T>>& out) {
  out.push_back(kernel_);
  out.push_back(bias_);
}

template <typename T>
void Conv2dLayer<T>::append_state(const std::string& prefix, StateViews<T>& out) {
  out.push_back(view_of(prefix + ".kernel", kernel_));
  out.push_back(view_of(prefix + ".bias", bias_));
}

// ---------------------------------------------------------------------------
// BatchNormLayer

template <typename T>
BatchNormLayer<T>::BatchNormLayer(std::int64_t channels, T momentum, T eps)
    : momentum_(momentum), eps_(eps) {
  gamma_ = Tensor<T>::filled({channels}, T(1));
  beta_ = Tensor<T>::zeros({channels});
  gamma_.set_tracked();
  beta_.set_tracked();
  running_mean_.assign(static_cast<std::size_t>(channels), T(0));
  running_var_.assign(static_cast<std::size_t>(channels), T(1));
}

template <typename T>
void BatchNormLayer<T>::collect_params(std::vector<Tensor<T>>& out) {
  out.push_back(gamma_);
  out.push_back(beta_);
}

template <typename T>
void BatchNormLayer<T>::append_state(const std::string& prefix, StateViews<T>& out) {
  out.push_back(view_of(prefix + ".gamma", gamma_));
  out.push_back(view_of(prefix + ".beta", beta_));
  out.push_back(view_of(prefix + ".running_mean", running_mean_));
  out.push_back(view_of(prefix + ".running_var", running_var_));
}

// ---------------------------------------------------------------------------
// LstmCell

template <typename T>
LstmCell<T>::LstmCell(std::int64_t input_size, std::int64_t units, std::mt19937_64& rng)
    : units_(units) {
  w_input_ = Tensor<T>::zeros({input_size, 4 * units});
  w_hidden_ = Tensor<T>::zeros({units, 4 * units});
  bias_ = Tensor<T>::zeros({4 * units});
  init_fan_in_uniform(w_input_, units, rng);
  init_fan_in_uniform(w_hidden_, units, rng);
  auto b = bias_.values_mut();
  std::fill(b.begin() + units, b.begin() + 2 * units, T(1));  // forget gate
  w_input_.set_tracked();
  w_hidden_.set_tracked();
  bias_.set_tracked();
}

template <typename T>
LstmState<T> LstmCell<T>::zero_state(std::int64_t batch) const {
  return LstmState<T>{Tensor<T>::zeros({batch, units_}), Tensor<T>::zeros({batch, units_})};
}

template <typename T>
std::pair<Tensor<T>, LstmState<T>> LstmCell<T>::step(const LstmState<T>& state,
                                                     const Tensor<T>& x) const {
  if (x.rank() != 2 || x.dim(1) != w_input_.dim(0))
    throw std::invalid_argument("lstm: input width " + shape_str(x.shape()) + " does not match cell input size " +
                                std::to_string(w_input_.dim(0)));
  if (state.hidden.shape() != state.cell.shape())
    throw std::invalid_argument("lstm: hidden/cell state shape mismatch");
  if (state.hidden.dim(1) != units_)
    throw std::invalid_argument("lstm: state width " + std::to_string(state.hidden.dim(1)) +
                                " does not match units " + std::to_string(units_));
  const std::int64_t u = units_;
  Tensor<T> gates = add_channel(add(matmul(x, w_input_), matmul(state.hidden, w_hidden_)), bias_);
  Tensor<T> gate_i = sigmoid(slice_cols(gates, 0, u));
  Tensor<T> gate_f = sigmoid(slice_cols(gates, u, 2 * u));
  Tensor<T> gate_g = tanh_op(slice_cols(gates, 2 * u, 3 * u));
  Tensor<T> gate_o = sigmoid(slice_cols(gates, 3 * u, 4 * u));
  Tensor<T> new_cell = add(mul(gate_f, state.cell), mul(gate_i, gate_g));
  Tensor<T> new_hidden = mul(gate_o, tanh_op(new_cell));
  return {new_hidden, LstmState<T>{new_hidden, new_cell}};
}

template <typename T>
void LstmCell<T>::collect_params(std::vector<Tensor<T>>& out) {
  out.push_back(w_input_);
  out.push_back(w_hidden_);
  out.push_back(bias_);
}

template <typename T>
void LstmCell<T>::append_state(const std::string& prefix, StateViews<T>& out) {
  out.push_back(view_of(prefix + ".w_input", w_input_));
  out.push_back(view_of(prefix + ".w_hidden", w_hidden_));
  out.push_back(view_of(prefix + ".bias", bias_));
}

// ---------------------------------------------------------------------------
// LstmStack

template <typename T>
LstmStack<T>::LstmStack(std::int64_t input_size, const std::vector<std::int64_t>& layer_units,
                        std::mt19937_64& rng) {
  if (layer_units.empty()) throw std::invalid_argument("lstm stack: needs at least one layer");
  std::int64_t in = input_size;
  for (std::int64_t units : layer_units) {
    layers_.emplace_back(in, units, rng);
    in = units;
  }
}

template <typename T>
typename LstmStack<T>::EncodeResult LstmStack<T>::encode(const Tensor<T>& sequence) const {
  if (sequence.rank() != 3)
    throw std::invalid_argument("lstm encode: expects [B,T,F] input, got " + shape_str(sequence.shape()));
  const std::int64_t batch = sequence.dim(0);
  const std::int64_t steps = sequence.dim(1);
  if (steps < 1) throw std::invalid_argument("lstm encode: empty sequence");

  std::vector<LstmState<T>> states;
  states.reserve(layers_.size());
  for (const auto& cell : layers_) states.push_back(cell.zero_state(batch));

  std::vector<Tensor<T>> top_outputs;
  top_outputs.reserve(static_cast<std::size_t>(steps));
  for (std::int64_t t = 0; t < steps; ++t) {
    Tensor<T> input = slice_step(sequence, t);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto [out, next] = layers_[l].step(states[l], input);
      states[l] = next;
      input = out;
    }
    top_outputs.push_back(input);
  }
  const std::int64_t top_units = layers_.back().units();
  Tensor<T> outputs = reshape(concat_cols(std::span<const Tensor<T>>(top_outputs)),
                              {batch, steps, top_units});
  return EncodeResult{std::move(outputs), std::move(states)};
}

template <typename T>
void LstmStack<T>::collect_params(std::vector<Tensor<T>>& out) {
  for (auto& cell : layers_) cell.collect_params(out);
}

template <typename T>
void LstmStack<T>::append_state(const std::string& prefix, StateViews<T>& out) {
  for (std::size_t l = 0; l < layers_.size(); ++l)
    layers_[l].append_state(prefix + ".layer" + std::to_string(l), out);
}

// ---------------------------------------------------------------------------
// Optimizers

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.size()), T(0));
    v_.emplace_back(static_cast<std::size_t>(p.size()), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  ++step_;
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T lr = static_cast<T>(config_.learning_rate);
  const T eps = static_cast<T>(config_.epsilon);
  const T bc1 = T(1) - static_cast<T>(std::pow(config_.beta1, static_cast<double>(step_)));
  const T bc2 = T(1) - static_cast<T>(std::pow(config_.beta2, static_cast<double>(step_)));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad())
      throw std::runtime_error("adam: missing gradient for parameter " + std::to_string(k));
    const auto g = p.grad();
    auto vals = p.values_mut();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] / bc1;
      const T v_hat = v[i] / bc2;
      vals[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
Sgd<T>::Sgd(std::vector<Tensor<T>> params, double learning_rate)
    : params_(std::move(params)), learning_rate_(learning_rate) {}

template <typename T>
void Sgd<T>::step() {
  ++step_;
  const T lr = static_cast<T>(learning_rate_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad())
      throw std::runtime_error("sgd: missing gradient for parameter " + std::to_string(k));
    const auto g = p.grad();
    auto vals = p.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= lr * g[i];
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Snapshots

template <typename T>
std::vector<std::vector<T>> snapshot_state(const StateViews<T>& views) {
  std::vector<std::vector<T>> snap;
  snap.reserve(views.size());
  for (const auto& v : views) snap.emplace_back(v.data.begin(), v.data.end());
  return snap;
}

template <typename T>
void restore_state(const StateViews<T>& views, const std::vector<std::vector<T>>& snapshot) {
  if (views.size() != snapshot.size())
    throw std::invalid_argument("restore_state: snapshot entry count mismatch");
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].data.size() != snapshot[i].size())
      throw std::invalid_argument("restore_state: size mismatch for " + views[i].name);
    std::copy(snapshot[i].begin(), snapshot[i].end(), views[i].data.begin());
  }
}

#define GUSTCAST_NN_INSTANTIATE(T)                                                       \
  template void init_fan_in_uniform(Tensor<T>&, std::int64_t, std::mt19937_64&);         \
  template class DenseLayer<T>;                                                          \
  template class Conv2dLayer<T>;                                                         \
  template class BatchNormLayer<T>;                                                      \
  template class LstmCell<T>;                                                            \
  template class LstmStack<T>;                                                           \
  template class Adam<T>;                                                                \
  template class Sgd<T>;                                                                 \
  template std::vector<std::vector<T>> snapshot_state(const StateViews<T>&);             \
  template void restore_state(const StateViews<T>&, const std::vector<std::vector<T>>&);

GUSTCAST_NN_INSTANTIATE(float)
GUSTCAST_NN_INSTANTIATE(double)
#undef GUSTCAST_NN_INSTANTIATE

}  // namespace gustcast::ad
