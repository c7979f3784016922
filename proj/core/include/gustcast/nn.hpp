#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gustcast/ops.hpp"
#include "gustcast/tensor.hpp"

namespace gustcast::ad {

// Named view over a piece of persistent model state (parameter values or
// batch-norm running statistics). Checkpoints and best-epoch snapshots
// operate on these.
template <typename T>
struct NamedView {
  std::string name;
  Shape shape;
  std::span<T> data;
};

template <typename T>
using StateViews = std::vector<NamedView<T>>;

// Fan-in-scaled uniform init, U(-sqrt(1/fan_in), +sqrt(1/fan_in)).
template <typename T>
void init_fan_in_uniform(Tensor<T>& param, std::int64_t fan_in, std::mt19937_64& rng);

template <typename T>
class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(std::int64_t in_features, std::int64_t units, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& x) const { return dense(x, weight_, bias_); }

  std::int64_t in_features() const { return weight_.dim(0); }
  std::int64_t units() const { return weight_.dim(1); }
  void collect_params(std::vector<Tensor<T>>& out);
  void append_state(const std::string& prefix, StateViews<T>& out);

  Tensor<T> weight_;  // [F,U]
  Tensor<T> bias_;    // [U]
};

template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(std::int64_t in_channels, std::int64_t filters, std::int64_t kernel,
              std::int64_t stride, Padding padding, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, kernel_, bias_, stride_, padding_); }

  void collect_params(std::vector<Tensor<T>>& out);
  void append_state(const std::string& prefix, StateViews<T>& out);

  Tensor<T> kernel_;  // [kh,kw,Cin,Cout]
  Tensor<T> bias_;    // [Cout]
  std::int64_t stride_ = 1;
  Padding padding_ = Padding::kSame;
};

template <typename T>
class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  explicit BatchNormLayer(std::int64_t channels, T momentum = T(0.99), T eps = T(1e-5));

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    return batch_norm(x, gamma_, beta_, running_mean_, running_var_, train, momentum_, eps_);
  }

  void collect_params(std::vector<Tensor<T>>& out);
  void append_state(const std::string& prefix, StateViews<T>& out);

  Tensor<T> gamma_;
  Tensor<T> beta_;
  std::vector<T> running_mean_;
  std::vector<T> running_var_;
  T momentum_ = T(0.99);
  T eps_ = T(1e-5);
};

template <typename T>
struct LstmState {
  Tensor<T> hidden;  // [B,U]
  Tensor<T> cell;    // [B,U]
};

// Standard LSTM cell (gate order i,f,g,o); forget-gate bias initialized to 1.
template <typename T>
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(std::int64_t input_size, std::int64_t units, std::mt19937_64& rng);

  // One step; returns (output == new hidden, new state).
  std::pair<Tensor<T>, LstmState<T>> step(const LstmState<T>& state, const Tensor<T>& x) const;
  LstmState<T> zero_state(std::int64_t batch) const;

  std::int64_t units() const { return units_; }
  std::int64_t input_size() const { return w_input_.dim(0); }
  void collect_params(std::vector<Tensor<T>>& out);
  void append_state(const std::string& prefix, StateViews<T>& out);

  Tensor<T> w_input_;   // [F,4U]
  Tensor<T> w_hidden_;  // [U,4U]
  Tensor<T> bias_;      // [4U]
  std::int64_t units_ = 0;
};

// Stacked LSTM encoder; layer l feeds layer l+1 its per-step output.
template <typename T>
class LstmStack {
 public:
  LstmStack() = default;
  LstmStack(std::int64_t input_size, const std::vector<std::int64_t>& layer_units, std::mt19937_64& rng);

  struct EncodeResult {
    Tensor<T> outputs;                   // [B,T,U_last]
    std::vector<LstmState<T>> finals;    // per layer
  };
  EncodeResult encode(const Tensor<T>& sequence) const;  // sequence [B,T,F]

  const std::vector<LstmCell<T>>& layers() const { return layers_; }
  void collect_params(std::vector<Tensor<T>>& out);
  void append_state(const std::string& prefix, StateViews<T>& out);

 private:
  std::vector<LstmCell<T>> layers_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam. step() consumes the gradients accumulated since the
// last zero_grad(); a parameter whose gradient was never populated is an
// error.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>> params, AdamConfig config = {});

  void step();
  void zero_grad();
  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  AdamConfig config_;
  std::int64_t step_ = 0;
};

template <typename T>
class Sgd {
 public:
  explicit Sgd(std::vector<Tensor<T>> params, double learning_rate);
  void step();
  void zero_grad();
  std::int64_t step_count() const { return step_; }

 private:
  std::vector<Tensor<T>> params_;
  double learning_rate_;
  std::int64_t step_ = 0;
};

// Deep copy / restore of everything reachable through state views.
template <typename T>
std::vector<std::vector<T>> snapshot_state(const StateViews<T>& views);
template <typename T>
void restore_state(const StateViews<T>& views, const std::vector<std::vector<T>>& snapshot);

#define GUSTCAST_NN_EXTERN(T)                                                        \
  extern template void init_fan_in_uniform(Tensor<T>&, std::int64_t, std::mt19937_64&); \
  extern template class DenseLayer<T>;                                               \
  extern template class Conv2dLayer<T>;                                              \
  extern template class BatchNormLayer<T>;                                           \
  extern template class LstmCell<T>;                                                 \
  extern template class LstmStack<T>;                                                \
  extern template class Adam<T>;                                                     \
  extern template class Sgd<T>;                                                      \
  extern template std::vector<std::vector<T>> snapshot_state(const StateViews<T>&);  \
  extern template void restore_state(const StateViews<T>&, const std::vector<std::vector<T>>&);

GUSTCAST_NN_EXTERN(float)
GUSTCAST_NN_EXTERN(double)
#undef GUSTCAST_NN_EXTERN

}  // namespace gustcast::ad
