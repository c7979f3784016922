#pragma once

#include <random>
#include <span>
#include <vector>

#include "gustcast/tensor.hpp"

namespace gustcast::ad {

enum class Padding { kValid, kSame };

// Output extent of a strided convolution along one axis.
std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride, Padding padding);
// Output extent of the fixed 2x2/stride-2 max pool.
std::int64_t pool_out_extent(std::int64_t in);

// Elementwise, same shape.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

// x[..., C] + b[C], broadcast over every leading axis. Covers dense and
// convolution bias addition.
template <typename T> Tensor<T> add_channel(const Tensor<T>& x, const Tensor<T>& b);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);  // [M,K]x[K,N]

// dense(x, w, b) = x.w + b with x:[B,F], w:[F,U], b:[U].
template <typename T> Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> tanh_op(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);   // -> scalar
template <typename T> Tensor<T> mean(const Tensor<T>& x);  // -> scalar

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Column range [c0, c1) of a 2-D tensor.
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::int64_t c0, std::int64_t c1);
// Time step t of a [B,T,F] tensor -> [B,F].
template <typename T> Tensor<T> slice_step(const Tensor<T>& x, std::int64_t t);
// Horizontal concat of 2-D tensors sharing the leading extent.
template <typename T> Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
// Row selection of a 2-D tensor; backward scatter-adds.
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::int64_t> rows);

// Spatial ops use channels-last layout: x[B,H,W,C], kernel[kh,kw,Cin,Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::int64_t stride, Padding padding);

// 2x2 window, stride 2; gradient routes to the first maximal element of each
// window in row-major order.
template <typename T> Tensor<T> maxpool2d(const Tensor<T>& x);

// Channels-last batch normalization over all leading axes. Train mode uses
// biased batch moments and folds them into the running stats with
// running = momentum*running + (1-momentum)*batch; infer mode reads the
// running stats only.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::vector<T>& running_mean, std::vector<T>& running_var, bool train,
                     T momentum, T eps);

// Inverted dropout: train mode zeroes with probability rate and scales the
// survivors by 1/(1-rate); infer mode is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool train, std::mt19937_64& rng);

template <typename T> Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

}  // namespace gustcast::ad
