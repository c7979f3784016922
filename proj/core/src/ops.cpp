#include "gustcast/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <utility>

namespace gustcast::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConst = Eigen::Map<const RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
T* grad_buf(Node<T>& n) {
  if (n.grad.empty()) n.grad.assign(n.values.size(), T(0));
  return n.grad.data();
}

// Interior nodes exist only when some parent is tracked; otherwise the result
// is a plain constant leaf and the closure is discarded.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> values, std::vector<NodePtr<T>> parents,
                  std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  bool tracked = false;
  for (const auto& p : parents)
    if (p && p->tracked) tracked = true;
  if (tracked) {
    n->tracked = true;
    n->is_leaf = false;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

struct ConvGeom {
  std::int64_t batch, in_h, in_w, in_c, kh, kw, out_c, stride;
  std::int64_t out_h, out_w, pad_top, pad_left;
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                       std::int64_t stride, Padding padding) {
  if (x.rank() != 4) throw std::invalid_argument("conv2d: input must be [B,H,W,C], got " + shape_str(x.shape()));
  if (kernel.rank() != 4)
    throw std::invalid_argument("conv2d: kernel must be [kh,kw,Cin,Cout], got " + shape_str(kernel.shape()));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvGeom g;
  g.batch = x.dim(0); g.in_h = x.dim(1); g.in_w = x.dim(2); g.in_c = x.dim(3);
  g.kh = kernel.dim(0); g.kw = kernel.dim(1); g.out_c = kernel.dim(3); g.stride = stride;
  if (kernel.dim(2) != g.in_c)
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(kernel.dim(2)) +
                                " input channels, input has " + std::to_string(g.in_c));
  if (bias.size() != g.out_c)
    throw std::invalid_argument("conv2d: bias length " + std::to_string(bias.size()) +
                                " != output channels " + std::to_string(g.out_c));
  if (padding == Padding::kValid && (g.kh > g.in_h || g.kw > g.in_w))
    throw std::invalid_argument("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                                " exceeds input " + std::to_string(g.in_h) + "x" + std::to_string(g.in_w) +
                                " with valid padding");
  g.out_h = conv_out_extent(g.in_h, g.kh, stride, padding);
  g.out_w = conv_out_extent(g.in_w, g.kw, stride, padding);
  if (padding == Padding::kSame) {
    const std::int64_t total_h = std::max<std::int64_t>((g.out_h - 1) * stride + g.kh - g.in_h, 0);
    const std::int64_t total_w = std::max<std::int64_t>((g.out_w - 1) * stride + g.kw - g.in_w, 0);
    g.pad_top = total_h / 2;
    g.pad_left = total_w / 2;
  } else {
    g.pad_top = 0;
    g.pad_left = 0;
  }
  return g;
}

// Patches matrix [B*out_h*out_w, kh*kw*C]; out-of-range taps read as zero.
template <typename T>
std::vector<T> im2col(const T* x, const ConvGeom& g) {
  const std::int64_t patch = g.kh * g.kw * g.in_c;
  std::vector<T> cols(static_cast<std::size_t>(g.batch * g.out_h * g.out_w * patch), T(0));
  T* dst = cols.data();
  for (std::int64_t b = 0; b < g.batch; ++b) {
    const T* xb = x + b * g.in_h * g.in_w * g.in_c;
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        for (std::int64_t r = 0; r < g.kh; ++r) {
          const std::int64_t ih = oh * g.stride - g.pad_top + r;
          if (ih < 0 || ih >= g.in_h) { dst += g.kw * g.in_c; continue; }
          for (std::int64_t c = 0; c < g.kw; ++c) {
            const std::int64_t iw = ow * g.stride - g.pad_left + c;
            if (iw < 0 || iw >= g.in_w) { dst += g.in_c; continue; }
            const T* src = xb + (ih * g.in_w + iw) * g.in_c;
            std::copy(src, src + g.in_c, dst);
            dst += g.in_c;
          }
        }
      }
    }
  }
  return cols;
}

// Scatter-add of a patches-gradient back onto the input layout.
template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* gx) {
  const T* src = cols;
  for (std::int64_t b = 0; b < g.batch; ++b) {
    T* xb = gx + b * g.in_h * g.in_w * g.in_c;
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        for (std::int64_t r = 0; r < g.kh; ++r) {
          const std::int64_t ih = oh * g.stride - g.pad_top + r;
          if (ih < 0 || ih >= g.in_h) { src += g.kw * g.in_c; continue; }
          for (std::int64_t c = 0; c < g.kw; ++c) {
            const std::int64_t iw = ow * g.stride - g.pad_left + c;
            if (iw < 0 || iw >= g.in_w) { src += g.in_c; continue; }
            T* dst = xb + (ih * g.in_w + iw) * g.in_c;
            for (std::int64_t ch = 0; ch < g.in_c; ++ch) dst[ch] += src[ch];
            src += g.in_c;
          }
        }
      }
    }
  }
}

}  // namespace

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride, Padding padding) {
  if (padding == Padding::kSame) return (in + stride - 1) / stride;
  return (in - kernel) / stride + 1;
}

std::int64_t pool_out_extent(std::int64_t in) { return (in - 2) / 2 + 1; }

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  std::vector<T> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto an = a.node(); auto bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& n) {
    if (an->tracked) an->accumulate_grad(n.grad.data(), n.size());
    if (bn->tracked) bn->accumulate_grad(n.grad.data(), n.size());
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  std::vector<T> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto an = a.node(); auto bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& n) {
    if (an->tracked) an->accumulate_grad(n.grad.data(), n.size());
    if (bn->tracked) {
      T* g = grad_buf(*bn);
      for (std::int64_t i = 0; i < n.size(); ++i) g[i] -= n.grad[static_cast<std::size_t>(i)];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  std::vector<T> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  auto an = a.node(); auto bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& n) {
    if (an->tracked) {
      T* g = grad_buf(*an);
      for (std::int64_t i = 0; i < n.size(); ++i)
        g[i] += n.grad[static_cast<std::size_t>(i)] * bn->values[static_cast<std::size_t>(i)];
    }
    if (bn->tracked) {
      T* g = grad_buf(*bn);
      for (std::int64_t i = 0; i < n.size(); ++i)
        g[i] += n.grad[static_cast<std::size_t>(i)] * an->values[static_cast<std::size_t>(i)];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (T& v : out) v *= factor;
  auto xn = x.node();
  return make_op<T>(x.shape(), std::move(out), {xn}, [xn, factor](Node<T>& n) {
    if (!xn->tracked) return;
    T* g = grad_buf(*xn);
    for (std::int64_t i = 0; i < n.size(); ++i) g[i] += factor * n.grad[static_cast<std::size_t>(i)];
  });
}

template <typename T>
Tensor<T> add_channel(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() < 1) throw std::invalid_argument("add_channel: input must have a channel axis");
  const std::int64_t channels = x.shape().back();
  if (b.size() != channels)
    throw std::invalid_argument("add_channel: bias length " + std::to_string(b.size()) +
                                " != channels " + std::to_string(channels));
  std::vector<T> out(x.values().begin(), x.values().end());
  const auto bv = b.values();
  const std::int64_t rows = x.size() / channels;
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < channels; ++c) out[static_cast<std::size_t>(r * channels + c)] += bv[static_cast<std::size_t>(c)];
  auto xn = x.node(); auto bn = b.node();
  return make_op<T>(x.shape(), std::move(out), {xn, bn}, [xn, bn, rows, channels](Node<T>& n) {
    if (xn->tracked) xn->accumulate_grad(n.grad.data(), n.size());
    if (bn->tracked) {
      T* g = grad_buf(*bn);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < channels; ++c) g[c] += n.grad[static_cast<std::size_t>(r * channels + c)];
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expects 2-D operands, got " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n_cols = b.dim(1);
  if (b.dim(0) != k)
    throw std::invalid_argument("matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  std::vector<T> out(static_cast<std::size_t>(m * n_cols));
  MapConst<T> am(a.values().data(), m, k);
  MapConst<T> bm(b.values().data(), k, n_cols);
  MapMat<T>(out.data(), m, n_cols).noalias() = am * bm;
  auto an = a.node(); auto bn = b.node();
  return make_op<T>({m, n_cols}, std::move(out), {an, bn}, [an, bn, m, k, n_cols](Node<T>& n) {
    MapConst<T> g(n.grad.data(), m, n_cols);
    if (an->tracked) {
      MapConst<T> bm(bn->values.data(), k, n_cols);
      MapMat<T>(grad_buf(*an), m, k).noalias() += g * bm.transpose();
    }
    if (bn->tracked) {
      MapConst<T> am(an->values.data(), m, k);
      MapMat<T>(grad_buf(*bn), k, n_cols).noalias() += am.transpose() * g;
    }
  });
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_channel(matmul(x, w), b);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (T& v : out) v = v > T(0) ? v : T(0);
  auto xn = x.node();
  return make_op<T>(x.shape(), std::move(out), {xn}, [xn](Node<T>& n) {
    if (!xn->tracked) return;
    T* g = grad_buf(*xn);
    for (std::int64_t i = 0; i < n.size(); ++i)
      if (xn->values[static_cast<std::size_t>(i)] > T(0)) g[i] += n.grad[static_cast<std::size_t>(i)];
  });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (T& v : out) v = std::tanh(v);
  auto xn = x.node();
  return make_op<T>(x.shape(), std::move(out), {xn}, [xn](Node<T>& n) {
    if (!xn->tracked) return;
    T* g = grad_buf(*xn);
    for (std::int64_t i = 0; i < n.size(); ++i) {
      const T y = n.values[static_cast<std::size_t>(i)];
      g[i] += n.grad[static_cast<std::size_t>(i)] * (T(1) - y * y);
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (T& v : out) v = T(1) / (T(1) + std::exp(-v));
  auto xn = x.node();
  return make_op<T>(x.shape(), std::move(out), {xn}, [xn](Node<T>& n) {
    if (!xn->tracked) return;
    T* g = grad_buf(*xn);
    for (std::int64_t i = 0; i < n.size(); ++i) {
      const T y = n.values[static_cast<std::size_t>(i)];
      g[i] += n.grad[static_cast<std::size_t>(i)] * y * (T(1) - y);
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.values()) acc += v;
  auto xn = x.node();
  return make_op<T>({}, {acc}, {xn}, [xn](Node<T>& n) {
    if (!xn->tracked) return;
    T* g = grad_buf(*xn);
    const T go = n.grad[0];
    for (std::size_t i = 0; i < xn->values.size(); ++i) g[i] += go;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.size());
  T acc = T(0);
  for (T v : x.values()) acc += v;
  acc *= inv;
  auto xn = x.node();
  return make_op<T>({}, {acc}, {xn}, [xn, inv](Node<T>& n) {
    if (!xn->tracked) return;
    T* g = grad_buf(*xn);
    const T go = n.grad[0] * inv;
    for (std::size_t i = 0; i < xn->values.size(); ++i) g[i] += go;
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<T> out(x.values().begin(), x.values().end());
  auto xn = x.node();
  return make_op<T>(std::move(shape), std::move(out), {xn}, [xn](Node<T>& n) {
    if (xn->tracked) xn->accumulate_grad(n.grad.data(), n.size());
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::int64_t c0, std::int64_t c1) {
  if (x.rank() != 2) throw std::invalid_argument("slice_cols: expects 2-D input, got " + shape_str(x.shape()));
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  if (c0 < 0 || c1 > cols || c0 >= c1)
    throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                                ") outside width " + std::to_string(cols));
  const std::int64_t width = c1 - c0;
  std::vector<T> out(static_cast<std::size_t>(rows * width));
  const auto xv = x.values();
  for (std::int64_t r = 0; r < rows; ++r)
    std::copy(xv.data() + r * cols + c0, xv.data() + r * cols + c1, out.data() + r * width);
  auto xn = x.node();
  return make_op<T>({rows, width}, std::move(out), {xn}, [xn, rows, cols, c0, width](Node<T>& n) {
    if (!xn->tracked) return;
    T* g = grad_buf(*xn);
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < width; ++j)
        g[r * cols + c0 + j] += n.grad[static_cast<std::size_t>(r * width + j)];
  });
}

template <typename T>
Tensor<T> slice_step(const Tensor<T>& x, std::int64_t t) {
  if (x.rank() != 3) throw std::invalid_argument("slice_step: expects [B,T,F] input, got " + shape_str(x.shape()));
  const std::int64_t batch = x.dim(0), steps = x.dim(1), feat = x.dim(2);
  if (t < 0 || t >= steps)
    throw std::invalid_argument("slice_step: step " + std::to_string(t) + " outside [0," + std::to_string(steps) + ")");
  std::vector<T> out(static_cast<std::size_t>(batch * feat));
  const auto xv = x.values();
  for (std::int64_t b = 0; b < batch; ++b)
    std::copy(xv.data() + (b * steps + t) * feat, xv.data() + (b * steps + t + 1) * feat, out.data() + b * feat);
  auto xn = x.node();
  return make_op<T>({batch, feat}, std::move(out), {xn}, [xn, batch, steps, feat, t](Node<T>& n) {
    if (!xn->tracked) return;
    T* g = grad_buf(*xn);
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t f = 0; f < feat; ++f)
        g[(b * steps + t) * feat + f] += n.grad[static_cast<std::size_t>(b * feat + f)];
  });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::int64_t rows = parts[0].dim(0);
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows)
      throw std::invalid_argument("concat_cols: inputs must be 2-D with matching rows");
    total += p.dim(1);
  }
  std::vector<T> out(static_cast<std::size_t>(rows * total));
  std::vector<NodePtr<T>> parents;
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.dim(1);
    const auto pv = p.values();
    for (std::int64_t r = 0; r < rows; ++r)
      std::copy(pv.data() + r * w, pv.data() + (r + 1) * w, out.data() + r * total + off);
    parents.push_back(p.node());
    offsets.push_back(off);
    off += w;
  }
  auto parents_copy = parents;
  return make_op<T>({rows, total}, std::move(out), std::move(parents),
                    [parents = std::move(parents_copy), offsets, rows, total](Node<T>& n) {
                      for (std::size_t k = 0; k < parents.size(); ++k) {
                        auto& p = parents[k];
                        if (!p->tracked) continue;
                        const std::int64_t w = p->shape[1];
                        T* g = grad_buf(*p);
                        for (std::int64_t r = 0; r < rows; ++r)
                          for (std::int64_t j = 0; j < w; ++j)
                            g[r * w + j] += n.grad[static_cast<std::size_t>(r * total + offsets[k] + j)];
                      }
                    });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::int64_t> rows) {
  if (x.rank() != 2) throw std::invalid_argument("gather_rows: expects 2-D input, got " + shape_str(x.shape()));
  const std::int64_t n_rows = x.dim(0), width = x.dim(1);
  for (std::int64_t r : rows)
    if (r < 0 || r >= n_rows)
      throw std::invalid_argument("gather_rows: row " + std::to_string(r) + " outside [0," + std::to_string(n_rows) + ")");
  std::vector<T> out(rows.size() * static_cast<std::size_t>(width));
  const auto xv = x.values();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(xv.data() + rows[i] * width, xv.data() + (rows[i] + 1) * width, out.data() + static_cast<std::int64_t>(i) * width);
  auto xn = x.node();
  const std::int64_t out_rows = static_cast<std::int64_t>(rows.size());
  return make_op<T>({out_rows, width}, std::move(out), {xn},
                    [xn, rows = std::move(rows), width](Node<T>& n) {
                      if (!xn->tracked) return;
                      T* g = grad_buf(*xn);
                      for (std::size_t i = 0; i < rows.size(); ++i)
                        for (std::int64_t j = 0; j < width; ++j)
                          g[rows[i] * width + j] += n.grad[i * static_cast<std::size_t>(width) + static_cast<std::size_t>(j)];
                    });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::int64_t stride, Padding padding) {
  const ConvGeom g = conv_geometry(x, kernel, bias, stride, padding);
  const std::int64_t patch = g.kh * g.kw * g.in_c;
  const std::int64_t out_rows = g.batch * g.out_h * g.out_w;

  std::vector<T> cols = im2col(x.values().data(), g);
  std::vector<T> out(static_cast<std::size_t>(out_rows * g.out_c));
  MapConst<T> pm(cols.data(), out_rows, patch);
  MapConst<T> km(kernel.values().data(), patch, g.out_c);
  MapMat<T> om(out.data(), out_rows, g.out_c);
  om.noalias() = pm * km;
  const auto bv = bias.values();
  for (std::int64_t r = 0; r < out_rows; ++r)
    for (std::int64_t c = 0; c < g.out_c; ++c) out[static_cast<std::size_t>(r * g.out_c + c)] += bv[static_cast<std::size_t>(c)];

  auto xn = x.node(); auto kn = kernel.node(); auto bn = bias.node();
  // The patches matrix is rebuilt in backward from the parent's values rather
  // than captured: batched CNN-head frames make it the largest transient of a
  // training step.
  return make_op<T>({g.batch, g.out_h, g.out_w, g.out_c}, std::move(out), {xn, kn, bn},
                    [xn, kn, bn, g, patch, out_rows](Node<T>& n) {
                      MapConst<T> gm(n.grad.data(), out_rows, g.out_c);
                      if (bn->tracked) {
                        T* gb = grad_buf(*bn);
                        for (std::int64_t r = 0; r < out_rows; ++r)
                          for (std::int64_t c = 0; c < g.out_c; ++c)
                            gb[c] += n.grad[static_cast<std::size_t>(r * g.out_c + c)];
                      }
                      if (kn->tracked || xn->tracked) {
                        std::vector<T> cols = im2col(xn->values.data(), g);
                        if (kn->tracked) {
                          MapConst<T> pm(cols.data(), out_rows, patch);
                          MapMat<T>(grad_buf(*kn), patch, g.out_c).noalias() += pm.transpose() * gm;
                        }
                        if (xn->tracked) {
                          std::vector<T> gcols(static_cast<std::size_t>(out_rows * patch));
                          MapConst<T> km(kn->values.data(), patch, g.out_c);
                          MapMat<T>(gcols.data(), out_rows, patch).noalias() = gm * km.transpose();
                          col2im_add(gcols.data(), g, grad_buf(*xn));
                        }
                      }
                    });
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  if (x.rank() != 4) throw std::invalid_argument("maxpool2d: input must be [B,H,W,C], got " + shape_str(x.shape()));
  const std::int64_t batch = x.dim(0), in_h = x.dim(1), in_w = x.dim(2), ch = x.dim(3);
  if (in_h < 2 || in_w < 2)
    throw std::invalid_argument("maxpool2d: spatial extents must be >= 2, got " + shape_str(x.shape()));
  const std::int64_t out_h = pool_out_extent(in_h), out_w = pool_out_extent(in_w);
  const auto xv = x.values();
  std::vector<T> out(static_cast<std::size_t>(batch * out_h * out_w * ch));
  std::vector<std::int64_t> argmax(out.size());
  std::size_t o = 0;
  for (std::int64_t b = 0; b < batch; ++b) {
    const std::int64_t base = b * in_h * in_w * ch;
    for (std::int64_t oh = 0; oh < out_h; ++oh) {
      for (std::int64_t ow = 0; ow < out_w; ++ow) {
        for (std::int64_t c = 0; c < ch; ++c) {
          std::int64_t best = base + ((oh * 2) * in_w + ow * 2) * ch + c;
          T best_v = xv[static_cast<std::size_t>(best)];
          for (std::int64_t r = 0; r < 2; ++r) {
            for (std::int64_t s = 0; s < 2; ++s) {
              const std::int64_t idx = base + ((oh * 2 + r) * in_w + (ow * 2 + s)) * ch + c;
              // strict > keeps the first maximal element in row-major order
              if (xv[static_cast<std::size_t>(idx)] > best_v) {
                best_v = xv[static_cast<std::size_t>(idx)];
                best = idx;
              }
            }
          }
          out[o] = best_v;
          argmax[o] = best;
          ++o;
        }
      }
    }
  }
  auto xn = x.node();
  return make_op<T>({batch, out_h, out_w, ch}, std::move(out), {xn},
                    [xn, argmax = std::move(argmax)](Node<T>& n) {
                      if (!xn->tracked) return;
                      T* g = grad_buf(*xn);
                      for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += n.grad[i];
                    });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::vector<T>& running_mean, std::vector<T>& running_var, bool train,
                     T momentum, T eps) {
  if (x.rank() < 2) throw std::invalid_argument("batch_norm: input must have a channel axis plus batch axes");
  const std::int64_t ch = x.shape().back();
  const std::int64_t rows = x.size() / ch;
  if (gamma.size() != ch || beta.size() != ch)
    throw std::invalid_argument("batch_norm: gamma/beta length must equal channels " + std::to_string(ch));
  if (static_cast<std::int64_t>(running_mean.size()) != ch || static_cast<std::int64_t>(running_var.size()) != ch)
    throw std::invalid_argument("batch_norm: running stats length must equal channels " + std::to_string(ch));
  if (train && rows < 2)
    throw std::invalid_argument("batch_norm: training needs at least 2 rows per channel, got " + std::to_string(rows));

  const auto xv = x.values();
  std::vector<T> mean_c(static_cast<std::size_t>(ch), T(0));
  std::vector<T> var_c(static_cast<std::size_t>(ch), T(0));
  if (train) {
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < ch; ++c) mean_c[static_cast<std::size_t>(c)] += xv[static_cast<std::size_t>(r * ch + c)];
    for (std::int64_t c = 0; c < ch; ++c) mean_c[static_cast<std::size_t>(c)] /= static_cast<T>(rows);
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < ch; ++c) {
        const T d = xv[static_cast<std::size_t>(r * ch + c)] - mean_c[static_cast<std::size_t>(c)];
        var_c[static_cast<std::size_t>(c)] += d * d;
      }
    for (std::int64_t c = 0; c < ch; ++c) var_c[static_cast<std::size_t>(c)] /= static_cast<T>(rows);
    for (std::int64_t c = 0; c < ch; ++c) {
      running_mean[static_cast<std::size_t>(c)] =
          momentum * running_mean[static_cast<std::size_t>(c)] + (T(1) - momentum) * mean_c[static_cast<std::size_t>(c)];
      running_var[static_cast<std::size_t>(c)] =
          momentum * running_var[static_cast<std::size_t>(c)] + (T(1) - momentum) * var_c[static_cast<std::size_t>(c)];
    }
  } else {
    mean_c.assign(running_mean.begin(), running_mean.end());
    var_c.assign(running_var.begin(), running_var.end());
  }

  std::vector<T> inv_std(static_cast<std::size_t>(ch));
  for (std::int64_t c = 0; c < ch; ++c) inv_std[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var_c[static_cast<std::size_t>(c)] + eps);

  std::vector<T> xhat(xv.size());
  std::vector<T> out(xv.size());
  const auto gv = gamma.values();
  const auto betav = beta.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < ch; ++c) {
      const std::size_t i = static_cast<std::size_t>(r * ch + c);
      xhat[i] = (xv[i] - mean_c[static_cast<std::size_t>(c)]) * inv_std[static_cast<std::size_t>(c)];
      out[i] = gv[static_cast<std::size_t>(c)] * xhat[i] + betav[static_cast<std::size_t>(c)];
    }
  }

  auto xn = x.node(); auto gn = gamma.node(); auto bn = beta.node();
  return make_op<T>(x.shape(), std::move(out), {xn, gn, bn},
                    [xn, gn, bn, rows, ch, train, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](Node<T>& n) {
                      // per-channel reductions of dy and dy*xhat
                      std::vector<T> sum_dy(static_cast<std::size_t>(ch), T(0));
                      std::vector<T> sum_dy_xhat(static_cast<std::size_t>(ch), T(0));
                      for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t c = 0; c < ch; ++c) {
                          const std::size_t i = static_cast<std::size_t>(r * ch + c);
                          sum_dy[static_cast<std::size_t>(c)] += n.grad[i];
                          sum_dy_xhat[static_cast<std::size_t>(c)] += n.grad[i] * xhat[i];
                        }
                      if (gn->tracked) {
                        T* g = grad_buf(*gn);
                        for (std::int64_t c = 0; c < ch; ++c) g[c] += sum_dy_xhat[static_cast<std::size_t>(c)];
                      }
                      if (bn->tracked) {
                        T* g = grad_buf(*bn);
                        for (std::int64_t c = 0; c < ch; ++c) g[c] += sum_dy[static_cast<std::size_t>(c)];
                      }
                      if (xn->tracked) {
                        T* g = grad_buf(*xn);
                        const T inv_rows = T(1) / static_cast<T>(rows);
                        for (std::int64_t r = 0; r < rows; ++r)
                          for (std::int64_t c = 0; c < ch; ++c) {
                            const std::size_t i = static_cast<std::size_t>(r * ch + c);
                            const T gam = gn->values[static_cast<std::size_t>(c)];
                            if (train) {
                              // batch moments depend on x
                              g[i] += gam * inv_std[static_cast<std::size_t>(c)] *
                                      (n.grad[i] - inv_rows * sum_dy[static_cast<std::size_t>(c)] -
                                       xhat[i] * inv_rows * sum_dy_xhat[static_cast<std::size_t>(c)]);
                            } else {
                              g[i] += gam * inv_std[static_cast<std::size_t>(c)] * n.grad[i];
                            }
                          }
                      }
                    });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool train, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  if (!train || rate == 0.0) {
    std::vector<T> out(x.values().begin(), x.values().end());
    auto xn = x.node();
    return make_op<T>(x.shape(), std::move(out), {xn}, [xn](Node<T>& n) {
      if (xn->tracked) xn->accumulate_grad(n.grad.data(), n.size());
    });
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::bernoulli_distribution drop(rate);
  std::vector<T> mask(x.values().size());
  std::vector<T> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = drop(rng) ? T(0) : keep_scale;
    out[i] *= mask[i];
  }
  auto xn = x.node();
  return make_op<T>(x.shape(), std::move(out), {xn}, [xn, mask = std::move(mask)](Node<T>& n) {
    if (!xn->tracked) return;
    T* g = grad_buf(*xn);
    for (std::size_t i = 0; i < mask.size(); ++i) g[i] += n.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  check_same_shape(pred, target, "mse_loss");
  const auto pv = pred.values();
  const auto tv = target.values();
  const T inv = T(1) / static_cast<T>(pred.size());
  T acc = T(0);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const T d = pv[i] - tv[i];
    acc += d * d;
  }
  acc *= inv;
  if (!std::isfinite(acc))
    throw std::runtime_error("mse_loss: non-finite loss value");
  auto pn = pred.node(); auto tn = target.node();
  return make_op<T>({}, {acc}, {pn, tn}, [pn, tn, inv](Node<T>& n) {
    const T go = n.grad[0] * T(2) * inv;
    if (pn->tracked) {
      T* g = grad_buf(*pn);
      for (std::size_t i = 0; i < pn->values.size(); ++i) g[i] += go * (pn->values[i] - tn->values[i]);
    }
    if (tn->tracked) {
      T* g = grad_buf(*tn);
      for (std::size_t i = 0; i < tn->values.size(); ++i) g[i] -= go * (pn->values[i] - tn->values[i]);
    }
  });
}

#define GUSTCAST_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> add_channel(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> tanh_op(const Tensor<T>&);                                                  \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> slice_cols(const Tensor<T>&, std::int64_t, std::int64_t);                   \
  template Tensor<T> slice_step(const Tensor<T>&, std::int64_t);                                 \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                                    \
  template Tensor<T> gather_rows(const Tensor<T>&, std::vector<std::int64_t>);                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::int64_t,  \
                            Padding);                                                            \
  template Tensor<T> maxpool2d(const Tensor<T>&);                                                \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                std::vector<T>&, std::vector<T>&, bool, T, T);                   \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, std::mt19937_64&);                  \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);

GUSTCAST_INSTANTIATE_OPS(float)
GUSTCAST_INSTANTIATE_OPS(double)

#undef GUSTCAST_INSTANTIATE_OPS

}  // namespace gustcast::ad
