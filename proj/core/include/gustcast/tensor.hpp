#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gustcast::ad {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One vertex of the dynamic computation graph. Leaves own parameter values;
// interior nodes additionally carry the closure that routes the incoming
// gradient to their parents. backward() clears closures unless the graph is
// retained, so a second backward on the same graph is detectable.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first accumulation
  bool tracked = false;
  bool is_leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }

  void accumulate_grad(const T* g, std::int64_t n) {
    if (grad.empty()) grad.assign(values.size(), T(0));
    for (std::int64_t i = 0; i < n; ++i) grad[static_cast<std::size_t>(i)] += g[i];
  }
};

// Value-semantics handle over a shared graph node. Copying a Tensor aliases
// the node; fresh forward passes build fresh interior nodes while parameter
// leaves persist across iterations.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

  static Tensor filled(Shape shape, T value) {
    auto n = std::make_shared<Node<T>>();
    const std::int64_t count = shape_numel(shape);
    n->shape = std::move(shape);
    n->values.assign(static_cast<std::size_t>(count), value);
    return Tensor(std::move(n));
  }

  static Tensor from_values(Shape shape, std::vector<T> values) {
    const std::int64_t count = shape_numel(shape);
    if (count != static_cast<std::int64_t>(values.size()))
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    return Tensor(std::move(n));
  }

  static Tensor scalar(T value) { return from_values({}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return require().shape; }
  std::int64_t size() const { return require().size(); }
  std::int64_t dim(std::size_t axis) const { return require().shape.at(axis); }
  std::size_t rank() const { return require().shape.size(); }

  std::span<const T> values() const { return require().values; }
  // In-place mutation is reserved for leaves (parameter updates, test
  // perturbations); interior values are owned by the graph that made them.
  std::span<T> values_mut() {
    Node<T>& n = require();
    if (!n.is_leaf) throw std::runtime_error("tensor: cannot mutate non-leaf values");
    return n.values;
  }

  T item() const {
    const Node<T>& n = require();
    if (n.size() != 1) throw std::invalid_argument("tensor: item() on non-scalar of shape " + shape_str(n.shape));
    return n.values[0];
  }

  bool tracked() const { return require().tracked; }
  Tensor& set_tracked(bool on = true) {
    Node<T>& n = require();
    if (!n.is_leaf) throw std::runtime_error("tensor: tracking toggles only on leaves");
    n.tracked = on;
    if (!on) n.grad.clear();
    return *this;
  }

  bool has_grad() const { return !require().grad.empty(); }
  std::span<const T> grad() const {
    const Node<T>& n = require();
    if (n.grad.empty()) throw std::runtime_error("tensor: gradient not populated");
    return n.grad;
  }
  // Drops the accumulated gradient; it is re-materialized (from zero) by the
  // next backward pass that reaches this tensor.
  void zero_grad() { require().grad.clear(); }

  bool all_finite() const;

  // Deep copy of values into a fresh untracked leaf.
  Tensor clone_values() const {
    const Node<T>& n = require();
    return from_values(n.shape, n.values);
  }

  std::shared_ptr<Node<T>> node() const { return node_; }

  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  Node<T>& require() {
    if (!node_) throw std::runtime_error("tensor: undefined");
    return *node_;
  }
  const Node<T>& require() const {
    if (!node_) throw std::runtime_error("tensor: undefined");
    return *node_;
  }

  std::shared_ptr<Node<T>> node_;
};

// Reverse-mode sweep from a scalar loss. Populates grad on every tracked
// leaf reachable from it. Unless retain_graph is set the interior closures
// are dropped, and a second sweep over the same graph throws.
template <typename T>
void backward(const Tensor<T>& loss, bool retain_graph = false);

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;
extern template void backward(const Tensor<float>&, bool);
extern template void backward(const Tensor<double>&, bool);

}  // namespace gustcast::ad
