#include "gustcast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace gustcast::ad {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: nonpositive extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : values())
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

// Post-order over parents; children appear after all ancestors they feed.
template <typename T>
void topo_visit(const std::shared_ptr<Node<T>>& node, std::unordered_set<const Node<T>*>& seen,
                std::vector<std::shared_ptr<Node<T>>>& order) {
  if (!node || !node->tracked || seen.count(node.get())) return;
  seen.insert(node.get());
  for (const auto& p : node->parents) topo_visit(p, seen, order);
  order.push_back(node);
}

}  // namespace

template <typename T>
void backward(const Tensor<T>& loss, bool retain_graph) {
  auto root = loss.node();
  if (!root) throw std::runtime_error("backward: undefined tensor");
  if (root->size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(root->shape));
  if (!root->tracked) throw std::runtime_error("backward: loss does not depend on any tracked tensor");
  if (root->consumed)
    throw std::runtime_error("backward: graph already consumed; re-run forward or pass retain_graph");

  std::unordered_set<const Node<T>*> seen;
  std::vector<std::shared_ptr<Node<T>>> order;
  topo_visit(root, seen, order);

  root->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (n.is_leaf) continue;
    if (!n.backward_fn)
      throw std::runtime_error("backward: interior node missing closure (graph already consumed?)");
    if (!n.grad.empty()) n.backward_fn(n);
    if (!retain_graph) {
      n.backward_fn = nullptr;
      n.consumed = true;
      n.grad.clear();  // interior grads are scratch space
      n.parents.clear();
    }
  }
  if (!retain_graph) root->consumed = true;
}

template struct Node<float>;
template struct Node<double>;
template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&, bool);
template void backward(const Tensor<double>&, bool);

}  // namespace gustcast::ad
