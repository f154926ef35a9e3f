#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "tsan/tensor.hpp"

namespace tsan {

/// Reverse-mode tape. Nodes are created in topological order by the op
/// functions in ops.hpp; backward() walks them in reverse. Values are
/// addressed by integer handles so the graph stays trivially copyable.
class Tape {
 public:
  using BackFn = std::function<void(Tape&)>;

  int push(Tensor value, BackFn back = nullptr) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int leaf(Tensor value) { return push(std::move(value)); }

  const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  Tensor& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.v.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
  }

  /// Accumulates d(root)/d(node) into every node's grad. Root must be scalar.
  void backward(int root) {
    if (val(root).numel() != 1)
      throw std::invalid_argument("backward root must be a scalar");
    for (auto& n : nodes_) n.grad.v.clear();
    grad(root).v[0] = 1.0f;
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.back && !n.grad.v.empty()) n.back(*this);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackFn back;
  };
  std::vector<Node> nodes_;
};

}  // namespace tsan
