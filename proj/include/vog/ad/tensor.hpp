#pragma once

// Dense double-precision tensors with reverse-mode differentiation.
//
// Every op returns a new Tensor. When any operand requires a gradient the
// result records its parents and a backward closure; otherwise it is a plain
// constant and nothing is retained.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "vog/error.hpp"

namespace vog::ad {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// While a NoGradGuard is alive on a thread, ops on that thread record no
// graph. Used for evaluation with read-only parameters.
inline bool& grad_disabled() {
  thread_local bool disabled = false;
  return disabled;
}

class NoGradGuard {
 public:
  NoGradGuard() : saved_(grad_disabled()) { grad_disabled() = true; }
  ~NoGradGuard() { grad_disabled() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    if (numel_of(shape) != values.size()) {
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v) {
    const auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({}, {v}, requires_grad); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v, bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }
  void clear_grad() { node_->grad.clear(); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  // Builds an op result. `fn` receives the result node during backward and
  // must accumulate into the parents' grad buffers.
  static Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                            std::function<void(Node&)> fn) {
    Tensor out(std::move(shape), std::move(values));
    bool any = false;
    if (grad_disabled()) return out;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      out.node_->requires_grad = true;
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward = std::move(fn);
    }
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

// Reverse pass from a scalar. Gradients accumulate into every reachable
// tensor that requires one.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace vog::ad
