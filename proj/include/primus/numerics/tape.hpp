#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "primus/numerics/errors.hpp"
#include "primus/numerics/tensor.hpp"

namespace primus {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const { return tape_->requires_grad(*this); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Eagerly recorded reverse-mode graph for one forward pass. Nodes are kept in
// creation order; backward() walks them once in reverse and then releases the
// recorded closures, so a tape supports exactly one backward pass.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out, const Tensor<T>& out)>;

  explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_grad_; }
  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) { return push("constant", std::move(value), false, {}); }

  Var<T> variable(Tensor<T> value) { return push("variable", std::move(value), record_grad_, {}); }

  // Leaf for a model weight, memoized by address so repeated uses share one node.
  Var<T> param(const Tensor<T>& weight) {
    auto it = params_.find(&weight);
    if (it != params_.end()) return Var<T>(this, it->second);
    Var<T> v = push("param", weight, record_grad_, {});
    params_.emplace(&weight, v.id());
    return v;
  }

  // Records an op output. The closure is kept only if some input requires grad.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                Backward fn) {
    return record(op, std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
  }

  Var<T> record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                Backward fn) {
    bool needs = false;
    if (record_grad_) {
      for (const auto& in : inputs) needs = needs || nodes_.at(in.id()).requires_grad;
    }
    if (check_finite_) {
      for (T x : value.data()) {
        if (!std::isfinite(x)) throw NumericalError("non-finite value produced by op '" + std::string(op) + "'");
      }
    }
    return push(op, std::move(value), needs, needs ? std::move(fn) : Backward{});
  }

  const Tensor<T>& value(const Var<T>& v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(const Var<T>& v) const { return nodes_.at(v.id()).requires_grad; }

  // Gradient accumulation target for node `id`, or nullptr when it needs no gradient.
  T* grad_data(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad.ptr();
  }
  T* grad_data(const Var<T>& v) { return grad_data(v.id()); }

  void backward(const Var<T>& root) {
    if (value(root).size() != 1) {
      throw DimensionError("backward() needs a scalar root, got " + to_string(root.shape()));
    }
    backward(root, Tensor<T>(root.shape(), T(1)));
  }

  void backward(const Var<T>& root, Tensor<T> seed) {
    if (backward_done_) throw Error("tape already consumed by a previous backward pass");
    backward_done_ = true;
    Node& r = nodes_.at(root.id());
    if (!r.requires_grad) return;
    if (seed.shape() != r.value.shape()) throw DimensionError("backward seed shape mismatch");
    r.grad = std::move(seed);
    visit_order_.clear();
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      visit_order_.push_back(i);
      n.backward(*this, n.grad, n.value);
    }
    for (Node& n : nodes_) n.backward = nullptr;
  }

  // Zero-filled when the node received no gradient.
  Tensor<T> grad(const Var<T>& v) const {
    const Node& n = nodes_.at(v.id());
    return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }

  Tensor<T> grad_of(const Tensor<T>& weight) const {
    auto it = params_.find(&weight);
    if (it == params_.end()) return Tensor<T>(weight.shape());
    return grad(Var<T>(const_cast<Tape*>(this), it->second));
  }

  const std::vector<std::size_t>& last_backward_order() const { return visit_order_; }
  std::string_view op_name(std::size_t id) const { return nodes_.at(id).op; }

 private:
  struct Node {
    std::string_view op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<T> push(std::string_view op, Tensor<T> value, bool requires_grad, Backward fn) {
    nodes_.push_back(Node{op, std::move(value), Tensor<T>(), requires_grad, std::move(fn)});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  std::unordered_map<const void*, std::size_t> params_;
  std::vector<std::size_t> visit_order_;
  bool record_grad_;
  bool check_finite_ = false;
  bool backward_done_ = false;
};

}  // namespace primus
