#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tsdf/nn/tensor.hpp"

namespace tsdf::nn {

// A trainable tensor. `grad` always has the shape of `value`.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

// Ordered, name-unique parameter collection. Models refer to their tensors by
// index so that copying a model copies its weights without dangling pointers.
template <class T>
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor<T> init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    Tensor<T> grad(init.shape());
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(init), std::move(grad)});
    return params_.size() - 1;
  }

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  Parameter<T>* find(std::string_view name) {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const Parameter<T>* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  Parameter<T>& at(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw ContractError("unknown parameter '" + std::string(name) + "'");
  }
  const Parameter<T>& at(std::string_view name) const {
    if (const auto* p = find(name)) return *p;
    throw ContractError("unknown parameter '" + std::string(name) + "'");
  }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T{0});
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
class Graph;

// Handle to a value recorded on a Graph.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

// Define-by-run tape for reverse-mode differentiation. Nodes are appended in
// evaluation order, so walking them backwards is a valid topological order.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  // Leaf that receives a gradient but is not bound to a Parameter.
  Var<T> input(Tensor<T> value) { return push(std::move(value), grad_enabled_, nullptr, {}); }

  Var<T> parameter(Parameter<T>& p) {
    if (p.value.shape() != p.grad.shape()) {
      throw InternalError("parameter '" + p.name + "' has mismatched value/grad shapes");
    }
    return push(p.value, grad_enabled_, &p, {});
  }

  // Appends a kernel output. `backward` runs only if some parent needs a
  // gradient; it reads grad(self) and accumulates into its parents.
  Var<T> record(const char* kernel, Tensor<T> value, std::initializer_list<Var<T>> parents,
                BackwardFn backward) {
    bool needs = false;
    for (const auto& p : parents) {
      check(p);
      needs = needs || nodes_[p.id].requires_grad;
    }
    if (!value.all_finite()) {
      throw NumericError(std::string(kernel) + ": non-finite output " +
                         shape_string(value.shape()));
    }
    needs = needs && grad_enabled_;
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(Var<T> v) const {
    check(v);
    return nodes_[v.id].value;
  }

  bool requires_grad(Var<T> v) const {
    check(v);
    return nodes_[v.id].requires_grad;
  }

  // Gradient buffer of a node, zero-allocated on first use.
  Tensor<T>& grad(Var<T> v) { return grad(v.id); }
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  Var<T> var(std::size_t id) { return {this, id}; }

  // Reverse sweep from a scalar loss. Parameter gradients are accumulated
  // into Parameter::grad (callers zero them between steps).
  void backward(Var<T> loss) {
    check(loss);
    if (loss.value().size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " +
                          shape_string(loss.value().shape()));
    }
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        auto& dst = n.param->grad;
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad[j];
        if (!dst.all_finite()) {
          throw NumericError("backward: non-finite gradient for '" + n.param->name + "'");
        }
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, Parameter<T>* param, BackwardFn fn) {
    nodes_.push_back({std::move(value), Tensor<T>{}, requires_grad, param, std::move(fn)});
    return {this, nodes_.size() - 1};
  }

  void check(Var<T> v) const {
    if (v.graph != this || v.id >= nodes_.size()) {
      throw InternalError("variable does not belong to this graph");
    }
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
};

}  // namespace tsdf::nn
