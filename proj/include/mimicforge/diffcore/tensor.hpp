#pragma once

// Dense tensors and a reverse-mode tape. Scalar type is a template parameter
// so the same graph code runs in float (training) and double (gradient checks).

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "mimicforge/error.hpp"

namespace mimicforge::diff {

template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) { data.assign(count(shape), fill); }
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw InvalidInput("Tensor: data size does not match shape");
  }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
  }
  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape[i]; }
  std::size_t rank() const { return shape.size(); }
  T& operator[](std::size_t i) { return data[i]; }
  T operator[](std::size_t i) const { return data[i]; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
  bool operator==(const Tensor&) const = default;
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + "]";
}

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() { grad = Tensor<T>(value.shape); }
};

// Named parameter collection with stable addresses and insertion order.
template <class T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw InvalidInput("ParamStore: duplicate parameter " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = std::move(init);
    p->zero_grad();
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }
  Parameter<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("ParamStore: unknown parameter " + name);
    return *params_[it->second];
  }
  const Parameter<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("ParamStore: unknown parameter " + name);
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }
  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (auto& p : params_) n += p->value.numel();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Var constant(Tensor<T> value) { return push(std::move(value), nullptr, false); }

  // Leaf bound to a parameter; repeated calls reuse the same node.
  Var param(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{it->second};
    Var v = push(p.value, nullptr, true);
    nodes_[v.id].param = &p;
    param_nodes_[&p] = v.id;
    return v;
  }

  Var record(Tensor<T> value, Backward bw, std::initializer_list<Var> inputs) {
    bool rg = false;
    for (auto in : inputs) rg = rg || nodes_[in.id].requires_grad;
    return push(std::move(value), rg ? std::move(bw) : nullptr, rg);
  }

  const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }
  const std::vector<int>& shape(Var v) const { return nodes_[v.id].value.shape; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient buffer of a node (allocated on first access).
  Tensor<T>& grad(int id) {
    auto& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }
  Tensor<T>& grad(Var v) { return grad(v.id); }
  bool has_grad(int id) const { return !nodes_[id].grad.data.empty(); }

  // Seeds d(loss)/d(loss) = 1 and accumulates parameter gradients into
  // Parameter::grad.
  void backward(Var loss) {
    if (nodes_[loss.id].value.numel() != 1) throw InvalidInput("Tape::backward: loss must be a scalar");
    grad(loss).data[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.data.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto& g = n.param->grad;
        if (g.data.size() != n.grad.data.size()) g = Tensor<T>(n.param->value.shape);
        for (std::size_t k = 0; k < g.data.size(); ++k) g.data[k] += n.grad.data[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
  };

  Var push(Tensor<T> value, Backward bw, bool rg) {
    Node n;
    n.value = std::move(value);
    n.backward = std::move(bw);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> param_nodes_;
};

}  // namespace mimicforge::diff
