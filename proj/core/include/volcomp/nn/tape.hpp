#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "volcomp/nn/params.hpp"
#include "volcomp/nn/tensor.hpp"

namespace volcomp::nn {

struct Var {
  std::size_t id = 0;
};

/// Reverse-mode autodiff tape. Ops append nodes holding their forward value
/// and a closure that pushes the node's gradient into its parents. Parameter
/// leaves read from and accumulate into a ParamStore. With recording off the
/// tape only keeps forward values.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self)>;

  explicit Tape(bool record = true) : record_(record) {}

  [[nodiscard]] bool recording() const { return record_; }

  Var constant(Tensor<T> value);
  Var parameter(ParamStore<T>& store, std::size_t index);
  Var parameter(const ParamStore<T>& store, std::size_t index);
  Var record(Tensor<T> value, const std::vector<Var>& parents, Backward backward);

  [[nodiscard]] const Tensor<T>& value(Var v) const { return *nodes_[v.id].value; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Zero-initialized on first access.
  Tensor<T>& grad(Var v);

  // Seeds d(root) = 1 (root must be a scalar) and runs every closure in
  // reverse order. Parameter gradients accumulate into their store.
  void backward(Var root);

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> own_value;
    const Tensor<T>* value = nullptr;
    Tensor<T> own_grad;
    Tensor<T>* grad = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  bool record_;
  std::deque<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace volcomp::nn
