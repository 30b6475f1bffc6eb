#include "volcomp/nn/tape.hpp"

#include "volcomp/errors.hpp"

namespace volcomp::nn {

template <class T>
Var Tape<T>::constant(Tensor<T> value) {
  Node& n = nodes_.emplace_back();
  n.own_value = std::move(value);
  n.value = &n.own_value;
  return Var{nodes_.size() - 1};
}

template <class T>
Var Tape<T>::parameter(ParamStore<T>& store, std::size_t index) {
  Node& n = nodes_.emplace_back();
  n.value = &store.value(index);
  if (record_) {
    n.grad = &store.grad(index);
    n.requires_grad = true;
  }
  return Var{nodes_.size() - 1};
}

template <class T>
Var Tape<T>::parameter(const ParamStore<T>& store, std::size_t index) {
  Node& n = nodes_.emplace_back();
  n.value = &store.value(index);
  return Var{nodes_.size() - 1};
}

template <class T>
Var Tape<T>::record(Tensor<T> value, const std::vector<Var>& parents, Backward backward) {
  Node& n = nodes_.emplace_back();
  n.own_value = std::move(value);
  n.value = &n.own_value;
  if (record_) {
    for (Var p : parents) {
      if (nodes_[p.id].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  return Var{nodes_.size() - 1};
}

template <class T>
Tensor<T>& Tape<T>::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad == nullptr) {
    n.own_grad = Tensor<T>(n.value->shape);
    n.grad = &n.own_grad;
  }
  return *n.grad;
}

template <class T>
void Tape<T>::backward(Var root) {
  if (!record_) {
    throw InvalidArgument("backward on a tape that did not record");
  }
  if (value(root).size() != 1) {
    throw InvalidArgument("backward needs a scalar root");
  }
  grad(root).data[0] += T{1};
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad == nullptr) continue;
    n.backward(*this, Var{i});
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace volcomp::nn
