#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volcomp/nn/tensor.hpp"

namespace volcomp::nn {

enum class Init {
  zeros,
  ones,
  fan_in_uniform,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  linear_upsample, // separable [1,3,3,1]/4 kernel for a k=4 stride-2 transposed conv
};

struct ParamSpec {
  std::string name;
  std::vector<int> shape;
  Init init = Init::zeros;
  int fan_in = 1;
};

/// Named weights with gradient buffers. The declaration order is the
/// checkpoint manifest order.
template <class T>
class ParamStore {
 public:
  std::size_t add(ParamSpec spec);

  // Deterministic in seed; every tensor draws from its own substream.
  void initialize(std::uint64_t seed);
  void zero_grad();
  // Fills every tensor with random values, including ones normally zero- or
  // one-initialized, so that every path carries signal. For tests and checks.
  void randomize(std::uint64_t seed);

  [[nodiscard]] std::size_t size() const { return specs_.size(); }
  [[nodiscard]] const ParamSpec& spec(std::size_t i) const { return specs_[i]; }
  [[nodiscard]] const std::vector<ParamSpec>& specs() const { return specs_; }
  [[nodiscard]] Tensor<T>& value(std::size_t i) { return values_[i]; }
  [[nodiscard]] const Tensor<T>& value(std::size_t i) const { return values_[i]; }
  [[nodiscard]] Tensor<T>& grad(std::size_t i) { return grads_[i]; }
  [[nodiscard]] const Tensor<T>& grad(std::size_t i) const { return grads_[i]; }
  [[nodiscard]] std::size_t scalar_count() const;
  [[nodiscard]] bool all_finite() const;

  // Same layout with values converted to another scalar type.
  template <class U>
  [[nodiscard]] ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      out.add(specs_[i]);
      out.value(i) = nn::cast<U>(values_[i]);
    }
    return out;
  }

 private:
  std::vector<ParamSpec> specs_;
  std::vector<Tensor<T>> values_;
  std::vector<Tensor<T>> grads_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace volcomp::nn
