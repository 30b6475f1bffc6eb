#pragma once

#include <vector>

#include "volcomp/nn/params.hpp"

namespace volcomp::nn {

struct AdamOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global L2 norm of all gradients; <= 0 disables
};

template <class T>
class Adam {
 public:
  Adam(const ParamStore<T>& store, AdamOptions opts);

  // Clips, applies one update from the store's gradients and returns the
  // gradient norm before clipping. Throws NumericalError on a non-finite norm.
  double step(ParamStore<T>& store);

  [[nodiscard]] long steps() const { return t_; }
  [[nodiscard]] const AdamOptions& options() const { return opts_; }

 private:
  AdamOptions opts_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace volcomp::nn
