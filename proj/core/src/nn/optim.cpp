#include "volcomp/nn/optim.hpp"

#include <cmath>

#include "volcomp/errors.hpp"

namespace volcomp::nn {

template <class T>
Adam<T>::Adam(const ParamStore<T>& store, AdamOptions opts) : opts_(opts) {
  if (!(opts.learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  for (std::size_t i = 0; i < store.size(); ++i) {
    m_.emplace_back(store.value(i).size(), 0.0);
    v_.emplace_back(store.value(i).size(), 0.0);
  }
}

template <class T>
double Adam<T>::step(ParamStore<T>& store) {
  if (store.size() != m_.size()) throw InvalidArgument("optimizer state does not match parameters");
  double sq = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i)
    for (T g : store.grad(i).data) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("gradient norm is not finite");
  const double clip = (opts_.clip_norm > 0.0 && norm > opts_.clip_norm) ? opts_.clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& w = store.value(i).data;
    const auto& g = store.grad(i).data;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = clip * static_cast<double>(g[j]);
      m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * gj;
      v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * gj * gj;
      const double update = opts_.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opts_.eps);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
    }
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace volcomp::nn
