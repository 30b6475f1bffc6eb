#include "volcomp/nn/params.hpp"

#include <cmath>

#include "volcomp/errors.hpp"
#include "volcomp/rng.hpp"

namespace volcomp::nn {

template <class T>
std::size_t ParamStore<T>::add(ParamSpec spec) {
  values_.emplace_back(spec.shape);
  grads_.emplace_back(spec.shape);
  specs_.push_back(std::move(spec));
  return specs_.size() - 1;
}

template <class T>
void ParamStore<T>::initialize(std::uint64_t seed) {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const ParamSpec& s = specs_[i];
    auto& v = values_[i].data;
    switch (s.init) {
      case Init::zeros:
        std::fill(v.begin(), v.end(), T{0});
        break;
      case Init::ones:
        std::fill(v.begin(), v.end(), T{1});
        break;
      case Init::fan_in_uniform: {
        Rng rng(derive_seed(seed, i));
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, s.fan_in)));
        for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
      case Init::linear_upsample: {
        // shape {cin, cout, 4, 4, 4}; identity across matching channels.
        if (s.shape.size() != 5 || s.shape[2] != 4 || s.shape[3] != 4 || s.shape[4] != 4) {
          throw InvalidArgument("linear_upsample init needs a {cin, cout, 4, 4, 4} kernel");
        }
        constexpr double k1[4] = {0.25, 0.75, 0.75, 0.25};
        std::fill(v.begin(), v.end(), T{0});
        const int cin = s.shape[0];
        const int cout = s.shape[1];
        for (int c = 0; c < std::min(cin, cout); ++c) {
          T* w = v.data() + (static_cast<std::size_t>(c) * cout + c) * 64;
          for (int kz = 0; kz < 4; ++kz)
            for (int ky = 0; ky < 4; ++ky)
              for (int kx = 0; kx < 4; ++kx) w[kx + 4 * (ky + 4 * kz)] = static_cast<T>(k1[kx] * k1[ky] * k1[kz]);
        }
        break;
      }
    }
    std::fill(grads_[i].data.begin(), grads_[i].data.end(), T{0});
  }
}

template <class T>
void ParamStore<T>::randomize(std::uint64_t seed) {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const ParamSpec& s = specs_[i];
    Rng rng(derive_seed(seed, i, 1));
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, s.fan_in)));
    for (auto& x : values_[i].data) {
      switch (s.init) {
        case Init::ones:
          x = static_cast<T>(1.0 + rng.uniform(-0.5, 0.5));
          break;
        case Init::zeros:
          x = static_cast<T>(rng.uniform(-0.2, 0.2) * (s.fan_in > 1 ? bound : 1.0));
          break;
        default:
          x = static_cast<T>(rng.uniform(-bound, bound));
      }
    }
  }
  zero_grad();
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto& g : grads_) std::fill(g.data.begin(), g.data.end(), T{0});
}

template <class T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

template <class T>
bool ParamStore<T>::all_finite() const {
  for (const auto& v : values_)
    for (T x : v.data)
      if (!std::isfinite(x)) return false;
  return true;
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace volcomp::nn
