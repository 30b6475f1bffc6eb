#include "volcomp/sr.hpp"

#include <algorithm>
#include <cmath>

#include "volcomp/asmm.hpp"
#include "volcomp/errors.hpp"
#include "volcomp/nn/ops.hpp"

namespace volcomp {

using nn::Init;
using nn::ParamSpec;
using nn::Tape;
using nn::Tensor;
using nn::Var;

void SrConfig::validate() const {
  if (!low_dims.positive()) throw InvalidArgument("sr low_dims must be positive");
  if (base_channels < 1) throw InvalidArgument("sr base_channels must be >= 1");
  for (int m : channel_multipliers) {
    if (m < 1) throw InvalidArgument("sr channel multipliers must be >= 1");
  }
  if (time_embed_dim < 2 || time_embed_dim % 2) throw InvalidArgument("sr time_embed_dim must be even");
}

UNetSpec SrConfig::unet_spec() const {
  UNetSpec s;
  s.dims = high_dims();
  s.in_channels = 2;
  s.out_channels = 1;
  s.base_channels = base_channels;
  s.channel_multipliers = channel_multipliers;
  s.time_embed_dim = time_embed_dim;
  return s;
}

namespace {

template <class T>
Tensor<T> to_tensor(std::span<const double> v, Dims3 d) {
  Tensor<T> out({1, d.nx, d.ny, d.nz});
  if (out.size() != v.size()) {
    throw InvalidArgument("expected " + std::to_string(out.size()) + " values, got " + std::to_string(v.size()));
  }
  std::transform(v.begin(), v.end(), out.data.begin(), [](double x) { return static_cast<T>(x); });
  return out;
}

}  // namespace

template <class T>
SrModel<T>::SrModel(const SrConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  up_w_ = store_.add(ParamSpec{"cond_up.weight", {1, 1, 4, 4, 4}, Init::linear_upsample, 1});
  up_b_ = store_.add(ParamSpec{"cond_up.bias", {1}, Init::zeros, 1});
  net_ = UNet3d<T>(cfg_.unet_spec(), store_, "net.");
}

template <class T>
template <class Store>
Var SrModel<T>::upsample_impl(Tape<T>& tape, Store& store, Var z) const {
  const auto& s = tape.value(z).shape;
  if (s.size() != 4 || s[0] != 1 || Dims3{s[1], s[2], s[3]} != cfg_.low_dims) {
    throw InvalidArgument("condition must be {1, " + to_string(cfg_.low_dims) + "}");
  }
  return nn::conv_transpose3d(tape, z, tape.parameter(store, up_w_), tape.parameter(store, up_b_), 2, 1);
}

template <class T>
Var SrModel<T>::upsample_cond(Tape<T>& tape, Var z) {
  return upsample_impl(tape, store_, z);
}

template <class T>
std::vector<double> SrModel<T>::upsample_cond(std::span<const double> z) const {
  Tape<T> tape(false);
  const auto& out = tape.value(upsample_impl(tape, store_, tape.constant(to_tensor<T>(z, cfg_.low_dims))));
  return {out.data.begin(), out.data.end()};
}

template <class T>
template <class Store>
Var SrModel<T>::forward_impl(Tape<T>& tape, Store& store, Var x_t, int t, Var z) const {
  typename UNet3d<T>::Inputs in;
  Tensor<T> code({cfg_.time_embed_dim});
  const auto enc = time_encoding(t, cfg_.time_embed_dim);
  std::transform(enc.begin(), enc.end(), code.data.begin(), [](double x) { return static_cast<T>(x); });
  in.time_code = tape.constant(std::move(code));
  in.x = nn::concat_channels(tape, {x_t, upsample_impl(tape, store, z)});
  return net_.forward(tape, store, in);
}

template <class T>
Var SrModel<T>::forward(Tape<T>& tape, Var x_t, int t, Var z) {
  return forward_impl(tape, store_, x_t, t, z);
}

template <class T>
std::vector<double> SrModel<T>::predict_eps(std::span<const double> x_t, int t, std::span<const double> z_cond) const {
  if (!store_.all_finite()) throw NumericalError("model weights are not finite");
  Tape<T> tape(false);
  Var x = tape.constant(to_tensor<T>(x_t, cfg_.high_dims()));
  Var z = tape.constant(to_tensor<T>(z_cond, cfg_.low_dims));
  const auto& out = tape.value(forward_impl(tape, store_, x, t, z));
  return {out.data.begin(), out.data.end()};
}

template class SrModel<float>;
template class SrModel<double>;

std::vector<double> sr_sample(const SrDenoiser& net, std::span<const double> z0, const NoiseSchedule& sched,
                              const SamplerOptions& opts, std::uint64_t seed) {
  if (z0.size() != net.low_dims().count()) throw InvalidArgument("sr_sample: condition does not match low_dims");
  for (double v : z0) {
    if (!std::isfinite(v)) throw InvalidArgument("sr_sample: condition is not finite");
  }
  const std::vector<double> cond(z0.begin(), z0.end());
  return ddim_sample([&](std::span<const double> x, int t) { return net.predict_eps(x, t, cond); },
                     net.high_dims().count(), sched, opts, seed);
}

}  // namespace volcomp
