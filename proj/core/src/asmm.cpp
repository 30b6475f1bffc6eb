#include "volcomp/asmm.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "volcomp/errors.hpp"
#include "volcomp/nn/ops.hpp"
#include "volcomp/rng.hpp"

namespace volcomp {

using nn::ParamStore;
using nn::Tape;
using nn::Tensor;
using nn::Var;

void AsmmConfig::validate() const {
  if (!in_dims.positive()) throw InvalidArgument("asmm in_dims must be positive");
  if (base_channels < 1) throw InvalidArgument("asmm base_channels must be >= 1");
  for (int m : channel_multipliers) {
    if (m < 1) throw InvalidArgument("asmm channel multipliers must be >= 1");
  }
  if (time_embed_dim < 2 || time_embed_dim % 2) throw InvalidArgument("asmm time_embed_dim must be even");
  if (age_embed_dim < 2 || age_embed_dim % 2) throw InvalidArgument("asmm age_embed_dim must be even");
  if (attention_heads < 1 || age_tokens < 1) throw InvalidArgument("asmm attention needs heads and tokens");
}

UNetSpec AsmmConfig::unet_spec() const {
  UNetSpec s;
  s.dims = in_dims;
  s.in_channels = independent_guide_encoder ? 1 : 2;
  s.out_channels = 1;
  s.base_channels = base_channels;
  s.channel_multipliers = channel_multipliers;
  s.time_embed_dim = time_embed_dim;
  s.guide_encoder = independent_guide_encoder;
  s.age_attention = true;
  s.age_embed_dim = age_embed_dim;
  s.age_tokens = age_tokens;
  s.attention_heads = attention_heads;
  return s;
}

std::vector<double> time_encoding(int t, int dim) {
  if (t < 0) throw InvalidArgument("time step must be >= 0");
  return sinusoidal_encoding(static_cast<double>(t), dim, kTimeMaxPeriod);
}

std::vector<double> age_encoding(double age_months, int dim) {
  if (!std::isfinite(age_months) || age_months <= 0.0) {
    throw InvalidArgument(fmt::format("age must be positive, got {}", age_months));
  }
  return sinusoidal_encoding(age_months, dim, kAgeMaxPeriod);
}

namespace {

template <class T>
Tensor<T> to_tensor(std::span<const double> v, std::vector<int> shape) {
  Tensor<T> out(std::move(shape));
  if (out.size() != v.size()) throw InvalidArgument("tensor size mismatch");
  std::transform(v.begin(), v.end(), out.data.begin(), [](double x) { return static_cast<T>(x); });
  return out;
}

template <class T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return {t.data.begin(), t.data.end()};
}

std::vector<int> volume_shape(Dims3 d) { return {1, d.nx, d.ny, d.nz}; }

}  // namespace

template <class T>
AsmmModel<T>::AsmmModel(const AsmmConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  net_ = UNet3d<T>(cfg_.unet_spec(), store_);
}

template <class T>
std::vector<double> AsmmModel<T>::embed_time(int t) const {
  Tape<T> tape(false);
  Var code = tape.constant(to_tensor<T>(time_encoding(t, cfg_.time_embed_dim), {cfg_.time_embed_dim}));
  return to_doubles(tape.value(net_.time_embedding(tape, store_, code)));
}

template <class T>
std::vector<double> AsmmModel<T>::embed_age(double age_months) const {
  Tape<T> tape(false);
  Var code = tape.constant(to_tensor<T>(age_encoding(age_months, cfg_.age_embed_dim), {cfg_.age_embed_dim}));
  return to_doubles(tape.value(net_.age_tokens(tape, store_, code)));
}

template <class T>
template <class Store>
Var AsmmModel<T>::forward_impl(Tape<T>& tape, Store& store, Var x_t, int t, Var guide, double age) const {
  typename UNet3d<T>::Inputs in;
  in.time_code = tape.constant(to_tensor<T>(time_encoding(t, cfg_.time_embed_dim), {cfg_.time_embed_dim}));
  in.age_code = tape.constant(to_tensor<T>(age_encoding(age, cfg_.age_embed_dim), {cfg_.age_embed_dim}));
  if (cfg_.independent_guide_encoder) {
    in.x = x_t;
    in.guide = guide;
  } else {
    in.x = nn::concat_channels(tape, {x_t, guide});
  }
  return net_.forward(tape, store, in);
}

template <class T>
Var AsmmModel<T>::forward(Tape<T>& tape, Var x_t, int t, Var guide, double age_months) {
  return forward_impl(tape, store_, x_t, t, guide, age_months);
}

template <class T>
std::vector<double> AsmmModel<T>::predict_eps_raw(std::span<const double> x_t, int t, std::span<const double> guide,
                                                  double age_months) const {
  Tape<T> tape(false);
  Var x = tape.constant(to_tensor<T>(x_t, volume_shape(cfg_.in_dims)));
  Var g = tape.constant(to_tensor<T>(guide, volume_shape(cfg_.in_dims)));
  return to_doubles(tape.value(forward_impl(tape, store_, x, t, g, age_months)));
}

template <class T>
std::vector<double> AsmmModel<T>::predict_eps(std::span<const double> x_t, int t,
                                              const GuidanceBundle& guidance) const {
  guidance.validate(cfg_.in_dims);
  if (!store_.all_finite()) throw NumericalError("model weights are not finite");
  return predict_eps_raw(x_t, t, to_model_space(guidance.guide_volume), guidance.target_age_months);
}

template class AsmmModel<float>;
template class AsmmModel<double>;

GradCheckBatch random_grad_check_batch(const AsmmConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = cfg.in_dims.count();
  GradCheckBatch b;
  b.x_t.resize(n);
  b.guide.resize(n);
  b.eps.resize(n);
  for (double& v : b.x_t) v = rng.normal();
  for (double& v : b.guide) v = rng.uniform(-1.0, 1.0);
  for (double& v : b.eps) v = rng.normal();
  b.t = 1 + static_cast<int>(rng.below(1000));
  b.age_months = rng.uniform(1.0, 24.0);
  return b;
}

double grad_check_loss(const AsmmModel<double>& model, const GradCheckBatch& b, double loss_scale) {
  std::vector<double> eps_hat = model.predict_eps_raw(b.x_t, b.t, b.guide, b.age_months);
  double s = 0.0;
  for (std::size_t i = 0; i < eps_hat.size(); ++i) {
    const double d = eps_hat[i] - b.eps[i];
    s += d * d;
  }
  return loss_scale * s / static_cast<double>(eps_hat.size());
}

GradCheckResult loss_gradient_check(AsmmModel<double>& model, const GradCheckBatch& b, int probe_count,
                                    std::uint64_t seed, double loss_scale, double h, double abs_floor) {
  if (probe_count < 1) throw InvalidArgument("probe_count must be >= 1");
  const Dims3 d = model.config().in_dims;
  auto& store = model.params();
  store.zero_grad();
  {
    Tape<double> tape(true);
    Var x = tape.constant(to_tensor<double>(b.x_t, volume_shape(d)));
    Var g = tape.constant(to_tensor<double>(b.guide, volume_shape(d)));
    Var eps = tape.constant(to_tensor<double>(b.eps, volume_shape(d)));
    Var loss = nn::mse(tape, model.forward(tape, x, b.t, g, b.age_months), eps);
    if (loss_scale != 1.0) loss = nn::scale(tape, loss, loss_scale);
    tape.backward(loss);
  }

  Rng rng(seed);
  GradCheckResult r;
  for (int p = 0; p < probe_count; ++p) {
    const std::size_t ti = rng.below(store.size());
    const std::size_t ei = rng.below(store.value(ti).size());
    double& w = store.value(ti).data[ei];
    const double w0 = w;
    w = w0 + h;
    const double lp = grad_check_loss(model, b, loss_scale);
    w = w0 - h;
    const double lm = grad_check_loss(model, b, loss_scale);
    w = w0;
    const double numeric = (lp - lm) / (2.0 * h);
    const double analytic = store.grad(ti).data[ei];
    r.analytic.push_back(analytic);
    r.numeric.push_back(numeric);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic - numeric) / denom);
  }
  return r;
}

}  // namespace volcomp
