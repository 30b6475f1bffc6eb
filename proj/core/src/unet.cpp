#include "volcomp/unet.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "volcomp/errors.hpp"

namespace volcomp {

using nn::Init;
using nn::ParamSpec;
using nn::ParamStore;
using nn::Tape;
using nn::Tensor;
using nn::Var;

Dims3 unet_padded_dims(Dims3 d) {
  constexpr int m = 1 << kUNetLevels;
  auto up = [](int n) { return (n + m - 1) / m * m; };
  return {up(d.nx), up(d.ny), up(d.nz)};
}

int norm_groups(int channels, int max_groups) { return std::gcd(channels, max_groups); }

std::vector<double> sinusoidal_encoding(double value, int dim, double max_period) {
  if (dim <= 0 || dim % 2 != 0) {
    throw InvalidArgument("sinusoidal encoding dim must be positive and even");
  }
  std::vector<double> out(static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(max_period, -2.0 * i / dim);
    out[static_cast<std::size_t>(2 * i)] = std::sin(value * freq);
    out[static_cast<std::size_t>(2 * i + 1)] = std::cos(value * freq);
  }
  return out;
}

namespace {

template <class T>
struct Builder {
  ParamStore<T>& store;
  std::string prefix;

  std::size_t add(const std::string& name, std::vector<int> shape, Init init, int fan_in = 1) {
    return store.add(ParamSpec{prefix + name, std::move(shape), init, fan_in});
  }
};

}  // namespace

template <class T>
UNet3d<T>::UNet3d(const UNetSpec& spec, ParamStore<T>& store, const std::string& prefix)
    : spec_(spec), padded_(unet_padded_dims(spec.dims)) {
  if (!spec.dims.positive()) throw InvalidArgument("unet dims must be positive");
  if (spec.base_channels < 1 || spec.in_channels < 1 || spec.out_channels < 1) {
    throw InvalidArgument("unet channel counts must be positive");
  }
  for (int m : spec.channel_multipliers) {
    if (m < 1) throw InvalidArgument("channel multipliers must be positive");
  }
  if (spec.time_embed_dim < 2 || spec.time_embed_dim % 2 != 0) {
    throw InvalidArgument("time_embed_dim must be even and >= 2");
  }
  if (spec.age_attention) {
    if (spec.age_embed_dim < 2 || spec.age_embed_dim % 2 != 0) throw InvalidArgument("age_embed_dim must be even");
    if (spec.age_tokens < 1 || spec.attention_heads < 1) throw InvalidArgument("attention needs tokens and heads");
  }

  Builder<T> b{store, prefix};
  auto conv = [&](const std::string& name, int cin, int cout, int k, bool zero = false) {
    const int fan = cin * k * k * k;
    return Conv{b.add(name + ".weight", {cout, cin, k, k, k}, zero ? Init::zeros : Init::fan_in_uniform, fan),
                b.add(name + ".bias", {cout}, Init::zeros)};
  };
  auto up_conv = [&](const std::string& name, int cin, int cout) {
    return Conv{b.add(name + ".weight", {cin, cout, 2, 2, 2}, Init::fan_in_uniform, cin),
                b.add(name + ".bias", {cout}, Init::zeros)};
  };
  auto norm = [&](const std::string& name, int c) {
    return Norm{b.add(name + ".gamma", {c}, Init::ones), b.add(name + ".beta", {c}, Init::zeros),
                norm_groups(c, spec.max_groups)};
  };
  auto lin = [&](const std::string& name, int in, int out) {
    return Linear{b.add(name + ".weight", {out, in}, Init::fan_in_uniform, in), b.add(name + ".bias", {out}, Init::zeros)};
  };
  auto res = [&](const std::string& name, int cin, int cout) {
    ResBlock r;
    r.n1 = norm(name + ".norm1", cin);
    r.c1 = conv(name + ".conv1", cin, cout, 3);
    r.temb = lin(name + ".time", spec.time_embed_dim, cout);
    r.n2 = norm(name + ".norm2", cout);
    r.c2 = conv(name + ".conv2", cout, cout, 3);
    if (cin != cout) r.skip = conv(name + ".skip", cin, cout, 1);
    return r;
  };
  auto encoder = [&](const std::string& name, int cin) {
    Encoder e;
    e.in = conv(name + ".in", cin, spec.channels(0), 3);
    int prev = spec.channels(0);
    for (int l = 0; l < kUNetLevels; ++l) {
      e.blocks[static_cast<std::size_t>(l)] = res(fmt::format("{}.level{}", name, l), prev, spec.channels(l));
      prev = spec.channels(l);
    }
    return e;
  };

  const int td = spec.time_embed_dim;
  time1_ = lin("time_mlp.0", td, td);
  time2_ = lin("time_mlp.1", td, td);
  enc_x_ = encoder("enc_x", spec.in_channels);
  if (spec.guide_encoder) enc_guide_ = encoder("enc_guide", 1);

  const int cb = spec.channels(kUNetLevels - 1);
  const int streams = spec.guide_encoder ? 2 : 1;
  mid1_ = res("mid.block1", cb * streams, cb);
  if (spec.age_attention) {
    const int ad = spec.age_embed_dim;
    age1_ = lin("age_mlp.0", ad, ad);
    age2_ = lin("age_mlp.1", ad, ad * spec.age_tokens);
    attn_norm_ = norm("mid.attn.norm", cb);
    const int dh = std::max(1, cb / spec.attention_heads);
    for (int h = 0; h < spec.attention_heads; ++h) {
      const std::string hn = fmt::format("mid.attn.head{}", h);
      heads_.push_back(Head{b.add(hn + ".q", {cb, dh}, Init::fan_in_uniform, cb),
                            b.add(hn + ".k", {ad, dh}, Init::fan_in_uniform, ad),
                            b.add(hn + ".v", {ad, dh}, Init::fan_in_uniform, ad),
                            b.add(hn + ".o", {dh, cb}, Init::fan_in_uniform, dh * spec.attention_heads)});
    }
  }
  mid2_ = res("mid.block2", cb, cb);

  int prev = cb;
  for (int l = kUNetLevels - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const int c = spec.channels(l);
    up_[li] = up_conv(fmt::format("dec.level{}.up", l), prev, c);
    dec_[li] = res(fmt::format("dec.level{}.block", l), c * (1 + streams), c);
    prev = c;
  }
  out_norm_ = norm("out.norm", spec.channels(0));
  out_ = conv("out.conv", spec.channels(0), spec.out_channels, 3, /*zero=*/true);
}

template <class T>
template <class Store>
Var UNet3d<T>::res_block(Tape<T>& tape, Store& store, const ResBlock& rb, Var x, Var temb) const {
  auto P = [&](std::size_t i) { return tape.parameter(store, i); };
  Var h = nn::group_norm(tape, x, P(rb.n1.gamma), P(rb.n1.beta), rb.n1.groups);
  h = nn::silu(tape, h);
  h = nn::conv3d(tape, h, P(rb.c1.w), P(rb.c1.b));
  Var tb = nn::linear(tape, nn::silu(tape, temb), P(rb.temb.w), P(rb.temb.b));
  h = nn::add_channel_bias(tape, h, tb);
  h = nn::group_norm(tape, h, P(rb.n2.gamma), P(rb.n2.beta), rb.n2.groups);
  h = nn::silu(tape, h);
  h = nn::conv3d(tape, h, P(rb.c2.w), P(rb.c2.b));
  Var skip = rb.skip ? nn::conv3d(tape, x, P(rb.skip->w), P(rb.skip->b)) : x;
  return nn::add(tape, h, skip);
}

template <class T>
template <class Store>
std::pair<Var, std::vector<Var>> UNet3d<T>::encode(Tape<T>& tape, Store& store, const Encoder& enc, Var x,
                                                    Var temb) const {
  auto P = [&](std::size_t i) { return tape.parameter(store, i); };
  std::vector<Var> skips;
  Var h = nn::conv3d(tape, x, P(enc.in.w), P(enc.in.b));
  for (const ResBlock& rb : enc.blocks) {
    h = res_block(tape, store, rb, h, temb);
    skips.push_back(h);
    h = nn::avg_pool2(tape, h);
  }
  return {h, std::move(skips)};
}

template <class T>
template <class Store>
Var UNet3d<T>::time_embedding(Tape<T>& tape, Store& store, Var time_code) const {
  auto P = [&](std::size_t i) { return tape.parameter(store, i); };
  Var e = nn::linear(tape, time_code, P(time1_.w), P(time1_.b));
  e = nn::silu(tape, e);
  return nn::linear(tape, e, P(time2_.w), P(time2_.b));
}

template <class T>
template <class Store>
Var UNet3d<T>::age_tokens(Tape<T>& tape, Store& store, Var age_code) const {
  if (!age1_) throw InvalidArgument("network has no age path");
  auto P = [&](std::size_t i) { return tape.parameter(store, i); };
  Var a = nn::linear(tape, age_code, P(age1_->w), P(age1_->b));
  a = nn::silu(tape, a);
  a = nn::linear(tape, a, P(age2_->w), P(age2_->b));
  return nn::reshape(tape, a, {spec_.age_tokens, spec_.age_embed_dim});
}

template <class T>
template <class Store>
Var UNet3d<T>::attend_age(Tape<T>& tape, Store& store, Var h, Var tokens) const {
  auto P = [&](std::size_t i) { return tape.parameter(store, i); };
  const auto& shape = tape.value(h).shape;
  const int c = shape[0];
  const int n = shape[1] * shape[2] * shape[3];

  Var normed = nn::group_norm(tape, h, P(attn_norm_.gamma), P(attn_norm_.beta), attn_norm_.groups);
  // queries: one token per bottleneck voxel
  Var feats = nn::transpose(tape, nn::reshape(tape, normed, {c, n}));
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(tape.value(P(heads_.front().wq)).shape[1]));
  std::optional<Var> out;
  for (const Head& hd : heads_) {
    Var q = nn::matmul(tape, feats, P(hd.wq));
    Var k = nn::matmul(tape, tokens, P(hd.wk));
    Var v = nn::matmul(tape, tokens, P(hd.wv));
    Var att = nn::softmax_rows(tape, nn::scale(tape, nn::matmul(tape, q, k, false, true), inv_sqrt_dh));
    Var o = nn::matmul(tape, nn::matmul(tape, att, v), P(hd.wo));
    out = out ? nn::add(tape, *out, o) : o;
  }
  Var back = nn::reshape(tape, nn::transpose(tape, *out), shape);
  return nn::add(tape, h, back);
}

template <class T>
template <class Store>
Var UNet3d<T>::forward(Tape<T>& tape, Store& store, const Inputs& in) const {
  auto P = [&](std::size_t i) { return tape.parameter(store, i); };
  const auto& xs = tape.value(in.x).shape;
  if (xs.size() != 4 || xs[0] != spec_.in_channels || Dims3{xs[1], xs[2], xs[3]} != spec_.dims) {
    throw InvalidArgument(fmt::format("unet input must be {{{}, {}}}", spec_.in_channels, to_string(spec_.dims)));
  }
  if (spec_.guide_encoder != in.guide.has_value()) throw InvalidArgument("unet guide input mismatch");
  if (spec_.age_attention != in.age_code.has_value()) throw InvalidArgument("unet age input mismatch");

  const Var temb = time_embedding(tape, store, in.time_code);

  auto [hx, skips_x] = encode(tape, store, enc_x_, nn::crop_pad(tape, in.x, padded_), temb);
  Var h = hx;
  std::vector<Var> skips_g;
  if (enc_guide_) {
    auto [hg, sg] = encode(tape, store, *enc_guide_, nn::crop_pad(tape, *in.guide, padded_), temb);
    skips_g = std::move(sg);
    h = nn::concat_channels(tape, {hx, hg});
  }
  h = res_block(tape, store, mid1_, h, temb);
  if (spec_.age_attention) h = attend_age(tape, store, h, age_tokens(tape, store, *in.age_code));
  h = res_block(tape, store, mid2_, h, temb);

  for (int l = kUNetLevels - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    Var up = nn::conv_transpose3d(tape, h, P(up_[li].w), P(up_[li].b), 2, 0);
    std::vector<Var> parts{up, skips_x[li]};
    if (enc_guide_) parts.push_back(skips_g[li]);
    h = res_block(tape, store, dec_[li], nn::concat_channels(tape, parts), temb);
  }
  h = nn::group_norm(tape, h, P(out_norm_.gamma), P(out_norm_.beta), out_norm_.groups);
  h = nn::silu(tape, h);
  h = nn::conv3d(tape, h, P(out_.w), P(out_.b));
  return nn::crop_pad(tape, h, spec_.dims);
}

template class UNet3d<float>;
template class UNet3d<double>;
template Var UNet3d<float>::forward(Tape<float>&, ParamStore<float>&, const Inputs&) const;
template Var UNet3d<float>::time_embedding(Tape<float>&, ParamStore<float>&, Var) const;
template Var UNet3d<float>::age_tokens(Tape<float>&, ParamStore<float>&, Var) const;
template Var UNet3d<float>::forward(Tape<float>&, const ParamStore<float>&, const Inputs&) const;
template Var UNet3d<float>::time_embedding(Tape<float>&, const ParamStore<float>&, Var) const;
template Var UNet3d<float>::age_tokens(Tape<float>&, const ParamStore<float>&, Var) const;
template Var UNet3d<double>::forward(Tape<double>&, ParamStore<double>&, const Inputs&) const;
template Var UNet3d<double>::time_embedding(Tape<double>&, ParamStore<double>&, Var) const;
template Var UNet3d<double>::age_tokens(Tape<double>&, ParamStore<double>&, Var) const;
template Var UNet3d<double>::forward(Tape<double>&, const ParamStore<double>&, const Inputs&) const;
template Var UNet3d<double>::time_embedding(Tape<double>&, const ParamStore<double>&, Var) const;
template Var UNet3d<double>::age_tokens(Tape<double>&, const ParamStore<double>&, Var) const;

}  // namespace volcomp
