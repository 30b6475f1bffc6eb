#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "volcomp/nn/ops.hpp"
#include "volcomp/nn/params.hpp"
#include "volcomp/nn/tape.hpp"
#include "volcomp/volume.hpp"

namespace volcomp {

inline constexpr int kUNetLevels = 4;

/// Layout of the 3D encoder-decoder used by both diffusion stages.
struct UNetSpec {
  Dims3 dims;                  // logical input extent; padded internally to a multiple of 16
  int in_channels = 1;         // channels of the primary encoder input
  int out_channels = 1;
  int base_channels = 16;
  std::array<int, kUNetLevels> channel_multipliers{1, 2, 4, 4};
  int time_embed_dim = 32;
  int max_groups = 8;
  bool guide_encoder = false;  // second encoder with its own weights for a guidance volume
  bool age_attention = false;  // cross-attention from bottleneck features to age tokens
  int age_embed_dim = 32;
  int age_tokens = 4;
  int attention_heads = 2;

  [[nodiscard]] int channels(int level) const { return base_channels * channel_multipliers[static_cast<std::size_t>(level)]; }
};

/// Smallest extent >= d divisible by 2^4 on every axis.
Dims3 unet_padded_dims(Dims3 d);

/// GroupNorm group count for a channel count: gcd(max_groups, channels).
int norm_groups(int channels, int max_groups);

/// Interleaved sinusoidal code: out[2i] = sin(v * f_i), out[2i+1] = cos(v * f_i),
/// f_i = max_period^(-2i / dim). dim must be even.
std::vector<double> sinusoidal_encoding(double value, int dim, double max_period);

inline constexpr double kTimeMaxPeriod = 10000.0;
inline constexpr double kAgeMaxPeriod = 100.0;

template <class T>
class UNet3d {
 public:
  struct Inputs {
    nn::Var x;                          // {in_channels, dims}
    nn::Var time_code;                  // {time_embed_dim} sinusoidal code of t
    std::optional<nn::Var> guide;       // {1, dims}; required iff spec.guide_encoder
    std::optional<nn::Var> age_code;    // {age_embed_dim}; required iff spec.age_attention
  };

  UNet3d() = default;
  // Registers every weight in `store` under `prefix`.
  UNet3d(const UNetSpec& spec, nn::ParamStore<T>& store, const std::string& prefix = "");

  [[nodiscard]] const UNetSpec& spec() const { return spec_; }

  // Store is either ParamStore<T>& (gradients recorded when the tape records)
  // or const ParamStore<T>& (inference only).
  template <class Store>
  nn::Var forward(nn::Tape<T>& tape, Store& store, const Inputs& in) const;

  // Time MLP applied to a sinusoidal code: {time_embed_dim}.
  template <class Store>
  nn::Var time_embedding(nn::Tape<T>& tape, Store& store, nn::Var time_code) const;
  // Age MLP applied to a sinusoidal code: {age_tokens, age_embed_dim}.
  template <class Store>
  nn::Var age_tokens(nn::Tape<T>& tape, Store& store, nn::Var age_code) const;

 private:
  struct Conv {
    std::size_t w = 0, b = 0;
  };
  struct Norm {
    std::size_t gamma = 0, beta = 0;
    int groups = 1;
  };
  struct Linear {
    std::size_t w = 0, b = 0;
  };
  struct ResBlock {
    Norm n1;
    Conv c1;
    Linear temb;
    Norm n2;
    Conv c2;
    std::optional<Conv> skip;
  };
  struct Encoder {
    Conv in;
    std::array<ResBlock, kUNetLevels> blocks;
  };
  struct Head {
    std::size_t wq = 0, wk = 0, wv = 0, wo = 0;
  };

  template <class Store>
  nn::Var res_block(nn::Tape<T>& tape, Store& store, const ResBlock& rb, nn::Var x, nn::Var temb) const;
  template <class Store>
  std::pair<nn::Var, std::vector<nn::Var>> encode(nn::Tape<T>& tape, Store& store, const Encoder& enc, nn::Var x,
                                                  nn::Var temb) const;
  template <class Store>
  nn::Var attend_age(nn::Tape<T>& tape, Store& store, nn::Var h, nn::Var tokens) const;

  UNetSpec spec_{};
  Dims3 padded_{};
  Linear time1_, time2_;
  Encoder enc_x_;
  std::optional<Encoder> enc_guide_;
  ResBlock mid1_, mid2_;
  std::optional<Linear> age1_, age2_;
  Norm attn_norm_;
  std::vector<Head> heads_;
  std::array<Conv, kUNetLevels> up_;
  std::array<ResBlock, kUNetLevels> dec_;
  Norm out_norm_;
  Conv out_;
};

extern template class UNet3d<float>;
extern template class UNet3d<double>;

}  // namespace volcomp
