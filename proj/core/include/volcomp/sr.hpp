#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "volcomp/denoiser.hpp"
#include "volcomp/diffusion.hpp"
#include "volcomp/nn/params.hpp"
#include "volcomp/nn/tape.hpp"
#include "volcomp/unet.hpp"

namespace volcomp {

struct SrConfig {
  Dims3 low_dims{20, 24, 20};
  int base_channels = 16;
  std::array<int, kUNetLevels> channel_multipliers{1, 2, 4, 4};
  int time_embed_dim = 32;

  [[nodiscard]] Dims3 high_dims() const { return low_dims.doubled(); }
  void validate() const;
  [[nodiscard]] UNetSpec unet_spec() const;
  friend bool operator==(const SrConfig&, const SrConfig&) = default;
};

/// Refine-stage denoiser: the shared backbone on two input channels, x_t and
/// the low-resolution condition lifted by a learned stride-2 transposed
/// convolution (k = 4, pad = 1).
template <class T>
class SrModel final : public SrDenoiser {
 public:
  explicit SrModel(const SrConfig& cfg);

  [[nodiscard]] const SrConfig& config() const { return cfg_; }
  [[nodiscard]] nn::ParamStore<T>& params() { return store_; }
  [[nodiscard]] const nn::ParamStore<T>& params() const { return store_; }
  void initialize(std::uint64_t seed) { store_.initialize(seed); }

  [[nodiscard]] std::size_t upsample_weight_index() const { return up_w_; }
  [[nodiscard]] std::size_t upsample_bias_index() const { return up_b_; }

  // z: {1, low_dims} -> {1, high_dims}.
  nn::Var upsample_cond(nn::Tape<T>& tape, nn::Var z);
  [[nodiscard]] std::vector<double> upsample_cond(std::span<const double> z) const;

  // Training forward on a recording tape; x_t {1, high_dims}, z {1, low_dims}.
  nn::Var forward(nn::Tape<T>& tape, nn::Var x_t, int t, nn::Var z);

  [[nodiscard]] Dims3 low_dims() const override { return cfg_.low_dims; }
  [[nodiscard]] std::vector<double> predict_eps(std::span<const double> x_t, int t,
                                                std::span<const double> z_cond) const override;

 private:
  template <class Store>
  nn::Var upsample_impl(nn::Tape<T>& tape, Store& store, nn::Var z) const;
  template <class Store>
  nn::Var forward_impl(nn::Tape<T>& tape, Store& store, nn::Var x_t, int t, nn::Var z) const;

  SrConfig cfg_;
  nn::ParamStore<T> store_;
  std::size_t up_w_ = 0, up_b_ = 0;
  UNet3d<T> net_;
};

extern template class SrModel<float>;
extern template class SrModel<double>;

/// DDIM from Gaussian noise at high_dims, conditioned at every step on z0
/// (model space, low_dims). Returns the high-resolution sample in model space.
std::vector<double> sr_sample(const SrDenoiser& net, std::span<const double> z0, const NoiseSchedule& sched,
                              const SamplerOptions& opts, std::uint64_t seed);

}  // namespace volcomp
