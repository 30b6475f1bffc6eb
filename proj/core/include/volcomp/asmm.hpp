#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "volcomp/denoiser.hpp"
#include "volcomp/nn/params.hpp"
#include "volcomp/nn/tape.hpp"
#include "volcomp/unet.hpp"

namespace volcomp {

struct AsmmConfig {
  Dims3 in_dims{20, 24, 20};
  int base_channels = 16;
  std::array<int, kUNetLevels> channel_multipliers{1, 2, 4, 4};
  int age_embed_dim = 32;
  int time_embed_dim = 32;
  int attention_heads = 2;
  int age_tokens = 4;
  // false gives the shared-encoder ablation: the guide is stacked onto x_t as
  // a second input channel of a single encoder.
  bool independent_guide_encoder = true;

  void validate() const;
  [[nodiscard]] UNetSpec unet_spec() const;
  friend bool operator==(const AsmmConfig&, const AsmmConfig&) = default;
};

/// Sinusoidal code of the diffusion step (input of the time MLP). t >= 0.
std::vector<double> time_encoding(int t, int dim);
/// Sinusoidal code of the age in months (input of the age MLP). age > 0.
std::vector<double> age_encoding(double age_months, int dim);

template <class T>
class AsmmModel final : public GenerateDenoiser {
 public:
  explicit AsmmModel(const AsmmConfig& cfg);

  [[nodiscard]] const AsmmConfig& config() const { return cfg_; }
  [[nodiscard]] nn::ParamStore<T>& params() { return store_; }
  [[nodiscard]] const nn::ParamStore<T>& params() const { return store_; }
  void initialize(std::uint64_t seed) { store_.initialize(seed); }

  // Time embedding after the MLP, {time_embed_dim}.
  [[nodiscard]] std::vector<double> embed_time(int t) const;
  // tau(X_mo): age tokens after the MLP, row-major {age_tokens, age_embed_dim}.
  [[nodiscard]] std::vector<double> embed_age(double age_months) const;

  // Training forward on a recording tape. x_t and guide are {1, in_dims}
  // tensors in model space.
  nn::Var forward(nn::Tape<T>& tape, nn::Var x_t, int t, nn::Var guide, double age_months);

  [[nodiscard]] Dims3 dims() const override { return cfg_.in_dims; }
  [[nodiscard]] std::vector<double> predict_eps(std::span<const double> x_t, int t,
                                                const GuidanceBundle& guidance) const override;
  // Same as predict_eps with the guide already in model space.
  [[nodiscard]] std::vector<double> predict_eps_raw(std::span<const double> x_t, int t,
                                                    std::span<const double> guide, double age_months) const;

 private:
  template <class Store>
  nn::Var forward_impl(nn::Tape<T>& tape, Store& store, nn::Var x_t, int t, nn::Var guide, double age) const;

  AsmmConfig cfg_;
  nn::ParamStore<T> store_;
  UNet3d<T> net_;
};

extern template class AsmmModel<float>;
extern template class AsmmModel<double>;

/// One training example for the finite-difference check (model space).
struct GradCheckBatch {
  std::vector<double> x_t;
  std::vector<double> guide;
  std::vector<double> eps;
  int t = 1;
  double age_months = 6.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

GradCheckBatch random_grad_check_batch(const AsmmConfig& cfg, std::uint64_t seed);

/// loss_scale * training_loss(eps, eps_hat) for the batch, evaluated in double.
double grad_check_loss(const AsmmModel<double>& model, const GradCheckBatch& batch, double loss_scale = 1.0);

/// Analytic gradients of loss_scale * training_loss against central differences
/// with step h on `probe_count` randomly chosen weights. The relative error of a
/// probe is |a - n| / max(|a|, |n|, abs_floor).
GradCheckResult loss_gradient_check(AsmmModel<double>& model, const GradCheckBatch& batch, int probe_count,
                                    std::uint64_t seed, double loss_scale = 1.0, double h = 1e-3,
                                    double abs_floor = 1e-6);

}  // namespace volcomp
