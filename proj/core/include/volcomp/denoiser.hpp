#pragma once

#include <span>
#include <vector>

#include "volcomp/volume.hpp"

namespace volcomp {

/// Condition c = (X_im, X_mo) of the generate stage.
struct GuidanceBundle {
  Volume3D guide_volume;     // intensities in [0, 1]
  double target_age_months = 0.0;

  // Throws InvalidArgument unless the age is finite and positive and the
  // guide matches `dims`.
  void validate(Dims3 dims) const;
};

/// Diffusion runs on [-1, 1]; volumes live on [0, 1].
std::vector<double> to_model_space(const Volume3D& v);
/// Inverse of to_model_space, clamped to [0, 1].
Volume3D from_model_space(std::span<const double> x, Dims3 dims, Spacing3 spacing);

/// eps-prediction network of the generate stage. x_t is in model space.
class GenerateDenoiser {
 public:
  virtual ~GenerateDenoiser() = default;
  [[nodiscard]] virtual Dims3 dims() const = 0;
  [[nodiscard]] virtual std::vector<double> predict_eps(std::span<const double> x_t, int t,
                                                        const GuidanceBundle& guidance) const = 0;
};

/// eps-prediction network of the refine stage. x_t is at high_dims, z_cond
/// (model space) at low_dims.
class SrDenoiser {
 public:
  virtual ~SrDenoiser() = default;
  [[nodiscard]] virtual Dims3 low_dims() const = 0;
  [[nodiscard]] Dims3 high_dims() const { return low_dims().doubled(); }
  [[nodiscard]] virtual std::vector<double> predict_eps(std::span<const double> x_t, int t,
                                                        std::span<const double> z_cond) const = 0;
};

}  // namespace volcomp
