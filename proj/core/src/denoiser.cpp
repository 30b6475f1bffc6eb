#include "volcomp/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "volcomp/errors.hpp"

namespace volcomp {

void GuidanceBundle::validate(Dims3 dims) const {
  if (!std::isfinite(target_age_months) || target_age_months <= 0.0) {
    throw InvalidArgument(fmt::format("target age must be finite and positive, got {}", target_age_months));
  }
  if (guide_volume.dims() != dims) {
    throw InvalidArgument(
        fmt::format("guide volume is {}, model expects {}", to_string(guide_volume.dims()), to_string(dims)));
  }
}

std::vector<double> to_model_space(const Volume3D& v) {
  std::vector<double> out(v.voxels().size());
  std::transform(v.voxels().begin(), v.voxels().end(), out.begin(),
                 [](float x) { return 2.0 * static_cast<double>(x) - 1.0; });
  return out;
}

Volume3D from_model_space(std::span<const double> x, Dims3 dims, Spacing3 spacing) {
  std::vector<float> vox(x.size());
  std::transform(x.begin(), x.end(), vox.begin(),
                 [](double v) { return static_cast<float>(std::clamp(0.5 * (v + 1.0), 0.0, 1.0)); });
  return Volume3D(dims, spacing, std::move(vox));
}

}  // namespace volcomp
