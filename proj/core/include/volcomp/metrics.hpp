#pragma once

#include <optional>

#include "volcomp/tissue.hpp"
#include "volcomp/volume.hpp"

namespace volcomp {

/// 10 log10(range^2 / MSE); +infinity when the volumes are identical.
double psnr(const Volume3D& a, const Volume3D& b, double data_range = 1.0);

struct SsimParams {
  int window = 7;  // cubic, odd, >= 3
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;

  void validate() const;
};

/// Mean SSIM over every fully contained window position (stride 1) with a
/// uniform window and population statistics.
double ssim3d(const Volume3D& a, const Volume3D& b, const SsimParams& p = {});

struct SegmentThresholds {
  double csf_gm = 0.4;  // below: csf (and background when no background cut)
  double gm_wm = 0.56;  // at or above: wm
  // Optional cut below which voxels are labeled background instead of csf.
  std::optional<double> background;

  void validate() const;
};

/// Intensity binning into the three tissue proxies (plus background when a
/// background cut is given).
LabelVolume segment_tissues(const Volume3D& v, const SegmentThresholds& th = {});

/// Voxel count per tissue times the voxel volume. Background is not counted.
TissueVolumes tissue_volumes(const LabelVolume& labels);

}  // namespace volcomp
