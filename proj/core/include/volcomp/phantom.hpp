#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volcomp/tissue.hpp"
#include "volcomp/volume.hpp"

namespace volcomp {

/// Log-linear mixed-effects volume law per tissue:
/// V = beta0 + beta1 * ln(age) + b_subject + e_scan (mm^3).
struct GrowthLaw {
  TissueVolumes beta0{300.0, 200.0, 120.0};
  TissueVolumes beta1{100.0, 150.0, 90.0};
  double sigma_subject = 8.0;
  double sigma_noise = 4.0;

  [[nodiscard]] double mean_volume(Tissue t, double age_months) const;
  void validate() const;
};

/// Class intensities move linearly from `young` at age_young to `old` at
/// age_old and stay constant outside that range.
struct ContrastLaw {
  double age_young = 3.0;
  double age_old = 9.0;
  TissueVolumes young{0.30, 0.50, 0.62};
  TissueVolumes old{0.20, 0.50, 0.80};
  double background = 0.0;
  double noise_sigma = 0.01;

  [[nodiscard]] double intensity(Tissue t, double age_months) const;
  void validate() const;
};

struct PhantomConfig {
  Dims3 dims{20, 24, 20};       // low-resolution grid of the generate stage
  Spacing3 spacing{1.0, 1.0, 1.0};
  int n_subjects = 10;
  std::vector<double> age_grid{3.0, 6.0, 9.0, 12.0, 18.0, 24.0};
  ContrastLaw contrast;
  std::uint64_t seed = 7;

  // Scans are rendered at twice the resolution: the grid of the refine stage.
  [[nodiscard]] Dims3 render_dims() const { return dims.doubled(); }
  [[nodiscard]] Spacing3 render_spacing() const { return {spacing.sx / 2, spacing.sy / 2, spacing.sz / 2}; }
  void validate() const;
};

/// Semi-axes of the nested ellipsoids are (a, 1.2 a, a) in mm.
inline constexpr double kEllipsoidAspectY = 1.2;
/// Smallest ellipsoid extent, in voxels of the render grid, along any axis.
inline constexpr double kMinEllipsoidVoxelsAcross = 4.0;

struct PhantomTruth {
  std::string subject_id;
  double age_months = 0.0;
  TissueVolumes volumes{};           // analytic per-class volumes, mm^3
  std::array<double, kTissueCount> semi_axis_x{};  // outer radius of each class boundary, mm
  LabelVolume labels;                // render-grid class map
};

struct PhantomCohort {
  LongitudinalCohort cohort;          // render-grid scans
  std::vector<PhantomTruth> truth;    // one per scan, cohort order

  [[nodiscard]] const PhantomTruth& truth_for(const std::string& subject_id, double age_months) const;
};

/// Radius along x of an ellipsoid with the phantom aspect and volume v (mm^3).
double ellipsoid_semi_axis(double volume_mm3);

/// Deterministic in cfg.seed; subject i draws from substream derive_seed(seed, i).
PhantomCohort generate_cohort(const PhantomConfig& cfg, const GrowthLaw& law);

struct MaskedCohort {
  LongitudinalCohort train;
  std::vector<ScanRecord> held_out;
};

/// Holds out round(fraction * scans) scans uniformly at random among the
/// subsets that leave every subject at least one scan.
MaskedCohort mask_missing(const LongitudinalCohort& cohort, double missing_fraction, std::uint64_t seed);

}  // namespace volcomp
