#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "volcomp/tissue.hpp"
#include "volcomp/volume.hpp"

namespace volcomp {

struct LmmObservation {
  std::string subject_id;
  double age_months = 0.0;
  double value = 0.0;
};

struct LmmOptions {
  int max_iterations = 500;
  double rel_tolerance = 1e-8;  // on the log-likelihood change
};

/// Random-intercept fit of value = beta0 + beta1 ln(age) + b_subject + e.
struct LmmFit {
  double beta0 = 0.0;
  double beta1 = 0.0;
  double sigma_b2 = 0.0;
  double sigma_e2 = 0.0;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  std::size_t n_obs = 0;
  std::size_t n_subjects = 0;
};

/// Maximum likelihood by EM with the fixed effects profiled by generalized
/// least squares at every step. Needs >= 3 observations and >= 2 distinct
/// ages. Variances are floored at a tiny fraction of the data variance so that
/// noise-free data converge.
LmmFit fit_lmm_loglinear(std::span<const LmmObservation> obs, const LmmOptions& opts = {});

/// One fit per tissue class.
struct TrajectoryModel {
  std::array<LmmFit, kTissueCount> fits{};
};

struct TrajectoryPoint {
  std::string subject_id;
  double age_months = 0.0;
  Tissue tissue = Tissue::csf;
  double volume_mm3 = 0.0;
  Provenance provenance = Provenance::observed;
};

TrajectoryModel fit_trajectories(std::span<const TrajectoryPoint> points, const LmmOptions& opts = {});

}  // namespace volcomp
