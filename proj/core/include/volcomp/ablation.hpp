#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volcomp/metrics.hpp"
#include "volcomp/pipeline.hpp"

namespace volcomp {

struct AblationVariant {
  std::string name;
  CascadeModels models;
};

struct ScanScore {
  std::string scan_id;
  std::string variant;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct AblationRow {
  std::string variant;
  std::size_t n = 0;
  double psnr_mean = 0.0;
  double psnr_std = 0.0;  // sample standard deviation; 0 for a single scan
  double ssim_mean = 0.0;
  double ssim_std = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;      // variant order
  std::vector<ScanScore> scores;      // variant-major
};

/// Completes every held-out scan from the remaining scans of its subject with
/// each variant and scores the result against the held-out volume. Every
/// variant uses the same per-scan seeds.
AblationReport ablation_report(const std::vector<AblationVariant>& variants, const std::vector<ScanRecord>& held_out,
                               const LongitudinalCohort& cohort, std::uint64_t seed,
                               const CompletionOptions& opts = {}, const SsimParams& ssim = {},
                               GuidancePolicy policy = GuidancePolicy::nearest_age);

/// Published clinical-scale reference numbers, shown next to desk-scale rows.
struct ReferenceRow {
  const char* variant;
  double psnr;
  double ssim;
};
inline constexpr ReferenceRow kReferenceTable[] = {
    {"cGAN", 17.76, 0.72}, {"Model 1", 22.33, 0.73}, {"Model 2", 23.22, 0.78}, {"Full cascade", 24.15, 0.81}};

/// Plain-text table: desk-scale rows then the reference rows.
std::string format_ablation_table(const AblationReport& report);

}  // namespace volcomp
