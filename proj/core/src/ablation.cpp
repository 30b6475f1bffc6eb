#include "volcomp/ablation.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "volcomp/errors.hpp"
#include "volcomp/rng.hpp"

namespace volcomp {

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

}  // namespace

AblationReport ablation_report(const std::vector<AblationVariant>& variants, const std::vector<ScanRecord>& held_out,
                               const LongitudinalCohort& cohort, std::uint64_t seed, const CompletionOptions& opts,
                               const SsimParams& ssim, GuidancePolicy policy) {
  AblationReport report;
  for (const auto& v : variants) {
    if (v.models.refine.high_dims() != v.models.refine.low_dims().doubled()) {
      throw InvalidArgument(fmt::format("variant '{}' has an inconsistent refine stage", v.name));
    }
    std::vector<double> ps, ss;
    for (std::size_t i = 0; i < held_out.size(); ++i) {
      const ScanRecord& truth = held_out[i];
      if (truth.volume().dims() != v.models.refine.high_dims()) {
        throw InvalidArgument(fmt::format("variant '{}' produces {}, held-out scan {} is {}", v.name,
                                          to_string(v.models.refine.high_dims()), truth.scan_id(),
                                          to_string(truth.volume().dims())));
      }
      CompletionRequest req{truth.subject_id(), {truth.age_months()}, policy, std::nullopt};
      const auto done = complete_subject(v.models, cohort, req, derive_seed(seed, i), opts);
      const double p = psnr(done.front().volume(), truth.volume(), 1.0);
      const double s = ssim3d(done.front().volume(), truth.volume(), ssim);
      report.scores.push_back({truth.scan_id(), v.name, p, s});
      ps.push_back(p);
      ss.push_back(s);
    }
    const auto [pm, psd] = mean_std(ps);
    const auto [sm, ssd] = mean_std(ss);
    report.rows.push_back({v.name, held_out.size(), pm, psd, sm, ssd});
  }
  return report;
}

std::string format_ablation_table(const AblationReport& report) {
  std::size_t w = 22;
  for (const auto& r : report.rows) w = std::max(w, r.variant.size());
  std::string out = fmt::format("{:<{}} {:>4} {:>18} {:>16}\n", "variant", w, "n", "PSNR (dB)", "SSIM");
  for (const auto& r : report.rows) {
    out += fmt::format("{:<{}} {:>4} {:>9.2f} +- {:<5.2f} {:>7.3f} +- {:<5.3f}\n", r.variant, w, r.n, r.psnr_mean,
                       r.psnr_std, r.ssim_mean, r.ssim_std);
  }
  out += "reference (clinical scale, not reproduced here):\n";
  for (const auto& r : kReferenceTable) {
    out += fmt::format("{:<{}} {:>4} {:>9.2f}          {:>7.2f}\n", r.variant, w, "-", r.psnr, r.ssim);
  }
  return out;
}

}  // namespace volcomp
