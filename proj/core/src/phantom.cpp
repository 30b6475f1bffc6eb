#include "volcomp/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "volcomp/errors.hpp"
#include "volcomp/rng.hpp"

namespace volcomp {

std::string to_string(Tissue t) {
  switch (t) {
    case Tissue::csf:
      return "csf";
    case Tissue::gm:
      return "gm";
    case Tissue::wm:
      return "wm";
  }
  return "unknown";
}

double GrowthLaw::mean_volume(Tissue t, double age_months) const {
  const auto i = static_cast<std::size_t>(t);
  return beta0[i] + beta1[i] * std::log(age_months);
}

void GrowthLaw::validate() const {
  if (!(sigma_subject >= 0.0) || !(sigma_noise >= 0.0)) throw InvalidArgument("growth law sigmas must be >= 0");
  for (Tissue t : kTissues) {
    // Linear in ln(age), so checking both ends of the supported range suffices.
    for (double age : {0.5, 26.0}) {
      if (!(mean_volume(t, age) > 0.0)) {
        throw InvalidArgument(fmt::format("growth law gives a non-positive {} volume at {} months", to_string(t), age));
      }
    }
  }
}

double ContrastLaw::intensity(Tissue t, double age_months) const {
  const auto i = static_cast<std::size_t>(t);
  const double w = std::clamp((age_months - age_young) / (age_old - age_young), 0.0, 1.0);
  return (1.0 - w) * young[i] + w * old[i];
}

void ContrastLaw::validate() const {
  if (!(age_old > age_young)) throw InvalidArgument("contrast law needs age_old > age_young");
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("contrast noise sigma must be >= 0");
  for (const auto* set : {&young, &old}) {
    std::array<double, 4> levels{background, (*set)[0], (*set)[1], (*set)[2]};
    for (double v : levels) {
      if (v < 0.0 || v > 1.0) throw InvalidArgument("contrast intensities must lie in [0, 1]");
    }
    std::sort(levels.begin(), levels.end());
    for (std::size_t i = 1; i < levels.size(); ++i) {
      if (levels[i] - levels[i - 1] < 0.1) {
        throw InvalidArgument("contrast intensities must be at least 0.1 apart");
      }
    }
  }
}

void PhantomConfig::validate() const {
  if (!dims.positive()) throw InvalidArgument("phantom dims must be positive");
  if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0)) throw InvalidArgument("phantom spacing must be positive");
  if (n_subjects < 1) throw InvalidArgument("phantom needs at least one subject");
  if (age_grid.empty()) throw InvalidArgument("phantom age grid is empty");
  for (double a : age_grid) {
    if (!(a > 0.5 && a <= 26.0)) throw InvalidArgument(fmt::format("age {} is outside (0.5, 26] months", a));
  }
  contrast.validate();
}

const PhantomTruth& PhantomCohort::truth_for(const std::string& subject_id, double age_months) const {
  for (const auto& t : truth) {
    if (t.subject_id == subject_id && std::abs(t.age_months - age_months) <= kAgeTolerance) return t;
  }
  throw InvalidArgument(fmt::format("no phantom truth for {} at {} months", subject_id, age_months));
}

double ellipsoid_semi_axis(double volume_mm3) {
  return std::cbrt(3.0 * volume_mm3 / (4.0 * std::numbers::pi * kEllipsoidAspectY));
}

namespace {

std::string subject_name(int i) { return fmt::format("sub{:03d}", i); }

struct Rendered {
  Volume3D volume;
  LabelVolume labels;
};

Rendered render(const PhantomConfig& cfg, const std::array<double, kTissueCount>& radii, double age, Rng& rng) {
  const Dims3 d = cfg.render_dims();
  const Spacing3 s = cfg.render_spacing();
  const double min_across = std::max({s.sx, s.sy / kEllipsoidAspectY, s.sz}) * kMinEllipsoidVoxelsAcross;
  const double smallest = *std::min_element(radii.begin(), radii.end());
  if (2.0 * smallest < min_across - 1e-12) {
    throw InvalidArgument(fmt::format("grid {} is too coarse: innermost ellipsoid spans fewer than {} voxels",
                                      to_string(d), kMinEllipsoidVoxelsAcross));
  }
  const double outer = radii[0];
  if (outer > 0.5 * d.nx * s.sx || kEllipsoidAspectY * outer > 0.5 * d.ny * s.sy || outer > 0.5 * d.nz * s.sz) {
    throw InvalidArgument(fmt::format("grid {} is too small for an outer ellipsoid of radius {:.2f} mm",
                                      to_string(d), outer));
  }

  std::vector<float> vox(d.count());
  LabelVolume lab{d, s, std::vector<std::uint8_t>(d.count(), kBackgroundLabel)};
  std::array<double, kTissueCount> level{};
  for (Tissue t : kTissues) level[static_cast<std::size_t>(t)] = cfg.contrast.intensity(t, age);
  std::size_t i = 0;
  for (int z = 0; z < d.nz; ++z) {
    const double pz = (z + 0.5 - 0.5 * d.nz) * s.sz;
    for (int y = 0; y < d.ny; ++y) {
      const double py = (y + 0.5 - 0.5 * d.ny) * s.sy / kEllipsoidAspectY;
      for (int x = 0; x < d.nx; ++x, ++i) {
        const double px = (x + 0.5 - 0.5 * d.nx) * s.sx;
        const double r2 = px * px + py * py + pz * pz;
        double v = cfg.contrast.background;
        // innermost class wins
        for (int c = kTissueCount - 1; c >= 0; --c) {
          const double r = radii[static_cast<std::size_t>(c)];
          if (r2 <= r * r) {
            lab.labels[i] = static_cast<std::uint8_t>(c);
            v = level[static_cast<std::size_t>(c)];
            break;
          }
        }
        if (cfg.contrast.noise_sigma > 0.0) v += cfg.contrast.noise_sigma * rng.normal();
        vox[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return {Volume3D(d, s, std::move(vox)), std::move(lab)};
}

}  // namespace

PhantomCohort generate_cohort(const PhantomConfig& cfg, const GrowthLaw& law) {
  cfg.validate();
  law.validate();
  std::vector<double> ages = cfg.age_grid;
  std::sort(ages.begin(), ages.end());
  PhantomCohort out{LongitudinalCohort(ages), {}};
  for (int si = 0; si < cfg.n_subjects; ++si) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(si)));
    TissueVolumes intercept{};
    for (double& b : intercept) b = law.sigma_subject * rng.normal();
    for (double age : ages) {
      PhantomTruth truth;
      truth.subject_id = subject_name(si);
      truth.age_months = age;
      for (Tissue t : kTissues) {
        const auto c = static_cast<std::size_t>(t);
        const double v = law.mean_volume(t, age) + intercept[c] + law.sigma_noise * rng.normal();
        if (!(v > 0.0)) {
          throw InvalidArgument(fmt::format("drawn {} volume {:.3f} for {} at {} months is not positive",
                                            to_string(t), v, truth.subject_id, age));
        }
        truth.volumes[c] = v;
      }
      // Boundaries enclose the cumulative volume of their class and every class inside it.
      double cumulative = 0.0;
      for (int c = kTissueCount - 1; c >= 0; --c) {
        cumulative += truth.volumes[static_cast<std::size_t>(c)];
        truth.semi_axis_x[static_cast<std::size_t>(c)] = ellipsoid_semi_axis(cumulative);
      }
      Rendered r = render(cfg, truth.semi_axis_x, age, rng);
      truth.labels = std::move(r.labels);
      out.cohort.insert(ScanRecord(truth.subject_id, age, std::move(r.volume), Provenance::observed));
      out.truth.push_back(std::move(truth));
    }
  }
  return out;
}

MaskedCohort mask_missing(const LongitudinalCohort& cohort, double missing_fraction, std::uint64_t seed) {
  if (!(missing_fraction >= 0.0 && missing_fraction < 1.0)) {
    throw InvalidArgument("missing fraction must be in [0, 1)");
  }
  struct Slot {
    std::size_t subject;
    const ScanRecord* scan;
  };
  std::vector<Slot> slots;
  std::vector<std::size_t> per_subject;
  for (const auto& [id, series] : cohort.subjects()) {
    for (const auto& s : series) slots.push_back({per_subject.size(), &s});
    per_subject.push_back(series.size());
  }
  const auto k = static_cast<std::size_t>(std::llround(missing_fraction * static_cast<double>(slots.size())));
  if (k + per_subject.size() > slots.size()) {
    throw InvalidArgument(fmt::format("cannot hold out {} of {} scans while keeping one scan for each of {} subjects",
                                      k, slots.size(), per_subject.size()));
  }

  Rng rng(seed);
  std::vector<std::size_t> order(slots.size());
  std::vector<bool> held(slots.size(), false);
  auto feasible = [&](std::size_t take) {
    std::vector<std::size_t> left = per_subject;
    for (std::size_t i = 0; i < take; ++i) {
      if (--left[slots[order[i]].subject] == 0) return false;
    }
    return true;
  };
  // Rejection sampling over uniformly random k-subsets is exactly uniform on
  // the feasible ones; the greedy fallback only runs for near-infeasible masks.
  bool found = false;
  for (int attempt = 0; attempt < 10000 && !found; ++attempt) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
    found = feasible(k);
  }
  if (found) {
    for (std::size_t i = 0; i < k; ++i) held[order[i]] = true;
  } else {
    std::vector<std::size_t> left = per_subject;
    std::size_t taken = 0;
    for (std::size_t i = 0; i < order.size() && taken < k; ++i) {
      const std::size_t s = slots[order[i]].subject;
      if (left[s] > 1) {
        --left[s];
        held[order[i]] = true;
        ++taken;
      }
    }
  }

  MaskedCohort out{LongitudinalCohort(cohort.age_grid()), {}};
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (held[i]) {
      out.held_out.push_back(*slots[i].scan);
    } else {
      out.train.insert(*slots[i].scan);
    }
  }
  return out;
}

}  // namespace volcomp
