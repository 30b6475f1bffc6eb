#include "volcomp/volume.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "volcomp/errors.hpp"

namespace volcomp {

std::string to_string(const Dims3& d) { return fmt::format("{}x{}x{}", d.nx, d.ny, d.nz); }

namespace {

void check_geometry(const Dims3& dims, const Spacing3& spacing) {
  if (!dims.positive()) {
    throw InvalidArgument("volume dims must be positive, got " + to_string(dims));
  }
  for (double s : {spacing.sx, spacing.sy, spacing.sz}) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw InvalidArgument("voxel spacing must be positive and finite");
    }
  }
}

}  // namespace

Volume3D::Volume3D(Dims3 dims, Spacing3 spacing, float fill)
    : dims_(dims), spacing_(spacing) {
  check_geometry(dims_, spacing_);
  if (!std::isfinite(fill)) {
    throw InvalidArgument("non-finite fill value");
  }
  voxels_.assign(dims_.count(), fill);
}

Volume3D::Volume3D(Dims3 dims, Spacing3 spacing, std::vector<float> voxels)
    : dims_(dims), spacing_(spacing), voxels_(std::move(voxels)) {
  check_geometry(dims_, spacing_);
  if (voxels_.size() != dims_.count()) {
    throw InvalidArgument(fmt::format("voxel count {} does not match dims {}", voxels_.size(), to_string(dims_)));
  }
  const auto bad = std::find_if(voxels_.begin(), voxels_.end(), [](float v) { return !std::isfinite(v); });
  if (bad != voxels_.end()) {
    throw InvalidArgument(fmt::format("non-finite voxel at index {}", bad - voxels_.begin()));
  }
}

double Volume3D::sum() const {
  return std::accumulate(voxels_.begin(), voxels_.end(), 0.0, [](double acc, float v) { return acc + v; });
}

double Volume3D::mean() const { return voxels_.empty() ? 0.0 : sum() / static_cast<double>(voxels_.size()); }

float Volume3D::min() const { return voxels_.empty() ? 0.0f : *std::min_element(voxels_.begin(), voxels_.end()); }

float Volume3D::max() const { return voxels_.empty() ? 0.0f : *std::max_element(voxels_.begin(), voxels_.end()); }

std::string to_string(Provenance p) { return p == Provenance::observed ? "observed" : "generated"; }

Provenance provenance_from_string(const std::string& s) {
  if (s == "observed") return Provenance::observed;
  if (s == "generated") return Provenance::generated;
  throw FormatError("unknown provenance '" + s + "'");
}

ScanRecord::ScanRecord(std::string subject_id, double age_months, Volume3D volume, Provenance provenance)
    : subject_id_(std::move(subject_id)), age_months_(age_months), volume_(std::move(volume)), provenance_(provenance) {
  if (subject_id_.empty()) {
    throw InvalidArgument("empty subject id");
  }
  if (!(age_months_ > 0.0) || age_months_ > kMaxCohortAgeMonths) {
    throw InvalidArgument(fmt::format("age {} months outside (0, {}]", age_months_, kMaxCohortAgeMonths));
  }
  if (volume_.empty()) {
    throw InvalidArgument("scan without a volume");
  }
}

std::string ScanRecord::scan_id() const { return fmt::format("{}@{:g}", subject_id_, age_months_); }

LongitudinalCohort::LongitudinalCohort(std::vector<double> age_grid) : age_grid_(std::move(age_grid)) {}

void LongitudinalCohort::insert(ScanRecord scan) {
  auto& series = subjects_[scan.subject_id()];
  const double age = scan.age_months();
  const auto pos = std::lower_bound(series.begin(), series.end(), age,
                                    [](const ScanRecord& r, double a) { return r.age_months() < a - kAgeTolerance; });
  if (pos != series.end() && std::abs(pos->age_months() - age) <= kAgeTolerance) {
    throw InvalidArgument("duplicate scan " + scan.scan_id());
  }
  series.insert(pos, std::move(scan));
}

const LongitudinalCohort::Series& LongitudinalCohort::series(const std::string& subject_id) const {
  const auto it = subjects_.find(subject_id);
  if (it == subjects_.end()) {
    throw InvalidArgument("unknown subject '" + subject_id + "'");
  }
  return it->second;
}

std::optional<std::reference_wrapper<const ScanRecord>> LongitudinalCohort::find(const std::string& subject_id,
                                                                                 double age_months) const {
  const auto it = subjects_.find(subject_id);
  if (it == subjects_.end()) return std::nullopt;
  for (const auto& scan : it->second) {
    if (std::abs(scan.age_months() - age_months) <= kAgeTolerance) return std::cref(scan);
  }
  return std::nullopt;
}

std::size_t LongitudinalCohort::scan_count() const {
  std::size_t n = 0;
  for (const auto& [id, series] : subjects_) n += series.size();
  return n;
}

std::vector<std::string> LongitudinalCohort::subject_ids() const {
  std::vector<std::string> ids;
  ids.reserve(subjects_.size());
  for (const auto& [id, series] : subjects_) ids.push_back(id);
  return ids;
}

Volume3D normalize_intensity(const Volume3D& v) {
  const float lo = v.min();
  const float hi = v.max();
  if (!(hi > lo)) {
    throw InvalidArgument("cannot normalize a constant volume (degenerate intensity range)");
  }
  const double range = static_cast<double>(hi) - static_cast<double>(lo);
  return v.with_voxels([&](std::span<float> vox) {
    for (float& x : vox) {
      x = static_cast<float>((static_cast<double>(x) - lo) / range);
    }
  });
}

Volume3D resample_down2(const Volume3D& v) {
  const Dims3 d = v.dims();
  if (d.nx % 2 != 0 || d.ny % 2 != 0 || d.nz % 2 != 0) {
    throw InvalidArgument("resample_down2 needs even dims, got " + to_string(d));
  }
  const Dims3 out = d.halved();
  const Spacing3 sp{v.spacing().sx * 2.0, v.spacing().sy * 2.0, v.spacing().sz * 2.0};
  std::vector<float> vox(out.count());
  for (int z = 0; z < out.nz; ++z) {
    for (int y = 0; y < out.ny; ++y) {
      for (int x = 0; x < out.nx; ++x) {
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) acc += v.at(2 * x + dx, 2 * y + dy, 2 * z + dz);
        vox[static_cast<std::size_t>(x) + static_cast<std::size_t>(out.nx) * (y + static_cast<std::size_t>(out.ny) * z)] =
            static_cast<float>(acc / 8.0);
      }
    }
  }
  return Volume3D(out, sp, std::move(vox));
}

namespace {

// Output index = input index + shift along one axis.
int crop_pad_shift(int n, int target) { return target >= n ? (target - n) / 2 : -((n - target) / 2); }

}  // namespace

Volume3D crop_pad_to(const Volume3D& v, Dims3 target) {
  if (!target.positive()) {
    throw InvalidArgument("crop_pad_to target dims must be positive, got " + to_string(target));
  }
  const Dims3 d = v.dims();
  if (d == target) return v;
  const int sx = crop_pad_shift(d.nx, target.nx);
  const int sy = crop_pad_shift(d.ny, target.ny);
  const int sz = crop_pad_shift(d.nz, target.nz);
  std::vector<float> vox(target.count(), 0.0f);
  for (int z = 0; z < target.nz; ++z) {
    const int iz = z - sz;
    if (iz < 0 || iz >= d.nz) continue;
    for (int y = 0; y < target.ny; ++y) {
      const int iy = y - sy;
      if (iy < 0 || iy >= d.ny) continue;
      for (int x = 0; x < target.nx; ++x) {
        const int ix = x - sx;
        if (ix < 0 || ix >= d.nx) continue;
        vox[static_cast<std::size_t>(x) + static_cast<std::size_t>(target.nx) * (y + static_cast<std::size_t>(target.ny) * z)] =
            v.at(ix, iy, iz);
      }
    }
  }
  return Volume3D(target, v.spacing(), std::move(vox));
}

Volume3D upsample_trilinear2(const Volume3D& v) {
  const Dims3 d = v.dims();
  const Dims3 out = d.doubled();
  const Spacing3 sp{v.spacing().sx / 2.0, v.spacing().sy / 2.0, v.spacing().sz / 2.0};
  // Output voxel center o maps to input coordinate (o + 0.5) / 2 - 0.5.
  auto coord = [](int o, int n) { return std::clamp((o + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(n - 1)); };
  std::vector<float> vox(out.count());
  for (int z = 0; z < out.nz; ++z) {
    const double cz = coord(z, d.nz);
    const int z0 = static_cast<int>(std::floor(cz));
    const int z1 = std::min(z0 + 1, d.nz - 1);
    const double fz = cz - z0;
    for (int y = 0; y < out.ny; ++y) {
      const double cy = coord(y, d.ny);
      const int y0 = static_cast<int>(std::floor(cy));
      const int y1 = std::min(y0 + 1, d.ny - 1);
      const double fy = cy - y0;
      for (int x = 0; x < out.nx; ++x) {
        const double cx = coord(x, d.nx);
        const int x0 = static_cast<int>(std::floor(cx));
        const int x1 = std::min(x0 + 1, d.nx - 1);
        const double fx = cx - x0;
        const double c00 = v.at(x0, y0, z0) * (1 - fx) + v.at(x1, y0, z0) * fx;
        const double c10 = v.at(x0, y1, z0) * (1 - fx) + v.at(x1, y1, z0) * fx;
        const double c01 = v.at(x0, y0, z1) * (1 - fx) + v.at(x1, y0, z1) * fx;
        const double c11 = v.at(x0, y1, z1) * (1 - fx) + v.at(x1, y1, z1) * fx;
        const double c0 = c00 * (1 - fy) + c10 * fy;
        const double c1 = c01 * (1 - fy) + c11 * fy;
        vox[static_cast<std::size_t>(x) + static_cast<std::size_t>(out.nx) * (y + static_cast<std::size_t>(out.ny) * z)] =
            static_cast<float>(c0 * (1 - fz) + c1 * fz);
      }
    }
  }
  return Volume3D(out, sp, std::move(vox));
}

double sample_trilinear_zero(const Volume3D& v, double x, double y, double z) {
  const Dims3 d = v.dims();
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int z0 = static_cast<int>(std::floor(z));
  const double fx = x - x0;
  const double fy = y - y0;
  const double fz = z - z0;
  auto get = [&](int ix, int iy, int iz) -> double {
    if (ix < 0 || iy < 0 || iz < 0 || ix >= d.nx || iy >= d.ny || iz >= d.nz) return 0.0;
    return v.at(ix, iy, iz);
  };
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const double wz = dz ? fz : 1.0 - fz;
    for (int dy = 0; dy < 2; ++dy) {
      const double wy = dy ? fy : 1.0 - fy;
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? fx : 1.0 - fx;
        const double w = wx * wy * wz;
        if (w != 0.0) acc += w * get(x0 + dx, y0 + dy, z0 + dz);
      }
    }
  }
  return acc;
}

}  // namespace volcomp
