#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace volcomp {

struct Dims3 {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  [[nodiscard]] std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  [[nodiscard]] bool positive() const { return nx > 0 && ny > 0 && nz > 0; }
  [[nodiscard]] Dims3 halved() const { return {nx / 2, ny / 2, nz / 2}; }
  [[nodiscard]] Dims3 doubled() const { return {nx * 2, ny * 2, nz * 2}; }

  friend bool operator==(const Dims3&, const Dims3&) = default;
};

std::string to_string(const Dims3& d);

struct Spacing3 {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;

  [[nodiscard]] double voxel_volume() const { return sx * sy * sz; }
  friend bool operator==(const Spacing3&, const Spacing3&) = default;
};

/// Dense 3D scalar field with physical voxel spacing.
///
/// Voxels are stored x-fastest: index(x, y, z) = x + nx * (y + ny * z).
/// Every constructor and public operation keeps the voxel count equal to
/// nx*ny*nz and all intensities finite; violating inputs throw
/// InvalidArgument.
class Volume3D {
 public:
  Volume3D() = default;
  Volume3D(Dims3 dims, Spacing3 spacing, float fill = 0.0f);
  Volume3D(Dims3 dims, Spacing3 spacing, std::vector<float> voxels);

  [[nodiscard]] const Dims3& dims() const { return dims_; }
  [[nodiscard]] const Spacing3& spacing() const { return spacing_; }
  [[nodiscard]] std::span<const float> voxels() const { return voxels_; }
  [[nodiscard]] std::size_t size() const { return voxels_.size(); }
  [[nodiscard]] bool empty() const { return voxels_.empty(); }

  [[nodiscard]] std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_.nx) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_.ny) * static_cast<std::size_t>(z));
  }
  [[nodiscard]] float at(int x, int y, int z) const { return voxels_[index(x, y, z)]; }

  // Mutable access is only handed out through with_voxels(), which re-checks
  // finiteness when the edit is complete.
  template <class Fn>
  [[nodiscard]] Volume3D with_voxels(Fn&& edit) const {
    std::vector<float> copy = voxels_;
    edit(std::span<float>(copy));
    return Volume3D(dims_, spacing_, std::move(copy));
  }

  [[nodiscard]] double sum() const;
  [[nodiscard]] double mean() const;
  [[nodiscard]] float min() const;
  [[nodiscard]] float max() const;

  friend bool operator==(const Volume3D&, const Volume3D&) = default;

 private:
  Dims3 dims_{};
  Spacing3 spacing_{};
  std::vector<float> voxels_;
};

enum class Provenance { observed, generated };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

/// One age-stamped scan of one subject.
class ScanRecord {
 public:
  ScanRecord(std::string subject_id, double age_months, Volume3D volume, Provenance provenance);

  [[nodiscard]] const std::string& subject_id() const { return subject_id_; }
  [[nodiscard]] double age_months() const { return age_months_; }
  [[nodiscard]] const Volume3D& volume() const { return volume_; }
  [[nodiscard]] Provenance provenance() const { return provenance_; }

  // "subject@age" label used in reports and file names.
  [[nodiscard]] std::string scan_id() const;

 private:
  std::string subject_id_;
  double age_months_;
  Volume3D volume_;
  Provenance provenance_;
};

inline constexpr double kMaxCohortAgeMonths = 30.0;

/// Subject-keyed longitudinal series. Scans of a subject are kept in strictly
/// increasing age order; inserting a duplicate (subject, age) throws.
class LongitudinalCohort {
 public:
  using Series = std::vector<ScanRecord>;

  LongitudinalCohort() = default;
  explicit LongitudinalCohort(std::vector<double> age_grid);

  void insert(ScanRecord scan);

  [[nodiscard]] const std::map<std::string, Series>& subjects() const { return subjects_; }
  [[nodiscard]] const Series& series(const std::string& subject_id) const;
  [[nodiscard]] bool contains(const std::string& subject_id) const { return subjects_.contains(subject_id); }
  [[nodiscard]] std::optional<std::reference_wrapper<const ScanRecord>> find(const std::string& subject_id,
                                                                             double age_months) const;
  [[nodiscard]] std::size_t scan_count() const;
  [[nodiscard]] std::vector<std::string> subject_ids() const;
  [[nodiscard]] const std::vector<double>& age_grid() const { return age_grid_; }

 private:
  std::map<std::string, Series> subjects_;
  std::vector<double> age_grid_;
};

// Two ages are the same timepoint when they agree to this tolerance.
inline constexpr double kAgeTolerance = 1e-9;

/// Min-max rescale to [0, 1]. Throws InvalidArgument on a constant volume.
Volume3D normalize_intensity(const Volume3D& v);

/// Factor-2 mean pooling: dims halve, spacing doubles. Odd dims throw.
Volume3D resample_down2(const Volume3D& v);

/// Center crop along axes that are too large, symmetric zero-pad along axes
/// that are too small. When the difference is odd the extra voxel goes after.
Volume3D crop_pad_to(const Volume3D& v, Dims3 target);

/// Trilinear factor-2 upsampling (voxel-center aligned, edge clamped). Only
/// used as the evaluation baseline for super-resolution.
Volume3D upsample_trilinear2(const Volume3D& v);

/// Trilinear sample at continuous voxel coordinates; zero outside the grid.
double sample_trilinear_zero(const Volume3D& v, double x, double y, double z);

}  // namespace volcomp
