#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "volcomp/tissue.hpp"
#include "volcomp/volume.hpp"

namespace volcomp {

inline constexpr const char* kCohortManifestName = "cohort.json";

struct CohortEntry {
  std::string subject_id;
  double age_months = 0.0;
  std::string file;  // relative to the cohort directory
  bool held_out = false;
  Provenance provenance = Provenance::observed;
  std::optional<TissueVolumes> truth_volumes;  // analytic phantom volumes, mm^3
};

struct CohortManifest {
  std::vector<double> age_grid;
  std::vector<CohortEntry> entries;

  [[nodiscard]] const CohortEntry* find(const std::string& subject_id, double age_months) const;
};

/// File name of a scan inside a cohort directory, e.g. "sub003_m06.00.vol".
std::string scan_file_name(const std::string& subject_id, double age_months);

struct CohortItem {
  const ScanRecord* scan = nullptr;
  bool held_out = false;
  std::optional<TissueVolumes> truth_volumes;
};

/// Writes each scan (VOL3 + sidecar) and cohort.json into `dir`, which must exist.
void write_cohort(const std::filesystem::path& dir, const std::vector<CohortItem>& items,
                  const std::vector<double>& age_grid);

struct CohortOnDisk {
  CohortManifest manifest;
  LongitudinalCohort available;     // scans not held out
  std::vector<ScanRecord> held_out;
};

CohortManifest read_cohort_manifest(const std::filesystem::path& dir);
CohortOnDisk read_cohort(const std::filesystem::path& dir);

}  // namespace volcomp
