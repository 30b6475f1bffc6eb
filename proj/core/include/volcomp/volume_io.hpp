#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "volcomp/volume.hpp"

namespace volcomp {

// VOL3 container, little-endian throughout:
//   0..3   magic "VOL3"
//   4..7   u32 format version (1)
//   8..19  u32 nx, ny, nz
//   20..31 f32 sx, sy, sz (mm)
//   32..   nx*ny*nz f32 voxels, x-fastest
inline constexpr char kVol3Magic[4] = {'V', 'O', 'L', '3'};
inline constexpr std::uint32_t kVol3Version = 1;
inline constexpr std::size_t kVol3HeaderBytes = 32;

Volume3D read_volume(const std::filesystem::path& path);
void write_volume(const Volume3D& v, const std::filesystem::path& path);

// Optional "<name>.meta.json" sidecar next to a VOL3 file.
struct ScanMeta {
  std::string subject_id;
  double age_months = 0.0;
  Provenance provenance = Provenance::observed;
};

std::filesystem::path sidecar_path(const std::filesystem::path& volume_path);
void write_sidecar(const ScanMeta& meta, const std::filesystem::path& volume_path);
std::optional<ScanMeta> read_sidecar(const std::filesystem::path& volume_path);

// Volume plus sidecar; the sidecar must exist.
ScanRecord read_scan(const std::filesystem::path& volume_path);
void write_scan(const ScanRecord& scan, const std::filesystem::path& volume_path);

}  // namespace volcomp
