#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "volcomp/volume.hpp"

namespace volcomp {

/// Tissue proxies, outermost shell first.
enum class Tissue : std::uint8_t { csf = 0, gm = 1, wm = 2 };
inline constexpr int kTissueCount = 3;
inline constexpr std::array<Tissue, kTissueCount> kTissues{Tissue::csf, Tissue::gm, Tissue::wm};

std::string to_string(Tissue t);

/// Per-voxel labels. Values 0..2 are Tissue; kBackgroundLabel marks voxels
/// outside the phantom (or below the optional background cut).
inline constexpr std::uint8_t kBackgroundLabel = 3;

struct LabelVolume {
  Dims3 dims;
  Spacing3 spacing;
  std::vector<std::uint8_t> labels;

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;
};

using TissueVolumes = std::array<double, kTissueCount>;  // mm^3, indexed by Tissue

}  // namespace volcomp
