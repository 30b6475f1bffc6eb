#pragma once

#include <filesystem>
#include <string>

#include "volcomp/asmm.hpp"
#include "volcomp/diffusion.hpp"
#include "volcomp/sr.hpp"

namespace volcomp {

// Checkpoint container:
//   "VCKP" | u32 version = 1 | u32 kind (1 generate, 2 sr) | u32 header length
//   | JSON header {kind, config, schedule, manifest: [{name, shape}], note}
//   | f32 little-endian payload of every tensor in manifest order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class StageKind : std::uint32_t { generate = 1, sr = 2 };

std::string to_string(StageKind k);

struct GenerateStage {
  AsmmModel<float> model;
  LinearScheduleConfig schedule = kGenerateSchedule;
};

struct SrStage {
  SrModel<float> model;
  LinearScheduleConfig schedule = kSrSchedule;
};

void save_checkpoint(const std::filesystem::path& path, const GenerateStage& stage);
void save_checkpoint(const std::filesystem::path& path, const SrStage& stage);

StageKind checkpoint_kind(const std::filesystem::path& path);

// Throw FormatError on a malformed file, wrong kind, or a manifest that does
// not match the architecture described by the stored config.
GenerateStage load_generate_checkpoint(const std::filesystem::path& path);
SrStage load_sr_checkpoint(const std::filesystem::path& path);

}  // namespace volcomp
