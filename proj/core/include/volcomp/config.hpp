#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "volcomp/asmm.hpp"
#include "volcomp/diffusion.hpp"
#include "volcomp/metrics.hpp"
#include "volcomp/phantom.hpp"
#include "volcomp/pipeline.hpp"
#include "volcomp/sr.hpp"

namespace volcomp {

/// Everything a command needs. Model grids follow phantom.dims: the generate
/// stage runs at phantom.dims and the refine stage doubles it.
struct RunConfig {
  PhantomConfig phantom;
  GrowthLaw law;
  double missing_fraction = 0.3;

  AsmmConfig gen;
  LinearScheduleConfig gen_schedule = kGenerateSchedule;
  SrConfig sr;
  LinearScheduleConfig sr_schedule = kSrSchedule;
  TrainConfig train;  // stage and schedule are filled in by train_config()

  SamplerOptions sampler;
  GuidancePolicy policy = GuidancePolicy::nearest_age;
  SsimParams ssim;
  SegmentThresholds seg{0.4, 0.56, 0.1};

  std::string data_dir = "data";
  std::string out_dir = "out";
  std::string gen_checkpoint;
  std::string sr_checkpoint;

  std::uint64_t seed = 7;
  int threads = 1;

  [[nodiscard]] TrainConfig train_config(StageKind stage) const;
  // Propagates phantom.dims into the model configs and checks every section.
  void finalize();
};

/// Flat "key = value" text: one entry per line, '#' starts a comment, lists are
/// whitespace separated. Unknown keys and malformed values throw
/// InvalidArgument naming the line.
RunConfig parse_run_config(const std::string& text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);

/// Sets one key; throws InvalidArgument for unknown keys or bad values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Every key with its resolved value, in documentation order. Parsing the
/// formatted text reproduces the config exactly.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
std::string format_run_config(const RunConfig& cfg);

}  // namespace volcomp
