#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "volcomp/config.hpp"
#include "volcomp/errors.hpp"

namespace volcomp::cli {

inline constexpr const char* kRunRecordName = "run.json";
inline constexpr const char* kLossLogName = "loss.csv";
inline constexpr const char* kMetricsName = "metrics.csv";
inline constexpr const char* kTrajectoryName = "trajectory.csv";
inline constexpr const char* kTrajectoryPointsName = "trajectory_points.csv";

inline constexpr const char* kGenerateCheckpointName = "generate.vckp";
inline constexpr const char* kSrCheckpointName = "sr.vckp";

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitDivergence = 3;

// Bad flags, bad config, or an output directory we refuse to overwrite.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Command-specific arguments that are not config keys. Recorded in run.json
// next to the resolved config.
struct CommandArgs {
  std::string command;
  std::string stage = "generate";        // train
  std::filesystem::path generated_dir;   // eval, trajectory
  std::string variant = "full";          // eval
  std::string subject;                   // complete: a single subject
  std::vector<double> ages;              // complete: its target ages
  bool include_held_out = false;         // trajectory: count held-out truth as observed
  bool force = false;
};

// Runs one command with a finalized config and writes run.json into
// cfg.out_dir. Throws on failure.
void execute(const RunConfig& cfg, const CommandArgs& args, const std::vector<std::string>& argv);

// Re-executes the command recorded in a run.json, single-threaded.
void rerun(const std::filesystem::path& run_json, const std::filesystem::path& out_dir, bool force);

// Full command line entry point. Maps errors onto the exit codes above.
int run_cli(const std::vector<std::string>& argv);

}  // namespace volcomp::cli
