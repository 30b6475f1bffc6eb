#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "volcomp/checkpoint.hpp"
#include "volcomp/denoiser.hpp"
#include "volcomp/diffusion.hpp"
#include "volcomp/volume.hpp"

namespace volcomp {

inline constexpr double kMaxGuidanceRotationDegrees = 5.0;

/// Rotates about the volume center by independent angles drawn uniformly from
/// [0, max_degrees] about x, y and z (in that order), trilinear resampling with
/// zero fill.
Volume3D augment_guidance(const Volume3D& v, double max_degrees, std::uint64_t seed);

/// Every scan passed through resample_down2.
LongitudinalCohort downsample_cohort(const LongitudinalCohort& cohort);

struct TrainingPair {
  Volume3D target;
  GuidanceBundle guidance;   // augmented guide + target age
  std::string subject_id;
  double guide_age_months = 0.0;
};

/// Uniform subject among those with >= 2 scans, then a uniform ordered pair of
/// distinct scans: the first is the target, the second (augmented) guides it.
TrainingPair make_training_pair(const LongitudinalCohort& cohort, std::uint64_t seed, double max_degrees = 0.0);

struct TrainConfig {
  StageKind stage = StageKind::generate;
  LinearScheduleConfig schedule = kGenerateSchedule;
  double learning_rate = 2e-4;
  int batch_size = 1;
  int max_steps = 2000;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  bool augment = true;
  double max_rotation_degrees = kMaxGuidanceRotationDegrees;
  double clip_norm = 1.0;

  static TrainConfig defaults_for(StageKind stage);
  void validate() const;
};

struct LossRecord {
  int step = 0;  // 1-based
  double loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHooks {
  std::function<void(const LossRecord&)> on_step;
  // Called every checkpoint_every steps with the model as of that step.
  std::function<void(int, const GenerateStage&)> on_generate_checkpoint;
  std::function<void(int, const SrStage&)> on_sr_checkpoint;
};

/// Trains the generate stage. Scans may be at the model grid or at twice it
/// (then downsampled). Deterministic in cfg.seed.
GenerateStage train_generate(const LongitudinalCohort& cohort, const AsmmConfig& model, const TrainConfig& cfg,
                             std::vector<LossRecord>* log = nullptr, const TrainHooks& hooks = {});
/// Trains the refine stage on (scan, resample_down2(scan)) pairs; scans must be
/// at the model's high_dims.
SrStage train_sr(const LongitudinalCohort& cohort, const SrConfig& model, const TrainConfig& cfg,
                 std::vector<LossRecord>* log = nullptr, const TrainHooks& hooks = {});

/// Initial weights used by the trainers for a given seed.
std::uint64_t init_seed(std::uint64_t train_seed);

enum class GuidancePolicy { nearest_age, fixed_scan };
std::string to_string(GuidancePolicy p);
GuidancePolicy guidance_policy_from_string(const std::string& s);

struct CompletionRequest {
  std::string subject_id;
  std::vector<double> target_ages;
  GuidancePolicy policy = GuidancePolicy::nearest_age;
  std::optional<double> fixed_guide_age;  // fixed_scan: the scan to use (default: youngest)
};

struct CompletionOptions {
  SamplerOptions generate;
  SamplerOptions refine;
};

/// Observed scan chosen as guidance for a target age. nearest_age breaks ties
/// toward the younger scan.
const ScanRecord& select_guidance(const LongitudinalCohort& cohort, const CompletionRequest& req, double target_age);

struct CompletionTrace {
  std::vector<Volume3D> low_res;   // generate-stage outputs, [0, 1]
  std::vector<double> guide_ages;
};

struct CascadeModels {
  const GenerateDenoiser& generate;
  NoiseSchedule generate_schedule;
  const SrDenoiser& refine;
  NoiseSchedule refine_schedule;
};

/// Generates one high-resolution scan per target age (provenance generated).
std::vector<ScanRecord> complete_subject(const CascadeModels& models, const LongitudinalCohort& cohort,
                                         const CompletionRequest& req, std::uint64_t seed,
                                         const CompletionOptions& opts = {}, CompletionTrace* trace = nullptr);

std::vector<ScanRecord> complete_subject(const GenerateStage& gen, const SrStage& sr, const LongitudinalCohort& cohort,
                                         const CompletionRequest& req, std::uint64_t seed,
                                         const CompletionOptions& opts = {}, CompletionTrace* trace = nullptr);

}  // namespace volcomp
