#include "volcomp/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "volcomp/errors.hpp"
#include "volcomp/log.hpp"
#include "volcomp/nn/ops.hpp"
#include "volcomp/nn/optim.hpp"
#include "volcomp/rng.hpp"

namespace volcomp {

using nn::Tape;
using nn::Tensor;
using nn::Var;

Volume3D augment_guidance(const Volume3D& v, double max_degrees, std::uint64_t seed) {
  if (!(max_degrees >= 0.0 && max_degrees <= kMaxGuidanceRotationDegrees)) {
    throw InvalidArgument(fmt::format("rotation limit must be in [0, {}] degrees", kMaxGuidanceRotationDegrees));
  }
  if (max_degrees == 0.0) return v;
  Rng rng(seed);
  const double deg = std::numbers::pi / 180.0;
  const double ax = rng.uniform(0.0, max_degrees) * deg;
  const double ay = rng.uniform(0.0, max_degrees) * deg;
  const double az = rng.uniform(0.0, max_degrees) * deg;
  // R = Rz * Ry * Rx; output p samples the input at R^T p (about the center, in mm).
  const double cx = std::cos(ax), sx = std::sin(ax);
  const double cy = std::cos(ay), sy = std::sin(ay);
  const double cz = std::cos(az), sz = std::sin(az);
  const double r[3][3] = {{cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
                          {sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx},
                          {-sy, cy * sx, cy * cx}};
  const Dims3 d = v.dims();
  const Spacing3 s = v.spacing();
  const double ox = 0.5 * (d.nx - 1), oy = 0.5 * (d.ny - 1), oz = 0.5 * (d.nz - 1);
  std::vector<float> out(d.count());
  std::size_t i = 0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x, ++i) {
        const double p[3] = {(x - ox) * s.sx, (y - oy) * s.sy, (z - oz) * s.sz};
        const double qx = r[0][0] * p[0] + r[1][0] * p[1] + r[2][0] * p[2];
        const double qy = r[0][1] * p[0] + r[1][1] * p[1] + r[2][1] * p[2];
        const double qz = r[0][2] * p[0] + r[1][2] * p[1] + r[2][2] * p[2];
        out[i] = static_cast<float>(sample_trilinear_zero(v, qx / s.sx + ox, qy / s.sy + oy, qz / s.sz + oz));
      }
  return Volume3D(d, s, std::move(out));
}

LongitudinalCohort downsample_cohort(const LongitudinalCohort& cohort) {
  LongitudinalCohort out(cohort.age_grid());
  for (const auto& [id, series] : cohort.subjects())
    for (const auto& s : series)
      out.insert(ScanRecord(s.subject_id(), s.age_months(), resample_down2(s.volume()), s.provenance()));
  return out;
}

TrainingPair make_training_pair(const LongitudinalCohort& cohort, std::uint64_t seed, double max_degrees) {
  std::vector<const LongitudinalCohort::Series*> eligible;
  for (const auto& [id, series] : cohort.subjects()) {
    if (series.size() >= 2) eligible.push_back(&series);
  }
  if (eligible.empty()) throw InvalidArgument("no subject has two or more scans to pair");
  Rng rng(seed);
  const auto& series = *eligible[rng.below(eligible.size())];
  const std::size_t ti = rng.below(series.size());
  std::size_t gi = rng.below(series.size() - 1);
  if (gi >= ti) ++gi;
  const ScanRecord& target = series[ti];
  const ScanRecord& guide = series[gi];
  const std::uint64_t aug_seed = rng.next_u64();
  return {target.volume(),
          GuidanceBundle{augment_guidance(guide.volume(), max_degrees, aug_seed), target.age_months()},
          target.subject_id(), guide.age_months()};
}

TrainConfig TrainConfig::defaults_for(StageKind stage) {
  TrainConfig c;
  c.stage = stage;
  c.schedule = stage == StageKind::generate ? kGenerateSchedule : kSrSchedule;
  return c;
}

void TrainConfig::validate() const {
  (void)schedule.make();
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (max_steps < 0) throw InvalidArgument("max_steps must be >= 0");
  if (checkpoint_every < 0) throw InvalidArgument("checkpoint_every must be >= 0");
  if (!(max_rotation_degrees >= 0.0 && max_rotation_degrees <= kMaxGuidanceRotationDegrees)) {
    throw InvalidArgument(fmt::format("max rotation must be in [0, {}] degrees", kMaxGuidanceRotationDegrees));
  }
}

std::uint64_t init_seed(std::uint64_t train_seed) { return derive_seed(train_seed, 0x696e6974ULL); }

namespace {

Tensor<float> volume_tensor(std::span<const double> v, Dims3 d) {
  Tensor<float> t({1, d.nx, d.ny, d.nz});
  std::transform(v.begin(), v.end(), t.data.begin(), [](double x) { return static_cast<float>(x); });
  return t;
}

struct NoisedSample {
  int t;
  std::vector<double> x_t;
  std::vector<double> eps;
};

NoisedSample noise_sample(std::span<const double> x0, const NoiseSchedule& sched, Rng& rng) {
  NoisedSample s;
  s.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.steps())));
  s.eps.resize(x0.size());
  for (double& e : s.eps) e = rng.normal();
  s.x_t = q_sample(x0, s.t, s.eps, sched);
  return s;
}

// Shared loop: `sample_loss` records one example on the tape and returns its loss node.
template <class Model, class SampleLoss>
void run_training(Model& model, const TrainConfig& cfg, SampleLoss&& sample_loss, std::vector<LossRecord>* log,
                  const TrainHooks& hooks, const std::function<void(int)>& checkpoint) {
  nn::Adam<float> opt(model.params(), {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.clip_norm});
  const auto start = std::chrono::steady_clock::now();
  const double inv_batch = 1.0 / cfg.batch_size;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    model.params().zero_grad();
    double loss_sum = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(b)));
      Tape<float> tape(true);
      Var loss = sample_loss(tape, rng);
      const double value = tape.value(loss).data[0];
      if (!std::isfinite(value)) {
        throw NumericalError(fmt::format("training diverged at step {}: loss is {}", step, value));
      }
      loss_sum += value;
      tape.backward(nn::scale(tape, loss, inv_batch));
    }
    opt.step(model.params());
    const LossRecord rec{step, loss_sum * inv_batch,
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    if (log) log->push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) checkpoint(step);
    if (step == 1 || step % 100 == 0) log_debug(fmt::format("step {} loss {:.6f}", step, rec.loss));
  }
}

}  // namespace

GenerateStage train_generate(const LongitudinalCohort& cohort, const AsmmConfig& model_cfg, const TrainConfig& cfg,
                             std::vector<LossRecord>* log, const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.stage != StageKind::generate) throw InvalidArgument("train_generate needs a generate-stage config");
  if (cohort.scan_count() == 0) throw InvalidArgument("training cohort is empty");
  const Dims3 scan_dims = cohort.subjects().begin()->second.front().volume().dims();
  LongitudinalCohort data;
  if (scan_dims == model_cfg.in_dims) {
    data = cohort;
  } else if (scan_dims == model_cfg.in_dims.doubled()) {
    data = downsample_cohort(cohort);
  } else {
    throw InvalidArgument(fmt::format("scans are {}, generate model expects {}", to_string(scan_dims),
                                      to_string(model_cfg.in_dims)));
  }
  GenerateStage stage{AsmmModel<float>(model_cfg), cfg.schedule};
  stage.model.initialize(init_seed(cfg.seed));
  const NoiseSchedule sched = cfg.schedule.make();
  const Dims3 d = model_cfg.in_dims;
  const double max_deg = cfg.augment ? cfg.max_rotation_degrees : 0.0;
  auto sample_loss = [&](Tape<float>& tape, Rng& rng) {
    TrainingPair pair = make_training_pair(data, rng.next_u64(), max_deg);
    const auto x0 = to_model_space(pair.target);
    const NoisedSample s = noise_sample(x0, sched, rng);
    Var x = tape.constant(volume_tensor(s.x_t, d));
    Var g = tape.constant(volume_tensor(to_model_space(pair.guidance.guide_volume), d));
    Var eps = tape.constant(volume_tensor(s.eps, d));
    return nn::mse(tape, stage.model.forward(tape, x, s.t, g, pair.guidance.target_age_months), eps);
  };
  run_training(stage.model, cfg, sample_loss, log, hooks, [&](int step) {
    if (hooks.on_generate_checkpoint) hooks.on_generate_checkpoint(step, stage);
  });
  return stage;
}

SrStage train_sr(const LongitudinalCohort& cohort, const SrConfig& model_cfg, const TrainConfig& cfg,
                 std::vector<LossRecord>* log, const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.stage != StageKind::sr) throw InvalidArgument("train_sr needs an sr-stage config");
  std::vector<const ScanRecord*> scans;
  for (const auto& [id, series] : cohort.subjects())
    for (const auto& s : series) {
      if (s.volume().dims() != model_cfg.high_dims()) {
        throw InvalidArgument(fmt::format("scan {} is {}, sr model expects {}", s.scan_id(),
                                          to_string(s.volume().dims()), to_string(model_cfg.high_dims())));
      }
      scans.push_back(&s);
    }
  if (scans.empty()) throw InvalidArgument("training cohort is empty");
  SrStage stage{SrModel<float>(model_cfg), cfg.schedule};
  stage.model.initialize(init_seed(cfg.seed));
  const NoiseSchedule sched = cfg.schedule.make();
  auto sample_loss = [&](Tape<float>& tape, Rng& rng) {
    const Volume3D& hi = scans[rng.below(scans.size())]->volume();
    const auto x0 = to_model_space(hi);
    const auto z0 = to_model_space(resample_down2(hi));
    const NoisedSample s = noise_sample(x0, sched, rng);
    Var x = tape.constant(volume_tensor(s.x_t, model_cfg.high_dims()));
    Var z = tape.constant(volume_tensor(z0, model_cfg.low_dims));
    Var eps = tape.constant(volume_tensor(s.eps, model_cfg.high_dims()));
    return nn::mse(tape, stage.model.forward(tape, x, s.t, z), eps);
  };
  run_training(stage.model, cfg, sample_loss, log, hooks, [&](int step) {
    if (hooks.on_sr_checkpoint) hooks.on_sr_checkpoint(step, stage);
  });
  return stage;
}

std::string to_string(GuidancePolicy p) { return p == GuidancePolicy::nearest_age ? "nearest_age" : "fixed_scan"; }

GuidancePolicy guidance_policy_from_string(const std::string& s) {
  if (s == "nearest_age") return GuidancePolicy::nearest_age;
  if (s == "fixed_scan") return GuidancePolicy::fixed_scan;
  throw InvalidArgument(fmt::format("unknown guidance policy '{}' (nearest_age|fixed_scan)", s));
}

const ScanRecord& select_guidance(const LongitudinalCohort& cohort, const CompletionRequest& req, double target_age) {
  if (!cohort.contains(req.subject_id)) throw InvalidArgument(fmt::format("unknown subject '{}'", req.subject_id));
  const ScanRecord* best = nullptr;
  for (const auto& s : cohort.series(req.subject_id)) {
    if (s.provenance() != Provenance::observed) continue;
    if (req.policy == GuidancePolicy::fixed_scan) {
      if (!req.fixed_guide_age || std::abs(s.age_months() - *req.fixed_guide_age) <= kAgeTolerance) return s;
      continue;
    }
    // Series are sorted by age, so a strict comparison keeps the younger scan on ties.
    if (!best || std::abs(s.age_months() - target_age) < std::abs(best->age_months() - target_age)) best = &s;
  }
  if (!best) {
    throw InvalidArgument(fmt::format("subject '{}' has no observed scan usable as guidance", req.subject_id));
  }
  return *best;
}

std::vector<ScanRecord> complete_subject(const CascadeModels& m, const LongitudinalCohort& cohort,
                                         const CompletionRequest& req, std::uint64_t seed,
                                         const CompletionOptions& opts, CompletionTrace* trace) {
  if (!cohort.contains(req.subject_id)) throw InvalidArgument(fmt::format("unknown subject '{}'", req.subject_id));
  if (m.refine.low_dims() != m.generate.dims()) {
    throw InvalidArgument(fmt::format("generate stage produces {}, refine stage expects {}",
                                      to_string(m.generate.dims()), to_string(m.refine.low_dims())));
  }
  std::vector<ScanRecord> out;
  for (std::size_t k = 0; k < req.target_ages.size(); ++k) {
    const double age = req.target_ages[k];
    const ScanRecord& guide = select_guidance(cohort, req, age);
    Volume3D guide_low;
    if (guide.volume().dims() == m.generate.dims()) {
      guide_low = guide.volume();
    } else if (guide.volume().dims() == m.generate.dims().doubled()) {
      guide_low = resample_down2(guide.volume());
    } else {
      throw InvalidArgument(fmt::format("guidance scan {} is {}, generate stage expects {}", guide.scan_id(),
                                        to_string(guide.volume().dims()), to_string(m.generate.dims())));
    }
    const GuidanceBundle bundle{guide_low, age};
    bundle.validate(m.generate.dims());
    const std::vector<double> z0 = ddim_sample(
        [&](std::span<const double> x, int t) { return m.generate.predict_eps(x, t, bundle); },
        m.generate.dims().count(), m.generate_schedule, opts.generate, derive_seed(seed, k, 0));
    // Back to [0, 1] and into model space again so the refine stage sees a clipped condition.
    const Volume3D low = from_model_space(z0, m.generate.dims(), guide_low.spacing());
    const std::vector<double> x0 = sr_sample(m.refine, to_model_space(low), m.refine_schedule, opts.refine,
                                             derive_seed(seed, k, 1));
    const Spacing3 ls = low.spacing();
    Volume3D high = from_model_space(x0, m.refine.high_dims(), {ls.sx / 2, ls.sy / 2, ls.sz / 2});
    if (trace) {
      trace->low_res.push_back(low);
      trace->guide_ages.push_back(guide.age_months());
    }
    out.emplace_back(req.subject_id, age, std::move(high), Provenance::generated);
  }
  return out;
}

std::vector<ScanRecord> complete_subject(const GenerateStage& gen, const SrStage& sr, const LongitudinalCohort& cohort,
                                         const CompletionRequest& req, std::uint64_t seed,
                                         const CompletionOptions& opts, CompletionTrace* trace) {
  const CascadeModels models{gen.model, gen.schedule.make(), sr.model, sr.schedule.make()};
  return complete_subject(models, cohort, req, seed, opts, trace);
}

}  // namespace volcomp
