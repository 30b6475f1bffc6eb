// Acceptance run: one PASS/FAIL line per criterion. Every threshold below is
// fixed here. `--only 5,6` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "commands.hpp"
#include "oracles.hpp"
#include "volcomp/ablation.hpp"
#include "volcomp/asmm.hpp"
#include "volcomp/diffusion.hpp"
#include "volcomp/metrics.hpp"
#include "volcomp/phantom.hpp"
#include "volcomp/pipeline.hpp"
#include "volcomp/rng.hpp"
#include "volcomp/sr.hpp"
#include "volcomp/trajectory.hpp"

namespace {

using namespace volcomp;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// ---- pinned tolerances and budgets ----
constexpr double kScheduleBudgetS = 1.0;
constexpr double kSamplerTol = 1e-5;
constexpr double kStepOracleTol = 1e-7;
constexpr double kSamplerBudgetS = 30.0;
constexpr double kMetricOracleTol = 1e-6;
constexpr double kClosedFormTol = 1e-4;
constexpr double kMetricBudgetS = 120.0;
constexpr double kGradTol = 1e-3;
constexpr int kGradProbes = 40;
constexpr double kGradBudgetS = 300.0;
constexpr double kLossRatioMax = 0.10;
constexpr double kPsnrMarginDb = 1.0;
constexpr double kLearningBudgetS = 3600.0;
constexpr std::size_t kSrMinVolumes = 8;
constexpr double kSrBudgetS = 3600.0;
constexpr double kLmmExactTol = 1e-6;
constexpr double kSlopeRelTol = 0.25;
constexpr double kHullFractionMin = 0.90;
constexpr double kTrajectoryBudgetS = 5400.0;
constexpr double kAblationBudgetS = 7200.0;

// ---- desk-scale fixture ----
constexpr int kFixtureSubjects = 4;
constexpr std::uint64_t kFixtureSeed = 11;
constexpr double kMissingFraction = 0.3;
constexpr std::uint64_t kMaskSeed = 5;
constexpr int kTrainSteps = 2000;
constexpr double kGenLearningRate = 1e-3;
constexpr int kGenBatch = 1;
constexpr int kGenBaseChannels = 8;
constexpr int kSrSteps = 2000;
constexpr double kSrLearningRate = 1e-3;
constexpr int kSrBaseChannels = 8;
constexpr int kSampleSteps = 50;
constexpr std::uint64_t kTrainSeed = 3;
constexpr std::uint64_t kSampleSeed = 9;
constexpr std::uint64_t kUnseenSeed = 101;
constexpr int kUnseenSubjects = 2;

struct Result {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string budget_note(double secs, double budget) {
  return fmt::format("{:.1f}s of {:.0f}s budget", secs, budget);
}

// ---- 1 ----

Result schedule_fidelity() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  struct Case {
    LinearScheduleConfig cfg;
    const char* name;
  };
  for (const Case& c : {Case{kGenerateSchedule, "generate"}, Case{kSrSchedule, "sr"}}) {
    const NoiseSchedule s = c.cfg.make();
    const auto b = s.betas();
    const bool endpoints = b.size() == static_cast<std::size_t>(c.cfg.steps) && b.front() == c.cfg.beta_start &&
                           b.back() == c.cfg.beta_end;
    bool decreasing = true;
    for (int t = 1; t <= s.steps(); ++t) decreasing = decreasing && s.alpha_bar(t) < s.alpha_bar(t - 1);
    ok = ok && endpoints && decreasing;
    detail += fmt::format("{}: T={} beta[1]={:g} beta[T]={:g} abar decreasing={}; ", c.name, b.size(), b.front(),
                          b.back(), decreasing);
  }
  ok = ok && kGenerateSchedule.steps == 4000 && kGenerateSchedule.beta_start == 1e-4 &&
       kGenerateSchedule.beta_end == 5e-3 && kSrSchedule.steps == 1000 && kSrSchedule.beta_end == 2e-2;
  const double secs = seconds_since(t0);
  return {ok && secs < kScheduleBudgetS, detail + budget_note(secs, kScheduleBudgetS)};
}

// ---- 2 ----

Result sampler_identity() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  std::normal_distribution<double> n01;
  const Dims3 d{8, 8, 8};
  std::vector<double> x0(d.count());
  for (double& v : x0) v = u(gen);
  const auto betas = oracle::linear_betas(1e-4, 5e-3, 4000);
  const oracle::KnownGenerateDenoiser known(x0, d, betas);
  const NoiseSchedule s(betas);

  double worst_recovery = 0;
  for (int steps : {1, 10, 50}) {
    const auto x = ddim_sample([&](std::span<const double> xt, int t) { return known.eps(xt, t); }, x0.size(), s,
                               {steps, 0.0, false}, 99);
    for (std::size_t i = 0; i < x.size(); ++i) worst_recovery = std::max(worst_recovery, std::abs(x[i] - x0[i]));
  }

  double worst_step = 0;
  auto gaussian = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& e : v) e = n01(gen);
    return v;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const auto xt = gaussian(64), eps = gaussian(64), noise = gaussian(64);
    const int t = 2 + static_cast<int>(gen() % 3999);
    const int tp = static_cast<int>(gen() % static_cast<unsigned>(t));
    const double eta = trial % 2 ? 0.0 : 0.7;
    const auto out = ddim_step(xt, eps, t, tp, s, eta, noise);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double ref =
          oracle::ddim_scalar(xt[i], eps[i], oracle::alpha_bar(betas, t), oracle::alpha_bar(betas, tp), eta, noise[i]);
      worst_step = std::max(worst_step, std::abs(out[i] - ref));
    }
  }
  const auto sr_betas = oracle::linear_betas(1e-4, 2e-2, 1000);
  const NoiseSchedule sr(sr_betas);
  for (int t : {1, 2, 500, 1000}) {
    const auto xt = gaussian(64), eps = gaussian(64), noise = gaussian(64);
    const auto out = ddpm_step(xt, eps, t, sr, noise);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double ref =
          oracle::ddpm_scalar(xt[i], eps[i], sr_betas[t - 1], oracle::alpha_bar(sr_betas, t), t == 1, noise[i]);
      worst_step = std::max(worst_step, std::abs(out[i] - ref));
    }
  }
  const double secs = seconds_since(t0);
  return {worst_recovery <= kSamplerTol && worst_step <= kStepOracleTol && secs < kSamplerBudgetS,
          fmt::format("DDIM recovery over 1/10/50 steps max err {:.2e} (<= {:g}); step math vs scalar oracle "
                      "{:.2e} (<= {:g}); {}",
                      worst_recovery, kSamplerTol, worst_step, kStepOracleTol, budget_note(secs, kSamplerBudgetS))};
}

// ---- 3 ----

Volume3D constant(Dims3 d, float v) { return Volume3D(d, {}, v); }

Result metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<int> edge(8, 10);
  double worst_psnr = 0, worst_ssim = 0;
  const SsimParams sp;
  for (int i = 0; i < 100; ++i) {
    const Dims3 d{edge(gen), edge(gen), edge(gen)};
    const Volume3D a = oracle::random_volume(d, gen), b = oracle::random_volume(d, gen);
    worst_psnr = std::max(worst_psnr, std::abs(psnr(a, b) - oracle::psnr(a, b)));
    worst_ssim = std::max(worst_ssim, std::abs(ssim3d(a, b, sp) - oracle::ssim(a, b, sp.window)));
  }
  const Dims3 d{9, 8, 10};
  const Volume3D a = oracle::random_volume(d, gen, 0.0, 0.5);
  const Volume3D shifted = a.with_voxels([](std::span<float> x) {
    for (float& f : x) f = static_cast<float>(f + 0.1);
  });
  const double offset_db = psnr(a, shifted);
  // Constant inputs: variance terms vanish, leaving (2 m1 m2 + C1) / (m1^2 + m2^2 + C1).
  const double m1 = 0.2, m2 = 0.4, c1 = (0.01 * 1.0) * (0.01 * 1.0);
  const double closed = (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
  const double const_ssim = ssim3d(constant({8, 8, 8}, 0.2f), constant({8, 8, 8}, 0.4f));
  constexpr double kQuotedConstantSsim = 0.80060;
  const double secs = seconds_since(t0);
  const bool ok = worst_psnr <= kMetricOracleTol && worst_ssim <= kMetricOracleTol &&
                  std::abs(offset_db - 20.0) <= kClosedFormTol && std::abs(const_ssim - closed) <= kClosedFormTol &&
                  secs < kMetricBudgetS;
  return {ok, fmt::format("100 pairs: |dPSNR| {:.2e}, |dSSIM| {:.2e} (<= {:g}); offset case {:.6f} dB; constant "
                          "SSIM {:.6f} vs closed form {:.6f} (the rounded figure {:.5f} sometimes quoted is off by "
                          "5e-4 from this formula); {}",
                          worst_psnr, worst_ssim, kMetricOracleTol, offset_db, const_ssim, closed,
                          kQuotedConstantSsim, budget_note(secs, kMetricBudgetS))};
}

// ---- 4 ----

Result gradient_check() {
  const auto t0 = Clock::now();
  AsmmConfig c;
  c.in_dims = {6, 8, 5};
  c.base_channels = 2;
  c.channel_multipliers = {1, 2, 2, 2};
  c.time_embed_dim = 8;
  c.age_embed_dim = 8;
  c.age_tokens = 2;
  c.attention_heads = 2;
  double worst = 0;
  std::size_t probes = 0;
  for (bool independent : {true, false}) {
    c.independent_guide_encoder = independent;
    AsmmModel<double> m(c);
    m.params().randomize(5);
    const GradCheckResult r = loss_gradient_check(m, random_grad_check_batch(m.config(), 6), kGradProbes, 7);
    worst = std::max(worst, r.max_rel_error);
    probes += r.analytic.size();
  }
  const double secs = seconds_since(t0);
  return {worst < kGradTol && probes >= 32 && secs < kGradBudgetS,
          fmt::format("{} probes over both encoder variants, max rel err {:.2e} (< {:g}); {}", probes, worst,
                      kGradTol, budget_note(secs, kGradBudgetS))};
}

// ---- shared desk-scale fixture for 5-8 ----

struct Fixture {
  PhantomCohort phantom;
  MaskedCohort masked;
  LongitudinalCohort low_train;
  std::vector<LossRecord> gen_log;
  std::optional<GenerateStage> gen;
  double gen_train_s = 0;
  std::optional<SrStage> sr;
  double sr_train_s = 0;
};

AsmmConfig gen_config(bool independent) {
  AsmmConfig c;
  c.base_channels = kGenBaseChannels;
  c.independent_guide_encoder = independent;
  return c;
}

TrainConfig gen_train_config() {
  TrainConfig tc = TrainConfig::defaults_for(StageKind::generate);
  tc.max_steps = kTrainSteps;
  tc.learning_rate = kGenLearningRate;
  tc.batch_size = kGenBatch;
  tc.seed = kTrainSeed;
  return tc;
}

Fixture& fixture() {
  static Fixture f = [] {
    Fixture x;
    PhantomConfig pc;
    pc.n_subjects = kFixtureSubjects;
    pc.seed = kFixtureSeed;
    x.phantom = generate_cohort(pc, GrowthLaw{});
    x.masked = mask_missing(x.phantom.cohort, kMissingFraction, kMaskSeed);
    x.low_train = downsample_cohort(x.masked.train);
    return x;
  }();
  return f;
}

const GenerateStage& trained_generate() {
  Fixture& f = fixture();
  if (!f.gen) {
    const auto t0 = Clock::now();
    f.gen = train_generate(f.masked.train, gen_config(true), gen_train_config(), &f.gen_log);
    f.gen_train_s = seconds_since(t0);
  }
  return *f.gen;
}

const SrStage& trained_sr() {
  Fixture& f = fixture();
  if (!f.sr) {
    const auto t0 = Clock::now();
    SrConfig sc;
    sc.base_channels = kSrBaseChannels;
    TrainConfig tc = TrainConfig::defaults_for(StageKind::sr);
    tc.max_steps = kSrSteps;
    tc.learning_rate = kSrLearningRate;
    tc.seed = kTrainSeed;
    f.sr = train_sr(f.masked.train, sc, tc);
    f.sr_train_s = seconds_since(t0);
  }
  return *f.sr;
}

SamplerOptions sampler() {
  SamplerOptions o;
  o.steps = kSampleSteps;
  return o;
}

// ---- 5 ----

Result desk_learning() {
  const auto t0 = Clock::now();
  const GenerateStage& gen = trained_generate();
  const Fixture& f = fixture();
  const auto& log = f.gen_log;
  double first = 0, last = 0;
  const std::size_t w = std::min<std::size_t>(100, log.size());
  for (std::size_t i = 0; i < w; ++i) {
    first += log[i].loss;
    last += log[log.size() - 1 - i].loss;
  }
  const double ratio = w ? last / first : 1.0;

  const NoiseSchedule sched = gen.schedule.make();
  double pg = 0, sg = 0, pc = 0, sc = 0;
  for (std::size_t i = 0; i < f.masked.held_out.size(); ++i) {
    const ScanRecord& h = f.masked.held_out[i];
    const Volume3D truth = resample_down2(h.volume());
    const CompletionRequest req{h.subject_id(), {h.age_months()}, GuidancePolicy::nearest_age, std::nullopt};
    const ScanRecord& guide = select_guidance(f.low_train, req, h.age_months());
    const GuidanceBundle b{guide.volume(), h.age_months()};
    const auto x = ddim_sample([&](std::span<const double> xt, int t) { return gen.model.predict_eps(xt, t, b); },
                               truth.size(), sched, sampler(), derive_seed(kSampleSeed, i));
    const Volume3D out = from_model_space(x, truth.dims(), truth.spacing());
    pg += psnr(out, truth);
    sg += ssim3d(out, truth);
    pc += psnr(guide.volume(), truth);
    sc += ssim3d(guide.volume(), truth);
  }
  const double n = static_cast<double>(f.masked.held_out.size());
  pg /= n;
  sg /= n;
  pc /= n;
  sc /= n;
  const double secs = seconds_since(t0);
  const bool ok = ratio <= kLossRatioMax && pg >= pc + kPsnrMarginDb && sg >= sc && secs <= kLearningBudgetS;
  return {ok, fmt::format("loss ratio {:.4f} (<= {:.2f}); {} held-out scans: generated {:.2f} dB / SSIM {:.3f} vs "
                          "nearest-age copy {:.2f} dB / {:.3f} (need >= {:.2f} dB and >= {:.3f}); train {:.0f}s; {}",
                          ratio, kLossRatioMax, f.masked.held_out.size(), pg, sg, pc, sc, pc + kPsnrMarginDb, sc,
                          f.gen_train_s, budget_note(secs, kLearningBudgetS))};
}

// ---- 6 ----

Result sr_value() {
  const auto t0 = Clock::now();
  const SrStage& sr = trained_sr();
  PhantomConfig pc;
  pc.n_subjects = kUnseenSubjects;
  pc.seed = kUnseenSeed;
  const PhantomCohort unseen = generate_cohort(pc, GrowthLaw{});
  const NoiseSchedule sched = sr.schedule.make();
  double p_sr = 0, p_tri = 0;
  std::size_t n = 0;
  for (const auto& [id, series] : unseen.cohort.subjects())
    for (const ScanRecord& s : series) {
      const Volume3D low = resample_down2(s.volume());
      const auto x = sr_sample(sr.model, to_model_space(low), sched, sampler(), derive_seed(kSampleSeed, 1000 + n));
      p_sr += psnr(from_model_space(x, s.volume().dims(), s.volume().spacing()), s.volume());
      p_tri += psnr(upsample_trilinear2(low), s.volume());
      ++n;
    }
  p_sr /= static_cast<double>(n);
  p_tri /= static_cast<double>(n);
  const double secs = seconds_since(t0);
  return {n >= kSrMinVolumes && p_sr > p_tri && secs <= kSrBudgetS,
          fmt::format("{} unseen volumes: SR {:.2f} dB vs trilinear {:.2f} dB; train {:.0f}s; {}", n, p_sr, p_tri,
                      fixture().sr_train_s, budget_note(secs, kSrBudgetS))};
}

// ---- 7 ----

struct Pt {
  double x, y;
};

double cross(Pt o, Pt a, Pt b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

std::vector<Pt> convex_hull(std::vector<Pt> p) {
  std::sort(p.begin(), p.end(), [](Pt a, Pt b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (p.size() < 3) return p;
  std::vector<Pt> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(h[k - 2], h[k - 1], p[i - 1]) <= 0) --k;
    h[k++] = p[i - 1];
  }
  h.resize(k - 1);
  return h;
}

// Counter-clockwise hull; boundary counts as inside.
bool inside(const std::vector<Pt>& hull, Pt q) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i)
    if (cross(hull[i], hull[(i + 1) % hull.size()], q) < -1e-9) return false;
  return true;
}

Result trajectory_recovery() {
  const auto t0 = Clock::now();
  const GrowthLaw law;

  // Noise-free law: fitted coefficients must be exact.
  GrowthLaw exact = law;
  exact.sigma_subject = 0.0;
  exact.sigma_noise = 0.0;
  PhantomConfig npc;
  npc.n_subjects = kFixtureSubjects;
  npc.seed = kFixtureSeed;
  const PhantomCohort noise_free = generate_cohort(npc, exact);
  double exact_err = 0;
  for (Tissue t : kTissues) {
    std::vector<LmmObservation> obs;
    for (const PhantomTruth& tr : noise_free.truth)
      obs.push_back({tr.subject_id, tr.age_months, tr.volumes[static_cast<int>(t)]});
    const LmmFit fit = fit_lmm_loglinear(obs);
    const int k = static_cast<int>(t);
    exact_err = std::max({exact_err, std::abs(fit.beta0 - law.beta0[k]), std::abs(fit.beta1 - law.beta1[k])});
  }

  // Full loop on the masked fixture.
  const GenerateStage& gen = trained_generate();
  const SrStage& sr = trained_sr();
  const Fixture& f = fixture();
  const SegmentThresholds seg{0.4, 0.56, 0.1};
  std::vector<TrajectoryPoint> points;
  auto add = [&](const ScanRecord& s) {
    const TissueVolumes v = tissue_volumes(segment_tissues(s.volume(), seg));
    for (Tissue t : kTissues) points.push_back({s.subject_id(), s.age_months(), t, v[static_cast<int>(t)], s.provenance()});
  };
  for (const auto& [id, series] : f.masked.train.subjects())
    for (const ScanRecord& s : series) add(s);
  std::map<std::string, std::vector<double>> missing;
  for (const ScanRecord& h : f.masked.held_out) missing[h.subject_id()].push_back(h.age_months());
  const CompletionOptions opts{sampler(), sampler()};
  std::uint64_t k = 0;
  for (const auto& [id, ages] : missing)
    for (const ScanRecord& g : complete_subject(gen, sr, f.masked.train, {id, ages, GuidancePolicy::nearest_age, std::nullopt}, derive_seed(kSampleSeed, 77, k++), opts))
      add(g);

  const TrajectoryModel model = fit_trajectories(points);
  bool slopes_ok = true;
  std::string slopes;
  std::size_t in_hull = 0, generated = 0;
  for (Tissue t : kTissues) {
    const int c = static_cast<int>(t);
    const double b1 = model.fits[c].beta1, truth = law.beta1[c];
    const bool ok = (b1 > 0) == (truth > 0) && std::abs(b1 - truth) <= kSlopeRelTol * std::abs(truth);
    slopes_ok = slopes_ok && ok;
    slopes += fmt::format("{} beta1 {:.1f} vs law {:.1f}{}; ", to_string(t), b1, truth, ok ? "" : " (off)");
    std::vector<Pt> obs;
    for (const TrajectoryPoint& p : points)
      if (p.tissue == t && p.provenance == Provenance::observed) obs.push_back({std::log(p.age_months), p.volume_mm3});
    const auto hull = convex_hull(obs);
    for (const TrajectoryPoint& p : points)
      if (p.tissue == t && p.provenance == Provenance::generated) {
        ++generated;
        in_hull += inside(hull, {std::log(p.age_months), p.volume_mm3});
      }
  }
  const double frac = generated ? static_cast<double>(in_hull) / static_cast<double>(generated) : 0.0;
  const double secs = seconds_since(t0);
  return {exact_err <= kLmmExactTol && slopes_ok && frac >= kHullFractionMin && secs <= kTrajectoryBudgetS,
          fmt::format("noise-free fit err {:.2e} (<= {:g}); observed+generated fit, slopes must match sign and lie "
                      "within {:.0f}%: {}{}/{} generated points in observed "
                      "hull ({:.0f}%, need {:.0f}%); {}",
                      exact_err, kLmmExactTol, 100 * kSlopeRelTol, slopes, in_hull, generated, 100 * frac,
                      100 * kHullFractionMin, budget_note(secs, kTrajectoryBudgetS))};
}

// ---- 8 ----

Result ablation() {
  const auto t0 = Clock::now();
  const GenerateStage& full = trained_generate();
  const SrStage& sr = trained_sr();
  const Fixture& f = fixture();
  const GenerateStage shared = train_generate(f.masked.train, gen_config(false), gen_train_config());
  const NoiseSchedule gs = full.schedule.make(), ss = sr.schedule.make();
  const std::vector<AblationVariant> variants{{"Model 1 (shared encoder)", {shared.model, gs, sr.model, ss}},
                                              {"Full AsMM", {full.model, gs, sr.model, ss}}};
  const AblationReport report =
      ablation_report(variants, f.masked.held_out, f.masked.train, kSampleSeed, {sampler(), sampler()});
  std::printf("%s", format_ablation_table(report).c_str());
  bool finite = report.rows.size() == 2;
  for (const AblationRow& r : report.rows) finite = finite && std::isfinite(r.psnr_mean) && std::isfinite(r.ssim_mean);
  const double secs = seconds_since(t0);
  std::string direction = "n/a";
  if (finite) {
    direction = report.rows[1].psnr_mean > report.rows[0].psnr_mean
                    ? "full AsMM ahead of Model 1, same order as the reference 22.33 < 24.15"
                    : "Model 1 ahead of full AsMM, opposite to the reference 22.33 < 24.15";
  }
  return {finite && secs <= kAblationBudgetS,
          fmt::format("report produced ({}; reported, not gated); {}", direction, budget_note(secs, kAblationBudgetS))};
}

// ---- 9 ----

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Drops the last column (wall-clock seconds) of the loss log.
std::string without_wall_column(const std::string& csv) {
  std::istringstream in(csv);
  std::string out, line;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

Result reproducibility() {
  const fs::path root = fs::temp_directory_path() / "volcomp_acceptance_rerun";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cfg = (root / "fixture.cfg").string();
  std::ofstream(cfg) << "phantom.n_subjects = 4\n"
                        "mask.missing_fraction = 0.3\n"
                        "gen.base_channels = 2\n"
                        "gen.channel_multipliers = 1 1 1 1\n"
                        "gen.time_embed_dim = 8\n"
                        "gen.age_embed_dim = 8\n"
                        "gen.age_tokens = 2\n"
                        "sr.base_channels = 2\n"
                        "sr.channel_multipliers = 1 1 1 1\n"
                        "sr.time_embed_dim = 8\n"
                        "train.max_steps = 3\n"
                        "train.checkpoint_every = 2\n"
                        "sample.steps = 3\n";
  auto run = [](std::vector<std::string> args) {
    args.insert(args.begin(), "volcomp");
    return cli::run_cli(args);
  };
  auto p = [&](const std::string& s) { return (root / s).string(); };
  const std::vector<std::vector<std::string>> steps{
      {"phantom", "--config", cfg, "--out", p("ph")},
      {"train", "--config", cfg, "--stage", "generate", "--data", p("ph"), "--out", p("tg")},
      {"train", "--config", cfg, "--stage", "sr", "--data", p("ph"), "--out", p("ts")},
      {"complete", "--config", cfg, "--data", p("ph"), "--gen", p("tg/generate.vckp"), "--sr", p("ts/sr.vckp"),
       "--out", p("co"), "--threads", "2"},
      {"eval", "--config", cfg, "--data", p("ph"), "--generated", p("co"), "--out", p("ev")},
      {"trajectory", "--config", cfg, "--data", p("ph"), "--generated", p("co"), "--out", p("tr")}};
  for (const auto& s : steps)
    if (run(s) != cli::kExitOk) return {false, fmt::format("command '{}' failed", s[0])};

  std::size_t files = 0;
  std::vector<std::string> diffs;
  for (const std::string dir : {"ph", "tg", "ts", "co", "ev", "tr"}) {
    const fs::path again = root / (dir + "_again");
    if (run({"rerun", (root / dir / cli::kRunRecordName).string(), "--out", again.string()}) != cli::kExitOk)
      return {false, fmt::format("rerun of {} failed", dir)};
    for (const auto& entry : fs::recursive_directory_iterator(root / dir)) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), root / dir);
      if (rel == cli::kRunRecordName) continue;
      std::string a = slurp(entry.path()), b = slurp(again / rel);
      if (rel == cli::kLossLogName) {
        a = without_wall_column(a);
        b = without_wall_column(b);
      }
      ++files;
      if (a != b) diffs.push_back(dir + "/" + rel.string());
    }
  }
  fs::remove_all(root);
  std::string detail = fmt::format("{} artifacts from 6 commands compared after rerun --threads 1", files);
  if (!diffs.empty()) detail += "; differing: " + fmt::format("{}", fmt::join(diffs, ", "));
  return {diffs.empty() && files > 0, detail};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Result()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{{1, "schedule fidelity", schedule_fidelity},
                                   {2, "sampler oracle identity", sampler_identity},
                                   {3, "metric oracle equivalence", metric_oracles},
                                   {4, "gradient correctness", gradient_check},
                                   {5, "desk-scale learning", desk_learning},
                                   {6, "SR stage value", sr_value},
                                   {7, "trajectory recovery", trajectory_recovery},
                                   {8, "ablation harness", ablation},
                                   {9, "reproducibility", reproducibility}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ids(argv[++i]);
      for (std::string tok; std::getline(ids, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::fprintf(stderr, "usage: %s [--only 1,2,...]\n", argv[0]);
      return 2;
    }
  }
  int failed = 0;
  for (const Criterion& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    Result r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failed += !r.pass;
    std::printf("criterion %d %s: %s -- %s\n", c.id, r.pass ? "PASS" : "FAIL", c.name, r.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
