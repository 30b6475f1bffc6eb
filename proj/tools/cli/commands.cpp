#include "commands.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "volcomp/checkpoint.hpp"
#include "volcomp/cohort_io.hpp"
#include "volcomp/log.hpp"
#include "volcomp/metrics.hpp"
#include "volcomp/phantom.hpp"
#include "volcomp/pipeline.hpp"
#include "volcomp/rng.hpp"
#include "volcomp/trajectory.hpp"
#include "volcomp/version.hpp"
#include "volcomp/volume_io.hpp"

namespace volcomp::cli {
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Substream of the global seed used for the missing-timepoint mask.
constexpr std::uint64_t kMaskStream = 0x6d61736b;

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
  return fmt::format("{}", v);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed: " + path.string());
}

fs::path absolute_or_empty(const std::string& p) {
  if (p.empty()) return {};
  return fs::weakly_canonical(fs::absolute(p));
}

void prepare_out_dir(const fs::path& out, bool force, const RunConfig& cfg) {
  if (out.empty()) throw UsageError("no output directory (set --out or paths.out_dir)");
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) throw UsageError(out.string() + " exists and is not a directory");
    if (!fs::is_empty(out)) {
      if (!force) throw UsageError(out.string() + " is not empty; pass --force to overwrite it");
      const fs::path canon = fs::weakly_canonical(out);
      for (const std::string& p : {cfg.data_dir, cfg.gen_checkpoint, cfg.sr_checkpoint}) {
        if (p.empty()) continue;
        const fs::path in = fs::weakly_canonical(fs::absolute(p));
        auto [a, b] = std::mismatch(canon.begin(), canon.end(), in.begin(), in.end());
        if (a == canon.end()) throw UsageError("refusing to clear " + out.string() + ": it contains input " + p);
      }
      fs::remove_all(out);
    }
  }
  fs::create_directories(out);
}

// ---- phantom ----

void cmd_phantom(const RunConfig& cfg, const fs::path& out) {
  const PhantomCohort ph = generate_cohort(cfg.phantom, cfg.law);
  const MaskedCohort masked = mask_missing(ph.cohort, cfg.missing_fraction, derive_seed(cfg.seed, kMaskStream));

  std::vector<CohortItem> items;
  for (const auto& [id, series] : ph.cohort.subjects()) {
    for (const ScanRecord& s : series) {
      const bool held = std::any_of(masked.held_out.begin(), masked.held_out.end(), [&](const ScanRecord& h) {
        return h.subject_id() == id && std::abs(h.age_months() - s.age_months()) <= kAgeTolerance;
      });
      items.push_back({&s, held, ph.truth_for(id, s.age_months()).volumes});
    }
  }
  write_cohort(out, items, cfg.phantom.age_grid);
  log_info(fmt::format("wrote {} scans ({} held out) to {}", items.size(), masked.held_out.size(), out.string()));
}

// ---- train ----

std::string loss_csv(const std::vector<LossRecord>& log) {
  std::string s = "step,loss,wall_seconds\n";
  for (const LossRecord& r : log) s += fmt::format("{},{},{:.3f}\n", r.step, num(r.loss), r.wall_seconds);
  return s;
}

void cmd_train(const RunConfig& cfg, const CommandArgs& args, const fs::path& out) {
  StageKind stage;
  if (args.stage == "generate") {
    stage = StageKind::generate;
  } else if (args.stage == "sr") {
    stage = StageKind::sr;
  } else {
    throw UsageError("--stage must be generate or sr, got '" + args.stage + "'");
  }
  const CohortOnDisk data = read_cohort(cfg.data_dir);
  const TrainConfig tc = cfg.train_config(stage);

  std::vector<LossRecord> log;
  TrainHooks hooks;
  hooks.on_step = [&](const LossRecord& r) {
    if (r.step % 100 == 0 || r.step == tc.max_steps)
      log_info(fmt::format("{} step {}/{} loss {:.5f}", args.stage, r.step, tc.max_steps, r.loss));
  };
  auto step_path = [&](int step) { return out / fmt::format("{}_step{:06d}.vckp", args.stage, step); };
  hooks.on_generate_checkpoint = [&](int step, const GenerateStage& s) { save_checkpoint(step_path(step), s); };
  hooks.on_sr_checkpoint = [&](int step, const SrStage& s) { save_checkpoint(step_path(step), s); };

  if (stage == StageKind::generate) {
    const GenerateStage trained = train_generate(data.available, cfg.gen, tc, &log, hooks);
    save_checkpoint(out / kGenerateCheckpointName, trained);
  } else {
    const SrStage trained = train_sr(data.available, cfg.sr, tc, &log, hooks);
    save_checkpoint(out / kSrCheckpointName, trained);
  }
  write_text(out / kLossLogName, loss_csv(log));
}

// ---- complete ----

void cmd_complete(const RunConfig& cfg, const CommandArgs& args, const fs::path& out) {
  if (cfg.gen_checkpoint.empty() || cfg.sr_checkpoint.empty())
    throw UsageError("complete needs paths.gen_checkpoint and paths.sr_checkpoint (or --gen / --sr)");
  const GenerateStage gen = load_generate_checkpoint(cfg.gen_checkpoint);
  const SrStage sr = load_sr_checkpoint(cfg.sr_checkpoint);
  const CohortOnDisk data = read_cohort(cfg.data_dir);

  std::vector<CompletionRequest> requests;
  if (!args.subject.empty()) {
    if (args.ages.empty()) throw UsageError("--subject needs --ages");
    requests.push_back({args.subject, args.ages, cfg.policy, std::nullopt});
  } else {
    if (!args.ages.empty()) throw UsageError("--ages needs --subject");
    std::map<std::string, std::vector<double>> wanted;
    for (const ScanRecord& h : data.held_out) wanted[h.subject_id()].push_back(h.age_months());
    for (auto& [id, ages] : wanted) requests.push_back({id, ages, cfg.policy, std::nullopt});
  }
  if (requests.empty()) throw InvalidArgument("nothing to complete: the cohort has no held-out scans");

  // Per-subject seeds depend only on the subject's position in the cohort, so
  // the result does not depend on --threads or on which subjects are requested.
  const std::vector<std::string> ids = data.available.subject_ids();
  auto subject_seed = [&](const std::string& id) {
    const auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) throw InvalidArgument("subject " + id + " has no observed scans");
    return derive_seed(cfg.seed, static_cast<std::uint64_t>(it - ids.begin()));
  };
  const CompletionOptions opts{cfg.sampler, cfg.sampler};

  std::vector<std::vector<ScanRecord>> results(requests.size());
  std::vector<std::exception_ptr> errors(requests.size());
  std::mutex next_mutex;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(next_mutex);
        if (next == requests.size()) return;
        i = next++;
      }
      try {
        results[i] = complete_subject(gen, sr, data.available, requests[i], subject_seed(requests[i].subject_id), opts);
        log_info(fmt::format("completed {} ({} scans)", requests[i].subject_id, results[i].size()));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_workers = std::clamp(cfg.threads, 1, static_cast<int>(requests.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<CohortItem> items;
  for (const auto& scans : results)
    for (const ScanRecord& s : scans) items.push_back({&s, false, std::nullopt});
  write_cohort(out, items, data.manifest.age_grid);
}

// ---- eval ----

ScanRecord load_entry(const fs::path& dir, const CohortEntry& e) {
  ScanRecord raw = read_scan(dir / e.file);
  return ScanRecord(e.subject_id, e.age_months, raw.volume(), e.provenance);
}

void cmd_eval(const RunConfig& cfg, const CommandArgs& args, const fs::path& out) {
  if (args.generated_dir.empty()) throw UsageError("eval needs --generated DIR");
  const fs::path truth_dir = cfg.data_dir;
  const CohortManifest truth = read_cohort_manifest(truth_dir);
  const CohortManifest generated = read_cohort_manifest(args.generated_dir);

  std::string csv = "scan_id,variant,psnr_db,ssim\n";
  double psnr_sum = 0.0, ssim_sum = 0.0;
  int finite = 0;
  for (const CohortEntry& g : generated.entries) {
    const CohortEntry* t = truth.find(g.subject_id, g.age_months);
    if (t == nullptr)
      throw InvalidArgument(fmt::format("no ground truth for {} at {} months in {}", g.subject_id, g.age_months,
                                        truth_dir.string()));
    const ScanRecord gs = load_entry(args.generated_dir, g);
    const ScanRecord ts = load_entry(truth_dir, *t);
    if (gs.volume().dims() != ts.volume().dims())
      throw InvalidArgument(fmt::format("{}: generated dims {} differ from truth dims {}", gs.scan_id(),
                                        to_string(gs.volume().dims()), to_string(ts.volume().dims())));
    const double p = psnr(gs.volume(), ts.volume(), cfg.ssim.data_range);
    const double s = ssim3d(gs.volume(), ts.volume(), cfg.ssim);
    csv += fmt::format("{},{},{},{}\n", gs.scan_id(), args.variant, num(p), num(s));
    if (std::isfinite(p)) {
      psnr_sum += p;
      ++finite;
    }
    ssim_sum += s;
  }
  write_text(out / kMetricsName, csv);
  if (!generated.entries.empty()) {
    const double n = static_cast<double>(generated.entries.size());
    log_info(fmt::format("{} scans: mean PSNR {} dB over {} finite, mean SSIM {:.4f}", generated.entries.size(),
                         finite ? fmt::format("{:.2f}", psnr_sum / finite) : std::string("+inf"), finite,
                         ssim_sum / n));
  }
}

// ---- trajectory ----

void add_points(std::vector<TrajectoryPoint>& points, const ScanRecord& s, const SegmentThresholds& seg) {
  const TissueVolumes v = tissue_volumes(segment_tissues(s.volume(), seg));
  for (Tissue t : kTissues)
    points.push_back({s.subject_id(), s.age_months(), t, v[static_cast<int>(t)], s.provenance()});
}

void cmd_trajectory(const RunConfig& cfg, const CommandArgs& args, const fs::path& out) {
  const CohortManifest observed = read_cohort_manifest(cfg.data_dir);
  std::vector<TrajectoryPoint> points;
  for (const CohortEntry& e : observed.entries) {
    if (e.held_out && !args.include_held_out) continue;
    add_points(points, load_entry(cfg.data_dir, e), cfg.seg);
  }
  if (!args.generated_dir.empty()) {
    const CohortManifest gen = read_cohort_manifest(args.generated_dir);
    for (const CohortEntry& e : gen.entries) add_points(points, load_entry(args.generated_dir, e), cfg.seg);
  }

  std::string pts = "subject,age,class,volume,provenance\n";
  for (const TrajectoryPoint& p : points)
    pts += fmt::format("{},{},{},{},{}\n", p.subject_id, num(p.age_months), to_string(p.tissue), num(p.volume_mm3),
                       to_string(p.provenance));
  write_text(out / kTrajectoryPointsName, pts);

  const TrajectoryModel model = fit_trajectories(points);
  std::string fits = "class,beta0,beta1,sigma_b2,sigma_e2,n_obs\n";
  for (Tissue t : kTissues) {
    const LmmFit& f = model.fits[static_cast<int>(t)];
    fits += fmt::format("{},{},{},{},{},{}\n", to_string(t), num(f.beta0), num(f.beta1), num(f.sigma_b2),
                        num(f.sigma_e2), f.n_obs);
    log_info(fmt::format("{}: V = {:.2f} + {:.2f} ln(age)", to_string(t), f.beta0, f.beta1));
  }
  write_text(out / kTrajectoryName, fits);
}

// ---- run record ----

ojson args_json(const CommandArgs& a) {
  ojson j;
  j["stage"] = a.stage;
  j["generated_dir"] = a.generated_dir.string();
  j["variant"] = a.variant;
  j["subject"] = a.subject;
  j["ages"] = a.ages;
  j["include_held_out"] = a.include_held_out;
  return j;
}

CommandArgs args_from_json(const std::string& command, const ojson& j) {
  CommandArgs a;
  a.command = command;
  a.stage = j.at("stage").get<std::string>();
  a.generated_dir = j.at("generated_dir").get<std::string>();
  a.variant = j.at("variant").get<std::string>();
  a.subject = j.at("subject").get<std::string>();
  a.ages = j.at("ages").get<std::vector<double>>();
  a.include_held_out = j.at("include_held_out").get<bool>();
  return a;
}

// Paths in the config and args are made absolute so that a rerun from another
// working directory reads the same inputs.
RunConfig with_absolute_paths(RunConfig cfg) {
  cfg.data_dir = absolute_or_empty(cfg.data_dir).string();
  cfg.out_dir = absolute_or_empty(cfg.out_dir).string();
  cfg.gen_checkpoint = absolute_or_empty(cfg.gen_checkpoint).string();
  cfg.sr_checkpoint = absolute_or_empty(cfg.sr_checkpoint).string();
  return cfg;
}

}  // namespace

void execute(const RunConfig& cfg_in, const CommandArgs& args_in, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = with_absolute_paths(cfg_in);
  CommandArgs args = args_in;
  if (!args.generated_dir.empty()) args.generated_dir = absolute_or_empty(args.generated_dir.string());
  const fs::path out = cfg.out_dir;

  prepare_out_dir(out, args.force, cfg);
  if (args.command == "phantom") {
    cmd_phantom(cfg, out);
  } else if (args.command == "train") {
    cmd_train(cfg, args, out);
  } else if (args.command == "complete") {
    cmd_complete(cfg, args, out);
  } else if (args.command == "eval") {
    cmd_eval(cfg, args, out);
  } else if (args.command == "trajectory") {
    cmd_trajectory(cfg, args, out);
  } else {
    throw UsageError("unknown command '" + args.command + "'");
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  ojson rec;
  rec["command"] = args.command;
  rec["argv"] = argv;
  rec["args"] = args_json(args);
  rec["seed"] = cfg.seed;
  rec["threads"] = cfg.threads;
  rec["artifact_version"] = artifact_version();
  rec["wall_seconds"] = wall;
  ojson conf = ojson::object();
  for (const auto& [k, v] : config_entries(cfg)) conf[k] = v;
  rec["config"] = conf;
  write_text(out / kRunRecordName, rec.dump(2) + "\n");
  log_info(fmt::format("{} finished in {:.1f} s", args.command, wall));
}

void rerun(const fs::path& run_json, const fs::path& out_dir, bool force) {
  std::ifstream in(run_json);
  if (!in) throw FormatError("cannot read " + run_json.string());
  ojson rec;
  try {
    rec = ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(run_json.string() + ": " + e.what());
  }
  RunConfig cfg;
  CommandArgs args;
  std::vector<std::string> argv;
  try {
    for (const auto& [k, v] : rec.at("config").items()) set_config_value(cfg, k, v.get<std::string>());
    args = args_from_json(rec.at("command").get<std::string>(), rec.at("args"));
    argv = rec.at("argv").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(run_json.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(run_json.string() + ": " + e.what());
  }
  cfg.threads = 1;
  if (!out_dir.empty()) cfg.out_dir = out_dir.string();
  cfg.finalize();
  args.force = force;
  execute(cfg, args, argv);
}

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::optional<int> threads;
  std::vector<std::string> sets;
  std::string data, gen, sr;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config_path, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "global seed (overrides the config)");
  app->add_option("--out", f.out, "output directory (overrides paths.out_dir)");
  app->add_flag("--force", f.force, "clear a non-empty output directory first");
  app->add_option("--threads", f.threads, "completion worker cap; outputs do not depend on it")->check(CLI::Range(1, 256));
  app->add_option("--set", f.sets, "extra config entry KEY=VALUE (repeatable)");
  app->add_option("--data", f.data, "cohort directory (overrides paths.data_dir)");
}

RunConfig resolve_config(const CommonFlags& f) {
  try {
    RunConfig cfg = f.config_path.empty() ? RunConfig{} : load_run_config(f.config_path);
    for (const std::string& kv : f.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw InvalidArgument("--set expects KEY=VALUE, got '" + kv + "'");
      auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(" \t"));
        s.erase(s.find_last_not_of(" \t") + 1);
        return s;
      };
      set_config_value(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (f.seed) cfg.seed = *f.seed;
    if (f.threads) cfg.threads = *f.threads;
    if (!f.out.empty()) cfg.out_dir = f.out;
    if (!f.data.empty()) cfg.data_dir = f.data;
    if (!f.gen.empty()) cfg.gen_checkpoint = f.gen;
    if (!f.sr.empty()) cfg.sr_checkpoint = f.sr;
    cfg.finalize();
    return cfg;
  } catch (const InvalidArgument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& argv_in) {
  init_logging();
  CLI::App app{"Longitudinal volume completion with a two-stage diffusion cascade", "volcomp"};
  app.require_subcommand(1);
  app.set_version_flag("--version", artifact_version());

  CommonFlags flags;
  CommandArgs args;
  std::string run_json;

  auto* phantom = app.add_subcommand("phantom", "generate a synthetic cohort with held-out timepoints");
  add_common(phantom, flags);

  auto* train = app.add_subcommand("train", "train one stage on the observed scans of a cohort");
  add_common(train, flags);
  train->add_option("--stage", args.stage, "generate or sr")->check(CLI::IsMember({"generate", "sr"}));

  auto* complete = app.add_subcommand("complete", "generate missing timepoints with a trained cascade");
  add_common(complete, flags);
  complete->add_option("--gen", flags.gen, "generate-stage checkpoint (overrides paths.gen_checkpoint)");
  complete->add_option("--sr", flags.sr, "refine-stage checkpoint (overrides paths.sr_checkpoint)");
  complete->add_option("--subject", args.subject, "complete one subject only");
  complete->add_option("--ages", args.ages, "target ages in months for --subject");

  auto* eval = app.add_subcommand("eval", "score generated scans against the cohort's ground truth");
  add_common(eval, flags);
  eval->add_option("--generated", args.generated_dir, "directory written by complete")->required();
  eval->add_option("--variant", args.variant, "variant name written to metrics.csv");

  auto* traj = app.add_subcommand("trajectory", "segment scans and fit per-tissue growth trajectories");
  add_common(traj, flags);
  traj->add_option("--generated", args.generated_dir, "directory written by complete");
  traj->add_flag("--include-held-out", args.include_held_out, "treat held-out ground truth as observed");

  auto* re = app.add_subcommand("rerun", "repeat the command recorded in a run.json, single-threaded");
  re->add_option("run_json", run_json, "run.json of an earlier command")->required()->check(CLI::ExistingFile);
  re->add_option("--out", flags.out, "output directory (default: the recorded one)");
  re->add_flag("--force", flags.force, "clear a non-empty output directory first");

  std::vector<std::string> rest(argv_in.begin() + (argv_in.empty() ? 0 : 1), argv_in.end());
  std::reverse(rest.begin(), rest.end());  // CLI11 consumes a reversed vector
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (re->parsed()) {
      rerun(run_json, flags.out, flags.force);
      return kExitOk;
    }
    for (CLI::App* sub : app.get_subcommands()) args.command = sub->get_name();
    args.force = flags.force;
    const RunConfig cfg = resolve_config(flags);
    execute(cfg, args, std::vector<std::string>(argv_in.begin() + (argv_in.empty() ? 0 : 1), argv_in.end()));
    return kExitOk;
  } catch (const UsageError& e) {
    std::cerr << "volcomp: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "volcomp: numerical divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "volcomp: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace volcomp::cli
