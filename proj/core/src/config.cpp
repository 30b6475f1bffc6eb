#include "volcomp/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

#include "volcomp/errors.hpp"

namespace volcomp {

TrainConfig RunConfig::train_config(StageKind stage) const {
  TrainConfig t = train;
  t.stage = stage;
  t.schedule = stage == StageKind::generate ? gen_schedule : sr_schedule;
  t.seed = seed;
  return t;
}

void RunConfig::finalize() {
  gen.in_dims = phantom.dims;
  sr.low_dims = phantom.dims;
  phantom.seed = seed;
  phantom.validate();
  law.validate();
  if (!(missing_fraction >= 0.0 && missing_fraction < 1.0)) throw InvalidArgument("mask.missing_fraction must be in [0, 1)");
  gen.validate();
  sr.validate();
  (void)gen_schedule.make();
  (void)sr_schedule.make();
  train_config(StageKind::generate).validate();
  if (sampler.steps < 1) throw InvalidArgument("sample.steps must be >= 1");
  if (!(sampler.eta >= 0.0)) throw InvalidArgument("sample.eta must be >= 0");
  ssim.validate();
  seg.validate();
  if (threads < 1) throw InvalidArgument("threads must be >= 1");
}

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw InvalidArgument(fmt::format("'{}' is not a number", s));
  return v;
}

template <class Int>
Int parse_int(const std::string& s) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw InvalidArgument(fmt::format("'{}' is not an integer", s));
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw InvalidArgument(fmt::format("'{}' is not a boolean (true|false)", s));
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

template <std::size_t N>
std::array<double, N> parse_doubles(const std::string& s) {
  const auto w = split_words(s);
  if (w.size() != N) throw InvalidArgument(fmt::format("expected {} numbers, got '{}'", N, s));
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_double(w[i]);
  return out;
}

template <class Seq>
std::string join(const Seq& seq) {
  std::string out;
  for (const auto& v : seq) {
    if (!out.empty()) out += ' ';
    out += fmt::format("{}", v);
  }
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

Key dbl(std::string name, double RunConfig::*field) {
  return {std::move(name), [field](RunConfig& c, const std::string& v) { c.*field = parse_double(v); },
          [field](const RunConfig& c) { return fmt_double(c.*field); }};
}

template <class Get>
Key dbl_at(std::string name, Get get) {
  return {std::move(name), [get](RunConfig& c, const std::string& v) { get(c) = parse_double(v); },
          [get](const RunConfig& c) { return fmt_double(get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Key int_at(std::string name, Get get) {
  return {std::move(name), [get](RunConfig& c, const std::string& v) { get(c) = parse_int<int>(v); },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Key bool_at(std::string name, Get get) {
  return {std::move(name), [get](RunConfig& c, const std::string& v) { get(c) = parse_bool(v); },
          [get](const RunConfig& c) { return std::string(get(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <class Get>
Key str_at(std::string name, Get get) {
  return {std::move(name), [get](RunConfig& c, const std::string& v) { get(c) = v; },
          [get](const RunConfig& c) { return get(const_cast<RunConfig&>(c)); }};
}

template <class Get>
Key triple_at(std::string name, Get get) {
  return {std::move(name), [get](RunConfig& c, const std::string& v) { get(c) = parse_doubles<3>(v); },
          [get](const RunConfig& c) { return join(get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Key mults_at(std::string name, Get get) {
  return {std::move(name),
          [get](RunConfig& c, const std::string& v) {
            const auto w = split_words(v);
            if (w.size() != kUNetLevels) throw InvalidArgument(fmt::format("expected {} multipliers", kUNetLevels));
            for (std::size_t i = 0; i < w.size(); ++i) get(c)[i] = parse_int<int>(w[i]);
          },
          [get](const RunConfig& c) { return join(get(const_cast<RunConfig&>(c))); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back({"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_int<std::uint64_t>(v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    k.push_back(int_at("threads", [](RunConfig& c) -> int& { return c.threads; }));
    k.push_back({"phantom.dims",
                 [](RunConfig& c, const std::string& v) {
                   const auto w = split_words(v);
                   if (w.size() != 3) throw InvalidArgument("expected three dims");
                   c.phantom.dims = {parse_int<int>(w[0]), parse_int<int>(w[1]), parse_int<int>(w[2])};
                 },
                 [](const RunConfig& c) {
                   return fmt::format("{} {} {}", c.phantom.dims.nx, c.phantom.dims.ny, c.phantom.dims.nz);
                 }});
    k.push_back({"phantom.spacing",
                 [](RunConfig& c, const std::string& v) {
                   const auto a = parse_doubles<3>(v);
                   c.phantom.spacing = {a[0], a[1], a[2]};
                 },
                 [](const RunConfig& c) {
                   return join(std::array<double, 3>{c.phantom.spacing.sx, c.phantom.spacing.sy, c.phantom.spacing.sz});
                 }});
    k.push_back(int_at("phantom.n_subjects", [](RunConfig& c) -> int& { return c.phantom.n_subjects; }));
    k.push_back({"phantom.age_grid",
                 [](RunConfig& c, const std::string& v) {
                   c.phantom.age_grid.clear();
                   for (const auto& w : split_words(v)) c.phantom.age_grid.push_back(parse_double(w));
                 },
                 [](const RunConfig& c) { return join(c.phantom.age_grid); }});
    k.push_back(dbl_at("phantom.contrast.age_young", [](RunConfig& c) -> double& { return c.phantom.contrast.age_young; }));
    k.push_back(dbl_at("phantom.contrast.age_old", [](RunConfig& c) -> double& { return c.phantom.contrast.age_old; }));
    k.push_back(triple_at("phantom.contrast.young", [](RunConfig& c) -> TissueVolumes& { return c.phantom.contrast.young; }));
    k.push_back(triple_at("phantom.contrast.old", [](RunConfig& c) -> TissueVolumes& { return c.phantom.contrast.old; }));
    k.push_back(dbl_at("phantom.contrast.background", [](RunConfig& c) -> double& { return c.phantom.contrast.background; }));
    k.push_back(dbl_at("phantom.noise_sigma", [](RunConfig& c) -> double& { return c.phantom.contrast.noise_sigma; }));
    k.push_back(triple_at("law.beta0", [](RunConfig& c) -> TissueVolumes& { return c.law.beta0; }));
    k.push_back(triple_at("law.beta1", [](RunConfig& c) -> TissueVolumes& { return c.law.beta1; }));
    k.push_back(dbl_at("law.sigma_subject", [](RunConfig& c) -> double& { return c.law.sigma_subject; }));
    k.push_back(dbl_at("law.sigma_noise", [](RunConfig& c) -> double& { return c.law.sigma_noise; }));
    k.push_back(dbl("mask.missing_fraction", &RunConfig::missing_fraction));
    k.push_back(int_at("gen.base_channels", [](RunConfig& c) -> int& { return c.gen.base_channels; }));
    k.push_back(mults_at("gen.channel_multipliers", [](RunConfig& c) -> auto& { return c.gen.channel_multipliers; }));
    k.push_back(int_at("gen.time_embed_dim", [](RunConfig& c) -> int& { return c.gen.time_embed_dim; }));
    k.push_back(int_at("gen.age_embed_dim", [](RunConfig& c) -> int& { return c.gen.age_embed_dim; }));
    k.push_back(int_at("gen.age_tokens", [](RunConfig& c) -> int& { return c.gen.age_tokens; }));
    k.push_back(int_at("gen.attention_heads", [](RunConfig& c) -> int& { return c.gen.attention_heads; }));
    k.push_back(bool_at("gen.independent_guide_encoder", [](RunConfig& c) -> bool& { return c.gen.independent_guide_encoder; }));
    k.push_back(dbl_at("gen.beta_start", [](RunConfig& c) -> double& { return c.gen_schedule.beta_start; }));
    k.push_back(dbl_at("gen.beta_end", [](RunConfig& c) -> double& { return c.gen_schedule.beta_end; }));
    k.push_back(int_at("gen.timesteps", [](RunConfig& c) -> int& { return c.gen_schedule.steps; }));
    k.push_back(int_at("sr.base_channels", [](RunConfig& c) -> int& { return c.sr.base_channels; }));
    k.push_back(mults_at("sr.channel_multipliers", [](RunConfig& c) -> auto& { return c.sr.channel_multipliers; }));
    k.push_back(int_at("sr.time_embed_dim", [](RunConfig& c) -> int& { return c.sr.time_embed_dim; }));
    k.push_back(dbl_at("sr.beta_start", [](RunConfig& c) -> double& { return c.sr_schedule.beta_start; }));
    k.push_back(dbl_at("sr.beta_end", [](RunConfig& c) -> double& { return c.sr_schedule.beta_end; }));
    k.push_back(int_at("sr.timesteps", [](RunConfig& c) -> int& { return c.sr_schedule.steps; }));
    k.push_back(dbl_at("train.learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; }));
    k.push_back(int_at("train.batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }));
    k.push_back(int_at("train.max_steps", [](RunConfig& c) -> int& { return c.train.max_steps; }));
    k.push_back(int_at("train.checkpoint_every", [](RunConfig& c) -> int& { return c.train.checkpoint_every; }));
    k.push_back(bool_at("train.augment", [](RunConfig& c) -> bool& { return c.train.augment; }));
    k.push_back(dbl_at("train.max_rotation_degrees", [](RunConfig& c) -> double& { return c.train.max_rotation_degrees; }));
    k.push_back(dbl_at("train.clip_norm", [](RunConfig& c) -> double& { return c.train.clip_norm; }));
    k.push_back(int_at("sample.steps", [](RunConfig& c) -> int& { return c.sampler.steps; }));
    k.push_back(dbl_at("sample.eta", [](RunConfig& c) -> double& { return c.sampler.eta; }));
    k.push_back(bool_at("sample.clip_x0", [](RunConfig& c) -> bool& { return c.sampler.clip_x0; }));
    k.push_back({"complete.policy",
                 [](RunConfig& c, const std::string& v) { c.policy = guidance_policy_from_string(v); },
                 [](const RunConfig& c) { return to_string(c.policy); }});
    k.push_back(int_at("ssim.window", [](RunConfig& c) -> int& { return c.ssim.window; }));
    k.push_back(dbl_at("ssim.k1", [](RunConfig& c) -> double& { return c.ssim.k1; }));
    k.push_back(dbl_at("ssim.k2", [](RunConfig& c) -> double& { return c.ssim.k2; }));
    k.push_back(dbl_at("ssim.data_range", [](RunConfig& c) -> double& { return c.ssim.data_range; }));
    k.push_back(dbl_at("seg.csf_gm", [](RunConfig& c) -> double& { return c.seg.csf_gm; }));
    k.push_back(dbl_at("seg.gm_wm", [](RunConfig& c) -> double& { return c.seg.gm_wm; }));
    k.push_back({"seg.background",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "none") {
                     c.seg.background.reset();
                   } else {
                     c.seg.background = parse_double(v);
                   }
                 },
                 [](const RunConfig& c) { return c.seg.background ? fmt_double(*c.seg.background) : std::string("none"); }});
    k.push_back(str_at("paths.data_dir", [](RunConfig& c) -> std::string& { return c.data_dir; }));
    k.push_back(str_at("paths.out_dir", [](RunConfig& c) -> std::string& { return c.out_dir; }));
    k.push_back(str_at("paths.gen_checkpoint", [](RunConfig& c) -> std::string& { return c.gen_checkpoint; }));
    k.push_back(str_at("paths.sr_checkpoint", [](RunConfig& c) -> std::string& { return c.sr_checkpoint; }));
    return k;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const Key& k : keys()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw InvalidArgument(fmt::format("unknown config key '{}'", key));
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument(fmt::format("{}:{}: expected 'key = value'", origin, line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(fmt::format("{}:{}: {}", origin, line_no, e.what()));
    }
  }
  cfg.finalize();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument(fmt::format("cannot read config {}", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.string());
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Key& k : keys()) out.emplace_back(k.name, k.get(cfg));
  return out;
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += fmt::format("{} = {}\n", k, v);
  return out;
}

}  // namespace volcomp
