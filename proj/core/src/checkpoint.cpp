#include "volcomp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "volcomp/errors.hpp"

namespace volcomp {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using json = nlohmann::json;

std::string to_string(StageKind k) { return k == StageKind::generate ? "generate" : "sr"; }

namespace {

constexpr char kMagic[4] = {'V', 'C', 'K', 'P'};

json dims_json(Dims3 d) { return json::array({d.nx, d.ny, d.nz}); }

Dims3 dims_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()}; }

json schedule_json(const LinearScheduleConfig& s) {
  return {{"beta_start", s.beta_start}, {"beta_end", s.beta_end}, {"steps", s.steps}};
}

LinearScheduleConfig schedule_from(const json& j) {
  return {j.at("beta_start").get<double>(), j.at("beta_end").get<double>(), j.at("steps").get<int>()};
}

json config_json(const AsmmConfig& c) {
  return {{"in_dims", dims_json(c.in_dims)},
          {"base_channels", c.base_channels},
          {"channel_multipliers", c.channel_multipliers},
          {"age_embed_dim", c.age_embed_dim},
          {"time_embed_dim", c.time_embed_dim},
          {"attention_heads", c.attention_heads},
          {"age_tokens", c.age_tokens},
          {"independent_guide_encoder", c.independent_guide_encoder}};
}

AsmmConfig asmm_from(const json& j) {
  AsmmConfig c;
  c.in_dims = dims_from(j.at("in_dims"));
  c.base_channels = j.at("base_channels").get<int>();
  c.channel_multipliers = j.at("channel_multipliers").get<std::array<int, kUNetLevels>>();
  c.age_embed_dim = j.at("age_embed_dim").get<int>();
  c.time_embed_dim = j.at("time_embed_dim").get<int>();
  c.attention_heads = j.at("attention_heads").get<int>();
  c.age_tokens = j.at("age_tokens").get<int>();
  c.independent_guide_encoder = j.at("independent_guide_encoder").get<bool>();
  return c;
}

json config_json(const SrConfig& c) {
  return {{"low_dims", dims_json(c.low_dims)},
          {"base_channels", c.base_channels},
          {"channel_multipliers", c.channel_multipliers},
          {"time_embed_dim", c.time_embed_dim}};
}

SrConfig sr_from(const json& j) {
  SrConfig c;
  c.low_dims = dims_from(j.at("low_dims"));
  c.base_channels = j.at("base_channels").get<int>();
  c.channel_multipliers = j.at("channel_multipliers").get<std::array<int, kUNetLevels>>();
  c.time_embed_dim = j.at("time_embed_dim").get<int>();
  return c;
}

json manifest_json(const nn::ParamStore<float>& store) {
  json m = json::array();
  for (const auto& s : store.specs()) m.push_back({{"name", s.name}, {"shape", s.shape}});
  return m;
}

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

void write_file(const std::filesystem::path& path, StageKind kind, const json& config,
                const LinearScheduleConfig& schedule, const nn::ParamStore<float>& store) {
  if (!store.all_finite()) throw NumericalError("refusing to save non-finite weights");
  const json header = {{"kind", to_string(kind)},
                       {"config", config},
                       {"schedule", schedule_json(schedule)},
                       {"manifest", manifest_json(store)}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot open {} for writing", path.string()));
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(kind));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& d = store.value(i).data;
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(float)));
  }
  if (!out) throw Error(fmt::format("failed writing {}", path.string()));
}

struct RawCheckpoint {
  StageKind kind;
  json header;
  std::vector<char> payload;
};

std::uint32_t get_u32(const std::vector<char>& buf, std::size_t at) {
  std::uint32_t v = 0;
  std::memcpy(&v, buf.data() + at, 4);
  return v;
}

RawCheckpoint read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open checkpoint {}", path.string()));
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError(fmt::format("{} is not a checkpoint (bad magic)", path.string()));
  }
  if (get_u32(buf, 4) != kCheckpointVersion) {
    throw FormatError(fmt::format("{}: unsupported checkpoint version {}", path.string(), get_u32(buf, 4)));
  }
  const std::uint32_t kind = get_u32(buf, 8);
  if (kind != 1 && kind != 2) throw FormatError(fmt::format("{}: unknown stage kind {}", path.string(), kind));
  const std::size_t len = get_u32(buf, 12);
  if (16 + len > buf.size()) throw FormatError(fmt::format("{}: truncated header", path.string()));
  RawCheckpoint raw{static_cast<StageKind>(kind), {}, {}};
  try {
    raw.header = json::parse(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: bad header: {}", path.string(), e.what()));
  }
  raw.payload.assign(buf.begin() + 16 + static_cast<std::ptrdiff_t>(len), buf.end());
  return raw;
}

void fill_store(const std::filesystem::path& path, const RawCheckpoint& raw, nn::ParamStore<float>& store) {
  const json& manifest = raw.header.at("manifest");
  if (manifest != manifest_json(store)) {
    throw FormatError(fmt::format("{}: weight manifest does not match the stored configuration", path.string()));
  }
  std::size_t need = 0;
  for (std::size_t i = 0; i < store.size(); ++i) need += store.value(i).size() * sizeof(float);
  if (raw.payload.size() != need) {
    throw FormatError(fmt::format("{}: payload is {} bytes, manifest needs {}", path.string(), raw.payload.size(), need));
  }
  std::size_t at = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& d = store.value(i).data;
    std::memcpy(d.data(), raw.payload.data() + at, d.size() * sizeof(float));
    at += d.size() * sizeof(float);
  }
  if (!store.all_finite()) throw FormatError(fmt::format("{}: non-finite weights", path.string()));
  store.zero_grad();
}

template <class Stage, class ConfigFrom>
Stage load_stage(const std::filesystem::path& path, StageKind want, ConfigFrom&& config_from) {
  RawCheckpoint raw = read_file(path);
  if (raw.kind != want) {
    throw FormatError(fmt::format("{} holds a {} model, expected {}", path.string(), to_string(raw.kind),
                                  to_string(want)));
  }
  try {
    Stage stage{decltype(Stage::model)(config_from(raw.header.at("config"))), schedule_from(raw.header.at("schedule"))};
    fill_store(path, raw, stage.model.params());
    return stage;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: bad header: {}", path.string(), e.what()));
  } catch (const InvalidArgument& e) {
    throw FormatError(fmt::format("{}: invalid stored configuration: {}", path.string(), e.what()));
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const GenerateStage& stage) {
  write_file(path, StageKind::generate, config_json(stage.model.config()), stage.schedule, stage.model.params());
}

void save_checkpoint(const std::filesystem::path& path, const SrStage& stage) {
  write_file(path, StageKind::sr, config_json(stage.model.config()), stage.schedule, stage.model.params());
}

StageKind checkpoint_kind(const std::filesystem::path& path) { return read_file(path).kind; }

GenerateStage load_generate_checkpoint(const std::filesystem::path& path) {
  return load_stage<GenerateStage>(path, StageKind::generate, asmm_from);
}

SrStage load_sr_checkpoint(const std::filesystem::path& path) {
  return load_stage<SrStage>(path, StageKind::sr, sr_from);
}

}  // namespace volcomp
