#include "volcomp/volume_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <json.hpp>

#include "volcomp/errors.hpp"

namespace volcomp {

static_assert(std::endian::native == std::endian::little, "VOL3 I/O assumes a little-endian host");

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

void put_f32(std::string& buf, float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

std::uint32_t get_u32(const std::string& buf, std::size_t off) {
  std::uint32_t v;
  std::memcpy(&v, buf.data() + off, 4);
  return v;
}

float get_f32(const std::string& buf, std::size_t off) {
  float v;
  std::memcpy(&v, buf.data() + off, 4);
  return v;
}

}  // namespace

Volume3D read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open volume file " + path.string());
  }
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kVol3HeaderBytes || std::memcmp(buf.data(), kVol3Magic, 4) != 0) {
    throw FormatError(path.string() + ": not a VOL3 file (bad magic)");
  }
  const std::uint32_t version = get_u32(buf, 4);
  if (version != kVol3Version) {
    throw FormatError(fmt::format("{}: unsupported VOL3 version {}", path.string(), version));
  }
  const Dims3 dims{static_cast<int>(get_u32(buf, 8)), static_cast<int>(get_u32(buf, 12)),
                   static_cast<int>(get_u32(buf, 16))};
  if (!dims.positive() || get_u32(buf, 8) > (1u << 20) || get_u32(buf, 12) > (1u << 20) ||
      get_u32(buf, 16) > (1u << 20)) {
    throw FormatError(path.string() + ": invalid dims " + to_string(dims));
  }
  const Spacing3 spacing{get_f32(buf, 20), get_f32(buf, 24), get_f32(buf, 28)};
  const std::size_t payload = buf.size() - kVol3HeaderBytes;
  if (payload != dims.count() * 4) {
    throw FormatError(fmt::format("{}: payload is {} bytes, expected {}", path.string(), payload, dims.count() * 4));
  }
  std::vector<float> vox(dims.count());
  std::memcpy(vox.data(), buf.data() + kVol3HeaderBytes, payload);
  try {
    return Volume3D(dims, spacing, std::move(vox));
  } catch (const InvalidArgument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_volume(const Volume3D& v, const std::filesystem::path& path) {
  if (v.empty() || !v.dims().positive()) {
    throw InvalidArgument("refusing to write an empty volume");
  }
  for (float x : v.voxels()) {
    if (!std::isfinite(x)) throw InvalidArgument("refusing to write a volume with non-finite voxels");
  }
  std::string buf;
  buf.reserve(kVol3HeaderBytes + v.size() * 4);
  buf.append(kVol3Magic, 4);
  put_u32(buf, kVol3Version);
  put_u32(buf, static_cast<std::uint32_t>(v.dims().nx));
  put_u32(buf, static_cast<std::uint32_t>(v.dims().ny));
  put_u32(buf, static_cast<std::uint32_t>(v.dims().nz));
  put_f32(buf, static_cast<float>(v.spacing().sx));
  put_f32(buf, static_cast<float>(v.spacing().sy));
  put_f32(buf, static_cast<float>(v.spacing().sz));
  const auto vox = v.voxels();
  buf.append(reinterpret_cast<const char*>(vox.data()), vox.size() * 4);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError("cannot write volume file " + path.string());
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) {
    throw FormatError("short write to " + path.string());
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& volume_path) {
  auto p = volume_path;
  p.replace_extension(".meta.json");
  return p;
}

void write_sidecar(const ScanMeta& meta, const std::filesystem::path& volume_path) {
  const nlohmann::json j = {
      {"subject_id", meta.subject_id},
      {"age_months", meta.age_months},
      {"provenance", to_string(meta.provenance)},
  };
  std::ofstream out(sidecar_path(volume_path));
  if (!out) {
    throw FormatError("cannot write sidecar for " + volume_path.string());
  }
  out << j.dump(2) << '\n';
}

std::optional<ScanMeta> read_sidecar(const std::filesystem::path& volume_path) {
  const auto p = sidecar_path(volume_path);
  std::ifstream in(p);
  if (!in) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(in);
    return ScanMeta{j.at("subject_id").get<std::string>(), j.at("age_months").get<double>(),
                    provenance_from_string(j.at("provenance").get<std::string>())};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

ScanRecord read_scan(const std::filesystem::path& volume_path) {
  auto meta = read_sidecar(volume_path);
  if (!meta) {
    throw FormatError("missing sidecar " + sidecar_path(volume_path).string());
  }
  return ScanRecord(meta->subject_id, meta->age_months, read_volume(volume_path), meta->provenance);
}

void write_scan(const ScanRecord& scan, const std::filesystem::path& volume_path) {
  write_volume(scan.volume(), volume_path);
  write_sidecar({scan.subject_id(), scan.age_months(), scan.provenance()}, volume_path);
}

}  // namespace volcomp
