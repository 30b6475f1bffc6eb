#include "volcomp/cohort_io.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "volcomp/errors.hpp"
#include "volcomp/volume_io.hpp"

namespace volcomp {

using json = nlohmann::json;

const CohortEntry* CohortManifest::find(const std::string& subject_id, double age_months) const {
  for (const auto& e : entries) {
    if (e.subject_id == subject_id && std::abs(e.age_months - age_months) <= kAgeTolerance) return &e;
  }
  return nullptr;
}

std::string scan_file_name(const std::string& subject_id, double age_months) {
  return fmt::format("{}_m{:05.2f}.vol", subject_id, age_months);
}

void write_cohort(const std::filesystem::path& dir, const std::vector<CohortItem>& items,
                  const std::vector<double>& age_grid) {
  json scans = json::array();
  for (const auto& item : items) {
    const ScanRecord& s = *item.scan;
    const std::string file = scan_file_name(s.subject_id(), s.age_months());
    write_scan(s, dir / file);
    json e = {{"subject_id", s.subject_id()},
              {"age_months", s.age_months()},
              {"file", file},
              {"held_out", item.held_out},
              {"provenance", to_string(s.provenance())}};
    if (item.truth_volumes) {
      json tv = json::object();
      for (Tissue t : kTissues) tv[to_string(t)] = (*item.truth_volumes)[static_cast<std::size_t>(t)];
      e["truth_volumes_mm3"] = tv;
    }
    scans.push_back(std::move(e));
  }
  const json doc = {{"age_grid", age_grid}, {"scans", scans}};
  std::ofstream out(dir / kCohortManifestName);
  if (!out) throw Error(fmt::format("cannot write {}", (dir / kCohortManifestName).string()));
  out << doc.dump(2) << '\n';
}

CohortManifest read_cohort_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kCohortManifestName;
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("missing cohort manifest {}", path.string()));
  CohortManifest m;
  try {
    const json doc = json::parse(in);
    m.age_grid = doc.at("age_grid").get<std::vector<double>>();
    for (const auto& e : doc.at("scans")) {
      CohortEntry c;
      c.subject_id = e.at("subject_id").get<std::string>();
      c.age_months = e.at("age_months").get<double>();
      c.file = e.at("file").get<std::string>();
      c.held_out = e.at("held_out").get<bool>();
      c.provenance = provenance_from_string(e.at("provenance").get<std::string>());
      if (e.contains("truth_volumes_mm3")) {
        TissueVolumes tv{};
        for (Tissue t : kTissues) tv[static_cast<std::size_t>(t)] = e.at("truth_volumes_mm3").at(to_string(t)).get<double>();
        c.truth_volumes = tv;
      }
      m.entries.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const InvalidArgument& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return m;
}

CohortOnDisk read_cohort(const std::filesystem::path& dir) {
  CohortOnDisk out;
  out.manifest = read_cohort_manifest(dir);
  out.available = LongitudinalCohort(out.manifest.age_grid);
  for (const auto& e : out.manifest.entries) {
    ScanRecord s = read_scan(dir / e.file);
    if (s.subject_id() != e.subject_id || std::abs(s.age_months() - e.age_months) > kAgeTolerance) {
      throw FormatError(fmt::format("{}: sidecar disagrees with cohort.json", e.file));
    }
    if (e.held_out) {
      out.held_out.push_back(std::move(s));
    } else {
      out.available.insert(std::move(s));
    }
  }
  return out;
}

}  // namespace volcomp
