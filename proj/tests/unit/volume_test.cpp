#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "volcomp/cohort_io.hpp"
#include "volcomp/errors.hpp"
#include "volcomp/volume.hpp"
#include "volcomp/volume_io.hpp"

namespace volcomp {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("volcomp_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Volume, RejectsInconsistentConstruction) {
  EXPECT_THROW(Volume3D({0, 2, 2}, {}), InvalidArgument);
  EXPECT_THROW(Volume3D({2, 2, 2}, {1, 0, 1}), InvalidArgument);
  EXPECT_THROW(Volume3D({2, 2, 2}, {}, std::vector<float>(7)), InvalidArgument);
  std::vector<float> bad(8, 0.0f);
  bad[3] = std::nanf("");
  EXPECT_THROW(Volume3D({2, 2, 2}, {}, bad), InvalidArgument);
  const Volume3D ok({2, 2, 2}, {});
  EXPECT_THROW((void)ok.with_voxels([](std::span<float> v) { v[0] = INFINITY; }), InvalidArgument);
}

TEST(Volume, IndexIsXFastest) {
  std::vector<float> v(24);
  for (int i = 0; i < 24; ++i) v[i] = static_cast<float>(i);
  const Volume3D vol({2, 3, 4}, {}, v);
  EXPECT_EQ(vol.at(1, 0, 0), 1.0f);
  EXPECT_EQ(vol.at(0, 1, 0), 2.0f);
  EXPECT_EQ(vol.at(0, 0, 1), 6.0f);
  EXPECT_EQ(vol.at(1, 2, 3), 23.0f);
}

TEST(Resample, Down2MatchesBlockMean) {
  std::mt19937_64 gen(1);
  const Volume3D v = oracle::random_volume({8, 6, 10}, gen);
  const Volume3D d = resample_down2(v);
  const Volume3D ref = oracle::block_mean2(v);
  EXPECT_EQ(d.dims(), ref.dims());
  EXPECT_EQ(d.spacing(), ref.spacing());
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d.voxels()[i], ref.voxels()[i], 1e-6);
  EXPECT_THROW(resample_down2(oracle::random_volume({7, 6, 10}, gen)), InvalidArgument);
  const Volume3D c({4, 4, 4}, {}, 0.25f);
  EXPECT_EQ(resample_down2(c), Volume3D({2, 2, 2}, {2, 2, 2}, 0.25f));
}

TEST(Resample, UpsampleKeepsConstants) {
  const Volume3D c({3, 4, 5}, {2, 2, 2}, 0.6f);
  const Volume3D u = upsample_trilinear2(c);
  EXPECT_EQ(u.dims(), (Dims3{6, 8, 10}));
  EXPECT_EQ(u.spacing(), (Spacing3{1, 1, 1}));
  for (float x : u.voxels()) EXPECT_NEAR(x, 0.6f, 1e-6);
}

TEST(Normalize, MapsToUnitRange) {
  const Volume3D v({3, 1, 1}, {}, std::vector<float>{2.0f, 4.0f, 3.0f});
  const Volume3D n = normalize_intensity(v);
  EXPECT_EQ(n.voxels()[0], 0.0f);
  EXPECT_EQ(n.voxels()[1], 1.0f);
  EXPECT_NEAR(n.voxels()[2], 0.5f, 1e-7);
  EXPECT_THROW(normalize_intensity(Volume3D({2, 2, 2}, {}, 0.3f)), InvalidArgument);
}

TEST(CropPad, OddDifferencePutsExtraVoxelAfter) {
  const Volume3D v({3, 1, 1}, {}, std::vector<float>{1, 2, 3});
  const Volume3D padded = crop_pad_to(v, {6, 1, 1});
  EXPECT_EQ(std::vector<float>(padded.voxels().begin(), padded.voxels().end()), (std::vector<float>{0, 1, 2, 3, 0, 0}));
  const Volume3D cropped = crop_pad_to(padded, {3, 1, 1});
  EXPECT_EQ(cropped, v);
}

TEST(Cohort, KeepsScansSortedAndRejectsDuplicates) {
  LongitudinalCohort c({3, 6});
  c.insert(ScanRecord("a", 6, Volume3D({2, 2, 2}, {}), Provenance::observed));
  c.insert(ScanRecord("a", 3, Volume3D({2, 2, 2}, {}), Provenance::observed));
  EXPECT_EQ(c.series("a").front().age_months(), 3.0);
  EXPECT_THROW(c.insert(ScanRecord("a", 3, Volume3D({2, 2, 2}, {}), Provenance::observed)), InvalidArgument);
  EXPECT_THROW(ScanRecord("", 3, Volume3D({2, 2, 2}, {}), Provenance::observed), InvalidArgument);
  EXPECT_THROW(ScanRecord("a", 0, Volume3D({2, 2, 2}, {}), Provenance::observed), InvalidArgument);
  EXPECT_EQ(c.scan_count(), 2u);
  EXPECT_TRUE(c.find("a", 6).has_value());
  EXPECT_FALSE(c.find("a", 9).has_value());
}

TEST(VolumeIo, RoundTripIsExact) {
  const fs::path dir = scratch_dir("io");
  std::mt19937_64 gen(2);
  const Volume3D v = oracle::random_volume({5, 3, 4}, gen).with_voxels([](std::span<float>) {});
  const Volume3D spaced(v.dims(), {0.5, 0.75, 1.25}, std::vector<float>(v.voxels().begin(), v.voxels().end()));
  write_volume(spaced, dir / "a.vol");
  EXPECT_EQ(read_volume(dir / "a.vol"), spaced);
  EXPECT_EQ(fs::file_size(dir / "a.vol"), kVol3HeaderBytes + 4 * spaced.size());

  const ScanRecord s("sub001", 9.5, spaced, Provenance::generated);
  write_scan(s, dir / "s.vol");
  const ScanRecord back = read_scan(dir / "s.vol");
  EXPECT_EQ(back.subject_id(), "sub001");
  EXPECT_EQ(back.age_months(), 9.5);
  EXPECT_EQ(back.provenance(), Provenance::generated);
  EXPECT_EQ(back.volume(), spaced);
}

TEST(VolumeIo, RejectsCorruptFiles) {
  const fs::path dir = scratch_dir("io_bad");
  write_volume(Volume3D({2, 2, 2}, {}, 0.5f), dir / "ok.vol");
  {
    std::ifstream in(dir / "ok.vol", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(dir / "short.vol", std::ios::binary) << bytes.substr(0, bytes.size() - 1);
    std::string magic = bytes;
    magic[0] = 'X';
    std::ofstream(dir / "magic.vol", std::ios::binary) << magic;
    std::string version = bytes;
    version[4] = 9;
    std::ofstream(dir / "version.vol", std::ios::binary) << version;
  }
  EXPECT_THROW(read_volume(dir / "short.vol"), FormatError);
  EXPECT_THROW(read_volume(dir / "magic.vol"), FormatError);
  EXPECT_THROW(read_volume(dir / "version.vol"), FormatError);
  EXPECT_THROW(read_volume(dir / "missing.vol"), FormatError);
  EXPECT_THROW(read_scan(dir / "ok.vol"), FormatError);  // no sidecar
}

TEST(CohortIo, RoundTripKeepsFlagsAndTruth) {
  const fs::path dir = scratch_dir("cohort");
  const ScanRecord a("sub000", 3, Volume3D({2, 2, 2}, {}, 0.1f), Provenance::observed);
  const ScanRecord b("sub000", 6, Volume3D({2, 2, 2}, {}, 0.2f), Provenance::observed);
  const ScanRecord c("sub001", 3, Volume3D({2, 2, 2}, {}, 0.3f), Provenance::observed);
  write_cohort(dir, {{&a, false, TissueVolumes{1, 2, 3}}, {&b, true, std::nullopt}, {&c, false, std::nullopt}},
               {3, 6});
  const CohortOnDisk back = read_cohort(dir);
  EXPECT_EQ(back.manifest.age_grid, (std::vector<double>{3, 6}));
  EXPECT_EQ(back.available.scan_count(), 2u);
  ASSERT_EQ(back.held_out.size(), 1u);
  EXPECT_EQ(back.held_out[0].volume(), b.volume());
  const CohortEntry* e = back.manifest.find("sub000", 3);
  ASSERT_NE(e, nullptr);
  EXPECT_EQ(e->file, scan_file_name("sub000", 3));
  ASSERT_TRUE(e->truth_volumes.has_value());
  EXPECT_EQ((*e->truth_volumes)[2], 3.0);
  EXPECT_THROW(read_cohort(dir / "nope"), FormatError);
}

}  // namespace
}  // namespace volcomp
