#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "volcomp/asmm.hpp"
#include "volcomp/checkpoint.hpp"
#include "volcomp/errors.hpp"
#include "volcomp/rng.hpp"
#include "volcomp/sr.hpp"
#include "volcomp/unet.hpp"

namespace volcomp {
namespace {

namespace fs = std::filesystem;

AsmmConfig tiny_asmm(bool independent = true) {
  AsmmConfig c;
  c.in_dims = {6, 8, 5};
  c.base_channels = 2;
  c.channel_multipliers = {1, 2, 2, 2};
  c.time_embed_dim = 8;
  c.age_embed_dim = 8;
  c.age_tokens = 2;
  c.attention_heads = 2;
  c.independent_guide_encoder = independent;
  return c;
}

SrConfig tiny_sr() {
  SrConfig c;
  c.low_dims = {4, 5, 3};
  c.base_channels = 2;
  c.channel_multipliers = {1, 1, 2, 2};
  c.time_embed_dim = 8;
  return c;
}

std::vector<double> normal_vec(std::size_t n, std::uint64_t seed) {
  Rng r(seed);
  std::vector<double> v(n);
  for (double& x : v) x = r.normal();
  return v;
}

TEST(Encoding, InterleavedSinCos) {
  const auto e = time_encoding(37, 8);
  ASSERT_EQ(e.size(), 8u);
  for (int i = 0; i < 4; ++i) {
    const double f = std::pow(kTimeMaxPeriod, -2.0 * i / 8.0);
    EXPECT_NEAR(e[2 * i], std::sin(37 * f), 1e-12);
    EXPECT_NEAR(e[2 * i + 1], std::cos(37 * f), 1e-12);
  }
  EXPECT_NE(age_encoding(3.0, 8), age_encoding(6.0, 8));
  EXPECT_THROW(age_encoding(0.0, 8), InvalidArgument);
}

TEST(UNet, PadsToMultipleOfSixteen) {
  EXPECT_EQ(unet_padded_dims({20, 24, 20}), (Dims3{32, 32, 32}));
  EXPECT_EQ(unet_padded_dims({16, 17, 1}), (Dims3{16, 32, 16}));
  EXPECT_EQ(norm_groups(12, 8), 4);
  EXPECT_EQ(norm_groups(16, 8), 8);
  EXPECT_EQ(norm_groups(3, 8), 1);
}

TEST(Asmm, OutputLayerStartsAtZero) {
  AsmmModel<float> m(tiny_asmm());
  m.initialize(3);
  const auto x = normal_vec(m.dims().count(), 1);
  const Volume3D guide(m.dims(), {}, 0.5f);
  const auto eps = m.predict_eps(x, 100, {guide, 6.0});
  ASSERT_EQ(eps.size(), x.size());
  for (double e : eps) EXPECT_EQ(e, 0.0);
}

TEST(Asmm, RejectsBadGuidance) {
  AsmmModel<float> m(tiny_asmm());
  m.initialize(3);
  const auto x = normal_vec(m.dims().count(), 1);
  EXPECT_THROW((void)m.predict_eps(x, 1, {Volume3D({6, 8, 4}, {}), 6.0}), InvalidArgument);
  EXPECT_THROW((void)m.predict_eps(x, 1, {Volume3D(m.dims(), {}), -1.0}), InvalidArgument);
}

TEST(Asmm, AgeChangesPrediction) {
  AsmmModel<double> m(tiny_asmm());
  m.params().randomize(4);
  const auto x = normal_vec(m.dims().count(), 2);
  const auto g = normal_vec(m.dims().count(), 3);
  EXPECT_NE(m.predict_eps_raw(x, 10, g, 3.0), m.predict_eps_raw(x, 10, g, 12.0));
  EXPECT_NE(m.predict_eps_raw(x, 10, g, 3.0), m.predict_eps_raw(x, 11, g, 3.0));
}

TEST(Asmm, SharedEncoderVariantHasFewerWeights) {
  AsmmModel<float> full(tiny_asmm(true)), shared(tiny_asmm(false));
  EXPECT_LT(shared.params().scalar_count(), full.params().scalar_count());
}

class AsmmGradient : public ::testing::TestWithParam<bool> {};

TEST_P(AsmmGradient, MatchesFiniteDifferences) {
  AsmmModel<double> m(tiny_asmm(GetParam()));
  m.params().randomize(5);
  const GradCheckBatch batch = random_grad_check_batch(m.config(), 6);
  const GradCheckResult r = loss_gradient_check(m, batch, 40, 7);
  EXPECT_LT(r.max_rel_error, 1e-3);
  EXPECT_EQ(r.analytic.size(), 40u);
}

INSTANTIATE_TEST_SUITE_P(Variants, AsmmGradient, ::testing::Values(true, false));

TEST(Sr, UpsampleStartsAsLinearInterpolation) {
  SrModel<double> m(tiny_sr());
  m.initialize(1);
  const std::vector<double> flat(m.low_dims().count(), 0.4);
  const auto up = m.upsample_cond(flat);
  const Dims3 h = m.high_dims();
  ASSERT_EQ(up.size(), h.count());
  // Away from the border every output voxel sums weights 1.
  for (int z = 1; z + 1 < h.nz; ++z)
    for (int y = 1; y + 1 < h.ny; ++y)
      for (int x = 1; x + 1 < h.nx; ++x) EXPECT_NEAR(up[x + h.nx * (y + h.ny * z)], 0.4, 1e-12);
}

TEST(Sr, GradientMatchesFiniteDifferences) {
  SrModel<double> m(tiny_sr());
  m.params().randomize(8);
  const Dims3 lo = m.low_dims(), hi = m.high_dims();
  const auto x = normal_vec(hi.count(), 9), z = normal_vec(lo.count(), 10), eps = normal_vec(hi.count(), 11);
  const int t = 250;
  auto loss = [&] {
    const auto e = m.predict_eps(x, t, z);
    double s = 0;
    for (std::size_t i = 0; i < e.size(); ++i) s += (e[i] - eps[i]) * (e[i] - eps[i]);
    return s / static_cast<double>(e.size());
  };
  auto& store = m.params();
  store.zero_grad();
  {
    nn::Tape<double> tape;
    auto as_tensor = [](const std::vector<double>& v, Dims3 d) {
      return nn::Tensor<double>({1, d.nx, d.ny, d.nz}, v);
    };
    const nn::Var out = m.forward(tape, tape.constant(as_tensor(x, hi)), t, tape.constant(as_tensor(z, lo)));
    tape.backward(nn::mse(tape, out, tape.constant(as_tensor(eps, hi))));
  }
  Rng pick(12);
  double worst = 0;
  const double h = 1e-3;
  for (int p = 0; p < 32; ++p) {
    // Always include the learned upsampling weights.
    const std::size_t ti = p < 4 ? m.upsample_weight_index() : pick.below(store.size());
    const std::size_t ei = pick.below(store.value(ti).data.size());
    double& w = store.value(ti).data[ei];
    const double w0 = w;
    w = w0 + h;
    const double up = loss();
    w = w0 - h;
    const double down = loss();
    w = w0;
    const double numeric = (up - down) / (2 * h), analytic = store.grad(ti).data[ei];
    worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
  }
  EXPECT_LT(worst, 1e-3);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("volcomp_ckpt_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Checkpoint, GenerateRoundTrip) {
  const fs::path dir = scratch("gen");
  GenerateStage s{AsmmModel<float>(tiny_asmm()), {1e-4, 5e-3, 40}};
  s.model.params().randomize(13);
  save_checkpoint(dir / "g.vckp", s);
  EXPECT_EQ(checkpoint_kind(dir / "g.vckp"), StageKind::generate);
  const GenerateStage back = load_generate_checkpoint(dir / "g.vckp");
  EXPECT_EQ(back.schedule, s.schedule);
  EXPECT_EQ(back.model.config(), s.model.config());
  for (std::size_t i = 0; i < s.model.params().size(); ++i)
    EXPECT_EQ(back.model.params().value(i), s.model.params().value(i)) << s.model.params().spec(i).name;
  EXPECT_THROW(load_sr_checkpoint(dir / "g.vckp"), FormatError);
}

TEST(Checkpoint, SrRoundTripAndCorruption) {
  const fs::path dir = scratch("sr");
  SrStage s{SrModel<float>(tiny_sr()), kSrSchedule};
  s.model.params().randomize(14);
  save_checkpoint(dir / "s.vckp", s);
  const SrStage back = load_sr_checkpoint(dir / "s.vckp");
  for (std::size_t i = 0; i < s.model.params().size(); ++i)
    EXPECT_EQ(back.model.params().value(i), s.model.params().value(i));
  EXPECT_THROW(load_generate_checkpoint(dir / "s.vckp"), FormatError);

  std::ifstream in(dir / "s.vckp", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(dir / "short.vckp", std::ios::binary) << bytes.substr(0, bytes.size() - 4);
  EXPECT_THROW(load_sr_checkpoint(dir / "short.vckp"), FormatError);
  std::ofstream(dir / "junk.vckp", std::ios::binary) << "not a checkpoint";
  EXPECT_THROW(load_sr_checkpoint(dir / "junk.vckp"), FormatError);
  // Same architecture family, different widths: the manifest no longer matches.
  std::string edited = bytes;
  const auto pos = edited.find("\"base_channels\":2");
  ASSERT_NE(pos, std::string::npos);
  edited[pos + 16] = '3';
  std::ofstream(dir / "edited.vckp", std::ios::binary) << edited;
  EXPECT_THROW(load_sr_checkpoint(dir / "edited.vckp"), FormatError);
}

}  // namespace
}  // namespace volcomp
