#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <utility>

#include "oracles.hpp"
#include "volcomp/errors.hpp"
#include "volcomp/nn/ops.hpp"
#include "volcomp/nn/optim.hpp"

namespace volcomp::nn {
namespace {

using Inputs = std::vector<Var>;
using Graph = std::function<Var(Tape<double>&, const Inputs&)>;

std::vector<double> uniform(std::size_t n, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(gen);
  return v;
}

ParamStore<double> make_store(const std::vector<std::vector<int>>& shapes, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  ParamStore<double> s;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    s.add({"p" + std::to_string(i), shapes[i], Init::zeros, 1});
    const auto u = uniform(s.value(i).data.size(), gen);
    s.value(i).data.assign(u.begin(), u.end());
  }
  s.zero_grad();
  return s;
}

Var build(Tape<double>& tape, ParamStore<double>& store, const Graph& g, bool track) {
  Inputs in;
  for (std::size_t i = 0; i < store.size(); ++i)
    in.push_back(track ? tape.parameter(store, i) : tape.parameter(std::as_const(store), i));
  return g(tape, in);
}

// Loss = mean((y - target)^2) with a fixed random target; compares every
// parameter gradient with central differences.
double max_grad_error(ParamStore<double>& store, const Graph& g, std::uint64_t seed = 1) {
  Tensor<double> target;
  {
    Tape<double> probe(false);
    const Var y = build(probe, store, g, false);
    std::mt19937_64 gen(seed);
    target = Tensor<double>(probe.value(y).shape, uniform(probe.value(y).data.size(), gen));
  }
  auto loss_at = [&] {
    Tape<double> tape(false);
    const Var y = build(tape, store, g, false);
    double s = 0;
    const auto& v = tape.value(y).data;
    for (std::size_t i = 0; i < v.size(); ++i) s += (v[i] - target.data[i]) * (v[i] - target.data[i]);
    return s / static_cast<double>(v.size());
  };
  store.zero_grad();
  {
    Tape<double> tape;
    const Var y = build(tape, store, g, true);
    tape.backward(mse(tape, y, tape.constant(target)));
  }
  double worst = 0;
  const double h = 1e-6;
  for (std::size_t p = 0; p < store.size(); ++p) {
    for (std::size_t i = 0; i < store.value(p).data.size(); ++i) {
      double& w = store.value(p).data[i];
      const double keep = w;
      w = keep + h;
      const double up = loss_at();
      w = keep - h;
      const double down = loss_at();
      w = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = store.grad(p).data[i];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
    }
  }
  return worst;
}

constexpr double kGradTol = 1e-5;

// ---- forward values against direct loops ----

struct ConvCase {
  int cin, cout, k, nx, ny, nz;
};

class ConvForward : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvForward, MatchesDirectLoop) {
  const ConvCase c = GetParam();
  std::mt19937_64 gen(c.cin * 100 + c.k);
  const oracle::Grid g{c.cin, c.nx, c.ny, c.nz};
  const auto x = uniform(g.size(), gen);
  const auto w = uniform(static_cast<std::size_t>(c.cout) * c.cin * c.k * c.k * c.k, gen);
  const auto b = uniform(c.cout, gen);
  Tape<double> tape(false);
  const Var y = conv3d(tape, tape.constant({{c.cin, c.nx, c.ny, c.nz}, x}),
                       tape.constant({{c.cout, c.cin, c.k, c.k, c.k}, w}), tape.constant({{c.cout}, b}));
  const auto ref = oracle::conv3d_same(x, g, w, b, c.cout, c.k);
  ASSERT_EQ(tape.value(y).shape, (std::vector<int>{c.cout, c.nx, c.ny, c.nz}));
  for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(tape.value(y).data[i], ref[i], 1e-10) << i;
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvForward,
                         ::testing::Values(ConvCase{1, 1, 3, 4, 5, 6}, ConvCase{3, 2, 3, 5, 4, 3},
                                           ConvCase{2, 4, 1, 6, 5, 4}, ConvCase{2, 3, 5, 6, 7, 5},
                                           // more voxels than one column tile
                                           ConvCase{2, 3, 3, 18, 17, 16}, ConvCase{1, 2, 3, 1, 1, 1}));

TEST(ConvTranspose, MatchesScatterDefinition) {
  struct Case {
    int cin, cout, k, stride, pad, n;
  };
  for (const Case c : {Case{2, 3, 2, 2, 0, 3}, Case{1, 1, 4, 2, 1, 4}, Case{3, 2, 3, 1, 1, 3}}) {
    std::mt19937_64 gen(c.k * 10 + c.stride);
    const oracle::Grid g{c.cin, c.n, c.n + 1, c.n};
    const auto x = uniform(g.size(), gen);
    const auto w = uniform(static_cast<std::size_t>(c.cin) * c.cout * c.k * c.k * c.k, gen);
    const auto b = uniform(c.cout, gen);
    oracle::Grid og{};
    const auto ref = oracle::conv_transpose3d(x, g, w, b, c.cout, c.k, c.stride, c.pad, &og);
    Tape<double> tape(false);
    const Var y = conv_transpose3d(tape, tape.constant({{c.cin, g.nx, g.ny, g.nz}, x}),
                                   tape.constant({{c.cin, c.cout, c.k, c.k, c.k}, w}), tape.constant({{c.cout}, b}),
                                   c.stride, c.pad);
    ASSERT_EQ(tape.value(y).shape, (std::vector<int>{c.cout, og.nx, og.ny, og.nz}));
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(tape.value(y).data[i], ref[i], 1e-10);
  }
}

TEST(AvgPool, MatchesBlockMean) {
  std::mt19937_64 gen(3);
  const Volume3D v = oracle::random_volume({6, 4, 8}, gen);
  const Volume3D ref = oracle::block_mean2(v);
  Tape<double> tape(false);
  std::vector<double> data(v.voxels().begin(), v.voxels().end());
  const Var y = avg_pool2(tape, tape.constant({{1, 6, 4, 8}, data}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(tape.value(y).data[i], ref.voxels()[i], 1e-6);
  EXPECT_THROW(avg_pool2(tape, tape.constant(Tensor<double>({1, 3, 4, 4}))), InvalidArgument);
}

TEST(GroupNorm, NormalizesEachGroup) {
  std::mt19937_64 gen(4);
  const std::vector<int> shape{4, 3, 3, 2};
  Tape<double> tape(false);
  const Var x = tape.constant({shape, uniform(72, gen, 2.0, 5.0)});
  const Var y = group_norm(tape, x, tape.constant(Tensor<double>({4}, 1.0)), tape.constant(Tensor<double>({4}, 0.0)), 2);
  const auto& v = tape.value(y).data;
  for (int g = 0; g < 2; ++g) {
    double s = 0, ss = 0;
    for (int i = 0; i < 36; ++i) s += v[g * 36 + i];
    for (int i = 0; i < 36; ++i) ss += (v[g * 36 + i] - s / 36) * (v[g * 36 + i] - s / 36);
    EXPECT_NEAR(s / 36, 0.0, 1e-12);
    EXPECT_NEAR(ss / 36, 1.0, 1e-3);  // eps keeps it slightly below 1
  }
  EXPECT_THROW(group_norm(tape, x, x, x, 3), InvalidArgument);
}

TEST(Softmax, RowsSumToOne) {
  Tape<double> tape(false);
  const Var y = softmax_rows(tape, tape.constant({{2, 3}, {1000.0, 1001.0, 1002.0, -1.0, 0.0, 1.0}}));
  const auto& v = tape.value(y).data;
  EXPECT_NEAR(v[0] + v[1] + v[2], 1.0, 1e-12);
  EXPECT_NEAR(v[2], std::exp(2.0) / (1 + std::exp(1.0) + std::exp(2.0)), 1e-12);
  EXPECT_NEAR(v[0], v[3], 1e-12);
}

TEST(Matmul, TransposeCombinations) {
  Tape<double> tape(false);
  const Var a = tape.constant({{2, 3}, {1, 2, 3, 4, 5, 6}});
  const Var b = tape.constant({{3, 2}, {1, 0, 0, 1, 1, 1}});
  EXPECT_EQ(tape.value(matmul(tape, a, b)).data, (Buffer<double>{4, 5, 10, 11}));
  EXPECT_EQ(tape.value(matmul(tape, b, a, true, true)).data, (Buffer<double>{4, 10, 5, 11}));
  EXPECT_THROW(matmul(tape, a, a), InvalidArgument);
}

TEST(CropPad, PlacementMatchesVolumeRule) {
  std::mt19937_64 gen(5);
  const Volume3D v = oracle::random_volume({5, 6, 4}, gen);
  const Dims3 target{4, 8, 3};
  const Volume3D ref = crop_pad_to(v, target);
  Tape<double> tape(false);
  const Var y = crop_pad(tape, tape.constant({{1, 5, 6, 4}, std::vector<double>(v.voxels().begin(), v.voxels().end())}),
                         target);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(tape.value(y).data[i], ref.voxels()[i], 1e-7);
}

TEST(Conv, FloatAgreesWithDouble) {
  std::mt19937_64 gen(6);
  const auto x = uniform(2 * 6 * 5 * 4, gen), w = uniform(3 * 2 * 27, gen), b = uniform(3, gen);
  auto run = [&]<class T>(T) {
    Tape<T> tape(false);
    const Var y = conv3d(tape, tape.constant(cast<T>(Tensor<double>({2, 6, 5, 4}, x))),
                         tape.constant(cast<T>(Tensor<double>({3, 2, 3, 3, 3}, w))),
                         tape.constant(cast<T>(Tensor<double>({3}, b))));
    return cast<double>(tape.value(y)).data;
  };
  const auto d = run(0.0), f = run(0.0f);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d[i], f[i], 1e-5);
}

// ---- gradients against central differences ----

TEST(Gradient, Conv3d) {
  for (int k : {1, 3}) {
    auto s = make_store({{2, 4, 3, 5}, {3, 2, k, k, k}, {3}}, 10 + k);
    EXPECT_LT(max_grad_error(s, [](Tape<double>& t, const Inputs& in) { return conv3d(t, in[0], in[1], in[2]); }),
              kGradTol)
        << "k=" << k;
  }
}

TEST(Gradient, ConvTranspose) {
  for (auto [k, stride, pad] : {std::tuple{2, 2, 0}, {4, 2, 1}}) {
    auto s = make_store({{2, 3, 2, 3}, {2, 3, k, k, k}, {3}}, 20 + k);
    EXPECT_LT(max_grad_error(s,
                             [&](Tape<double>& t, const Inputs& in) {
                               return conv_transpose3d(t, in[0], in[1], in[2], stride, pad);
                             }),
              kGradTol);
  }
}

TEST(Gradient, PoolNormActivation) {
  auto s = make_store({{4, 4, 2, 2}, {4}, {4}}, 30);
  EXPECT_LT(max_grad_error(s,
                           [](Tape<double>& t, const Inputs& in) {
                             return silu(t, avg_pool2(t, group_norm(t, in[0], in[1], in[2], 2)));
                           }),
            kGradTol);
}

TEST(Gradient, ChannelOps) {
  auto s = make_store({{2, 3, 2, 2}, {1, 3, 2, 2}, {3}}, 40);
  EXPECT_LT(max_grad_error(s,
                           [](Tape<double>& t, const Inputs& in) {
                             const Var c = concat_channels(t, {in[0], in[1]});
                             const Var b = add_channel_bias(t, c, in[2]);
                             return crop_pad(t, add(t, b, scale(t, c, 0.5)), Dims3{4, 1, 3});
                           }),
            kGradTol);
}

TEST(Gradient, DenseOps) {
  auto s = make_store({{4}, {3, 4}, {3}, {3, 5}, {5, 3}}, 50);
  EXPECT_LT(max_grad_error(s,
                           [](Tape<double>& t, const Inputs& in) {
                             const Var h = linear(t, in[0], in[1], in[2]);   // {3}
                             const Var row = reshape(t, h, {1, 3});
                             const Var q = matmul(t, row, in[3]);              // {1, 5}
                             const Var a = softmax_rows(t, matmul(t, in[4], in[3], false, false));  // {5, 5}
                             const Var at = transpose(t, a);
                             return matmul(t, q, at, false, true);             // {1, 5}
                           }),
            kGradTol);
  auto s2 = make_store({{3, 2}, {4, 3}}, 51);
  EXPECT_LT(max_grad_error(s2,
                           [](Tape<double>& t, const Inputs& in) { return matmul(t, in[0], in[1], true, true); }),
            kGradTol);
}

TEST(Tape, ConstStoreDoesNotAccumulate) {
  auto s = make_store({{3}}, 60);
  Tape<double> tape;
  const Var p = tape.parameter(std::as_const(s), 0);
  tape.backward(mse(tape, p, tape.constant(Tensor<double>({3}, 0.0))));
  for (double g : s.grad(0).data) EXPECT_EQ(g, 0.0);
}

TEST(Params, InitializationIsDeterministic) {
  auto make = [] {
    ParamStore<float> s;
    s.add({"w", {4, 3, 3, 3, 3}, Init::fan_in_uniform, 81});
    s.add({"g", {4}, Init::ones, 1});
    s.add({"b", {4}, Init::zeros, 1});
    return s;
  };
  auto a = make(), b = make();
  a.initialize(5);
  b.initialize(5);
  EXPECT_EQ(a.value(0), b.value(0));
  const float bound = 1.0f / 9.0f;
  for (float v : a.value(0).data) EXPECT_LE(std::abs(v), bound);
  for (float v : a.value(1).data) EXPECT_EQ(v, 1.0f);
  for (float v : a.value(2).data) EXPECT_EQ(v, 0.0f);
  b.initialize(6);
  EXPECT_NE(a.value(0), b.value(0));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore<double> s;
  s.add({"w", {3}, Init::zeros, 1});
  s.value(0).data = {1.0, -2.0, 0.5};
  s.grad(0).data = {0.1, -0.2, 0.0};
  Adam<double> opt(s, {0.01, 0.9, 0.999, 1e-8, 0.0});
  const double norm = opt.step(s);
  EXPECT_NEAR(norm, std::sqrt(0.05), 1e-12);
  // Bias-corrected first step is lr * sign(g).
  EXPECT_NEAR(s.value(0).data[0], 0.99, 1e-6);
  EXPECT_NEAR(s.value(0).data[1], -1.99, 1e-6);
  EXPECT_NEAR(s.value(0).data[2], 0.5, 1e-12);
}

TEST(Adam, ClipsGlobalNormAndRejectsNaN) {
  ParamStore<double> s;
  s.add({"w", {2}, Init::zeros, 1});
  s.grad(0).data = {30.0, 40.0};
  Adam<double> opt(s, {0.01, 0.9, 0.999, 1e-8, 1.0});
  EXPECT_NEAR(opt.step(s), 50.0, 1e-12);
  s.grad(0).data = {std::nan(""), 0.0};
  EXPECT_THROW(opt.step(s), NumericalError);
}

}  // namespace
}  // namespace volcomp::nn
