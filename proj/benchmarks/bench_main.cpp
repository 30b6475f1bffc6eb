#include <benchmark/benchmark.h>

#include "volcomp/diffusion.hpp"
#include "volcomp/metrics.hpp"
#include "volcomp/nn/ops.hpp"
#include "volcomp/nn/params.hpp"
#include "volcomp/nn/tape.hpp"
#include "volcomp/phantom.hpp"
#include "volcomp/pipeline.hpp"
#include "volcomp/rng.hpp"

namespace {

using namespace volcomp;

nn::Tensor<float> random_tensor(std::vector<int> shape, std::uint64_t seed) {
  nn::Tensor<float> t(std::move(shape));
  Rng r(seed);
  for (float& x : t.data) x = static_cast<float>(r.normal());
  return t;
}

// args: channels, cubic edge
void BM_Conv3dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1));
  const auto x = random_tensor({c, n, n, n}, 1), w = random_tensor({c, c, 3, 3, 3}, 2), b = random_tensor({c}, 3);
  for (auto _ : state) {
    nn::Tape<float> tape(false);
    const nn::Var y = nn::conv3d(tape, tape.constant(x), tape.constant(w), tape.constant(b));
    benchmark::DoNotOptimize(tape.value(y).data.data());
  }
  state.SetItemsProcessed(state.iterations() * c * c * 27LL * n * n * n);
}
BENCHMARK(BM_Conv3dForward)->Args({8, 16})->Args({16, 16})->Args({32, 8})->Unit(benchmark::kMicrosecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1));
  nn::ParamStore<float> store;
  store.add({"w", {c, c, 3, 3, 3}, nn::Init::fan_in_uniform, c * 27});
  store.add({"b", {c}, nn::Init::zeros, 1});
  store.initialize(4);
  const auto x = random_tensor({c, n, n, n}, 5);
  for (auto _ : state) {
    store.zero_grad();
    nn::Tape<float> tape(true);
    const nn::Var y = nn::conv3d(tape, tape.constant(x), tape.parameter(store, 0), tape.parameter(store, 1));
    tape.backward(nn::mse(tape, y, tape.constant(x)));
  }
}
BENCHMARK(BM_Conv3dBackward)->Args({8, 16})->Args({16, 16})->Unit(benchmark::kMicrosecond);

void BM_Ssim3d(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng r(6);
  auto fill = [&r](std::span<float> v) {
    for (float& x : v) x = static_cast<float>(r.uniform());
  };
  const Volume3D a = Volume3D({n, n, n}, {}).with_voxels(fill), b = Volume3D({n, n, n}, {}).with_voxels(fill);
  for (auto _ : state) benchmark::DoNotOptimize(ssim3d(a, b));
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Ssim3d)->Arg(20)->Arg(40)->Unit(benchmark::kMillisecond);

// Sampler overhead alone: the predictor returns zeros.
void BM_DdimSampleZeroEps(benchmark::State& state) {
  const NoiseSchedule sched = kGenerateSchedule.make();
  SamplerOptions opts;
  opts.steps = static_cast<int>(state.range(0));
  const std::size_t n = 20 * 24 * 20;
  const EpsPredictor zero = [n](std::span<const double>, int) { return std::vector<double>(n, 0.0); };
  for (auto _ : state) benchmark::DoNotOptimize(ddim_sample(zero, n, sched, opts, 7));
}
BENCHMARK(BM_DdimSampleZeroEps)->Arg(50)->Arg(250)->Unit(benchmark::kMillisecond);

void BM_GenerateTrainStep(benchmark::State& state) {
  PhantomConfig pc;
  pc.n_subjects = 2;
  const PhantomCohort ph = generate_cohort(pc, GrowthLaw{});
  AsmmConfig ac;
  ac.base_channels = static_cast<int>(state.range(0));
  TrainConfig tc = TrainConfig::defaults_for(StageKind::generate);
  tc.max_steps = 1;
  const LongitudinalCohort low = downsample_cohort(ph.cohort);
  for (auto _ : state) benchmark::DoNotOptimize(train_generate(low, ac, tc));
}
BENCHMARK(BM_GenerateTrainStep)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
