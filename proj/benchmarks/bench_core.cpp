#include <benchmark/benchmark.h>

#include <spikingformer/audit.hpp>
#include <spikingformer/model.hpp>
#include <spikingformer/ops.hpp>
#include <spikingformer/train.hpp>

using namespace spkf;

namespace {

Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = Real(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v));
}

Tensor binary(Rng& rng, Shape shape, double p) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform() < p ? Real(1) : Real(0);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

// args: channels, spatial size
static void BM_Conv2d3x3(benchmark::State& state) {
  const auto C = std::size_t(state.range(0)), S = std::size_t(state.range(1));
  Rng rng(1);
  const Tensor x = binary(rng, {8, C, S, S}, 0.2), k = uniform(rng, {C, C, 3, 3}, -0.1, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, nullptr, 1, 1));
  state.SetItemsProcessed(state.iterations() * std::int64_t(8 * C * C * S * S * 9));
}
BENCHMARK(BM_Conv2d3x3)->Args({32, 16})->Args({64, 8})->Args({128, 8});

// args: dim, tokens per side, heads
static void BM_AttentionCore(benchmark::State& state) {
  const auto D = std::size_t(state.range(0)), S = std::size_t(state.range(1)), H = std::size_t(state.range(2));
  Rng rng(2);
  const Tensor q = binary(rng, {8, D, S, S}, 0.1), k = binary(rng, {8, D, S, S}, 0.1), v = binary(rng, {8, D, S, S}, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(attention_core(q, k, v, H));
}
BENCHMARK(BM_AttentionCore)->Args({64, 4, 4})->Args({384, 8, 12});

// args: timesteps, sites
static void BM_MultistepLif(benchmark::State& state) {
  const auto T = std::size_t(state.range(0)), N = std::size_t(state.range(1));
  Rng rng(3);
  const Tensor x = uniform(rng, {T, N}, -1, 3);
  for (auto _ : state) benchmark::DoNotOptimize(multistep_lif(x, T, LifParams{}));
  state.SetItemsProcessed(state.iterations() * std::int64_t(T * N));
}
BENCHMARK(BM_MultistepLif)->Args({4, 1 << 16})->Args({4, 1 << 20});

static void BM_DeskForward(benchmark::State& state) {
  Model m(ModelConfig::desk(2, 64), 0);
  Rng rng(4);
  const Tensor x = uniform(rng, {32, 3, 16, 16}, 0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x));
}
BENCHMARK(BM_DeskForward)->Unit(benchmark::kMillisecond);

static void BM_DeskTrainStep(benchmark::State& state) {
  Model m(ModelConfig::desk(2, 64), 0);
  const Dataset ds = synth_static(4, 32, 7);
  const Batch batch = ds.batch(0, 32);
  AdamW opt(m.parameters(), 0.9, 0.999, 1e-8, 0.05);
  for (auto _ : state) {
    opt.zero_grad();
    benchmark::DoNotOptimize(loss_and_gradients(m, batch, NeuronMode::kSpiking, true));
    opt.step(5e-4);
  }
}
BENCHMARK(BM_DeskTrainStep)->Unit(benchmark::kMillisecond);

static void BM_PurityAudit(benchmark::State& state) {
  Model m(ModelConfig::desk(2, 64), 0);
  const Dataset ds = synth_static(4, 64, 7);
  for (auto _ : state) benchmark::DoNotOptimize(record(m, ds, 32));
}
BENCHMARK(BM_PurityAudit)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
