#include <benchmark/benchmark.h>

#include <vector>

#include "tsdf/diffusion.hpp"
#include "tsdf/fc.hpp"
#include "tsdf/fidelity.hpp"
#include "tsdf/nn/ops.hpp"
#include "tsdf/nn/optim.hpp"

namespace {

using namespace tsdf;
using nn::Tensor;

template <class T>
Tensor<T> noise(nn::Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = T(rng.normal());
  return t;
}

model::DenoiserConfig desk(std::size_t L = 64, std::size_t R = 8) {
  model::DenoiserConfig c;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 4;
  c.seq_len = L;
  c.input_dim = R;
  c.diffusion_steps = 200;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const auto a = noise<float>({n, n}, 1), b = noise<float>({n, n}, 2);
  for (auto _ : state) {
    nn::Graph<float> g(false);
    benchmark::DoNotOptimize(nn::matmul(g.constant(a), g.constant(b)).value().data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_AttentionForward(benchmark::State& state) {
  const std::size_t B = 16, L = 64, d = 32;
  const auto q = noise<float>({B * L, d}, 1), k = noise<float>({B * L, d}, 2), v = noise<float>({B * L, d}, 3);
  for (auto _ : state) {
    nn::Graph<float> g(false);
    auto out = nn::multi_head_attention(g.constant(q), g.constant(k), g.constant(v), L, 4);
    benchmark::DoNotOptimize(out.value().data());
  }
}
BENCHMARK(BM_AttentionForward);

void BM_DenoiserTrainStep(benchmark::State& state) {
  const auto cfg = desk();
  model::Denoiser<float> net(cfg, 1);
  const auto schedule = diffusion::cosine_schedule(200);
  nn::AdamW<float> opt(net.parameters(), {1e-4, 0.9, 0.999, 1e-8, 1e-3});
  const auto batch = noise<float>({16, cfg.seq_len, cfg.input_dim}, 4);
  Rng rng(5);
  std::size_t step = 0;
  for (auto _ : state) benchmark::DoNotOptimize(diffusion::train_step(batch, net, schedule, opt, rng, step++));
}
BENCHMARK(BM_DenoiserTrainStep)->Unit(benchmark::kMillisecond);

void BM_SamplingStep(benchmark::State& state) {
  // One reverse step is one batched forward pass; T = 1 isolates it.
  auto cfg = desk();
  cfg.diffusion_steps = 2;
  model::Denoiser<float> net(cfg, 1);
  const auto schedule = diffusion::cosine_schedule(2);
  for (auto _ : state) {
    auto x = diffusion::sample<float>(net, schedule, 32, cfg.seq_len, cfg.input_dim, 7);
    benchmark::DoNotOptimize(x.data());
  }
  state.SetItemsProcessed(state.iterations() * 2);
}
BENCHMARK(BM_SamplingStep)->Unit(benchmark::kMillisecond);

void BM_PearsonFc(benchmark::State& state) {
  const auto x = noise<double>({64, std::size_t(state.range(0))}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(fc::pearson_fc(x).values.data());
}
BENCHMARK(BM_PearsonFc)->Arg(8)->Arg(116);

void BM_PooledKs(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const auto a = noise<double>({n}, 9), b = noise<double>({n}, 10);
  const std::vector<double> va(a.values().begin(), a.values().end()), vb(b.values().begin(), b.values().end());
  for (auto _ : state) benchmark::DoNotOptimize(fidelity::pooled_ks(va, vb));
}
BENCHMARK(BM_PooledKs)->Arg(1 << 12)->Arg(1 << 16);

}  // namespace

BENCHMARK_MAIN();
