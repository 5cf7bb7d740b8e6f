// Serial reference kernels against their OpenMP counterparts, and one
// training step with serial versus threaded batch scoring.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mutatt/kernels.hpp"
#include "mutatt/synth.hpp"
#include "mutatt/training.hpp"

namespace {

using Kernel = void (*)(std::span<const double>, std::span<const double>, std::span<double>,
                        std::size_t, std::size_t, std::size_t);

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Square products of side n.
void run_gemm(benchmark::State& state, Kernel kernel) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1);
  const auto b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    kernel(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
  state.counters["threads"] = mutatt::kernels::max_threads();
}

void BM_gemm_nn_serial(benchmark::State& s) { run_gemm(s, mutatt::kernels::serial::gemm_nn); }
void BM_gemm_nn_parallel(benchmark::State& s) { run_gemm(s, mutatt::kernels::parallel::gemm_nn); }
void BM_gemm_nt_serial(benchmark::State& s) { run_gemm(s, mutatt::kernels::serial::gemm_nt); }
void BM_gemm_nt_parallel(benchmark::State& s) { run_gemm(s, mutatt::kernels::parallel::gemm_nt); }
void BM_gemm_tn_serial(benchmark::State& s) { run_gemm(s, mutatt::kernels::serial::gemm_tn); }
void BM_gemm_tn_parallel(benchmark::State& s) { run_gemm(s, mutatt::kernels::parallel::gemm_tn); }

BENCHMARK(BM_gemm_nn_serial)->RangeMultiplier(4)->Range(16, 256);
BENCHMARK(BM_gemm_nn_parallel)->RangeMultiplier(4)->Range(16, 256);
BENCHMARK(BM_gemm_nt_serial)->RangeMultiplier(4)->Range(16, 256);
BENCHMARK(BM_gemm_nt_parallel)->RangeMultiplier(4)->Range(16, 256);
BENCHMARK(BM_gemm_tn_serial)->RangeMultiplier(4)->Range(16, 256);
BENCHMARK(BM_gemm_tn_parallel)->RangeMultiplier(4)->Range(16, 256);

// One full iteration at default sizes; range(0) selects threaded scoring.
void BM_train_step(benchmark::State& state) {
  mutatt::SynthSpec spec;
  spec.num_images = 50;
  const mutatt::Dataset data = mutatt::generate_synthetic(spec).dataset;
  mutatt::TrainConfig config;
  config.parallel = state.range(0) != 0;
  mutatt::ModelDims dims;
  dims.visual_dim = data.visual_dim;
  mutatt::Model model = mutatt::Model::create(data.vocab, dims, 1);
  mutatt::AdamState optimizer = mutatt::AdamState::zeros_like(model.params);
  mutatt::Trainer trainer(data, model, optimizer, config);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step().loss);
  state.counters["threads"] = mutatt::kernels::max_threads();
}

BENCHMARK(BM_train_step)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
