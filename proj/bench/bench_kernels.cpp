// Parallel kernels against their serial twins.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "pavad/kernels.hpp"
#include "pavad/sim.hpp"
#include "pavad/profiles.hpp"

using namespace pavad;

namespace {

std::vector<double> random_doubles(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_doubles(n * n, 1), b = random_doubles(n * n, 2);
  std::vector<double> c(n * n);
  const kernels::GemmShape s{n, n, n, false, false};
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::gemm(s, a, b, c);
    else
      kernels::gemm_serial(s, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <bool Parallel>
void BM_RowDots(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t dim = 768;
  std::mt19937 rng(3);
  std::normal_distribution<float> nd;
  std::vector<float> block(rows * dim), query(dim);
  for (auto& x : block) x = nd(rng);
  for (auto& x : query) x = nd(rng);
  std::vector<double> out(rows);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::row_dots(block, dim, query, out);
    else
      kernels::row_dots_serial(block, dim, query, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows));
}

template <bool Parallel>
void BM_Evaluate(benchmark::State& state) {
  auto profile = load_profile("sim");
  profile.sim.test_videos_per_class = static_cast<std::size_t>(state.range(0));
  const auto ds = sim::generate(profile.sim);
  const auto test = sim::to_dataset(ds.test);
  const auto masks = sim::frame_masks(ds.test);
  const auto params = model::init_params(profile.model, 0);
  for (auto _ : state) benchmark::DoNotOptimize(train::evaluate(params, test, masks, Parallel).auc_micro);
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_RowDots<false>)->Name("row_dots/serial")->Arg(1 << 12)->Arg(1 << 15);
BENCHMARK(BM_RowDots<true>)->Name("row_dots/parallel")->Arg(1 << 12)->Arg(1 << 15);
BENCHMARK(BM_Evaluate<false>)->Name("evaluate/serial")->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate<true>)->Name("evaluate/parallel")->Arg(32)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
