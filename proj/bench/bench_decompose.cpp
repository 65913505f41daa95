#include <benchmark/benchmark.h>
#include <omp.h>

#include <map>

#include "support.hpp"
#include "vardecomp/decompose.hpp"

using namespace vardecomp;

namespace {

struct Fixture {
  FittedModels models;
  RowMatrix x;
};

const Fixture& fixture(int J, std::size_t n) {
  static std::map<std::pair<int, std::size_t>, Fixture> cache;
  auto it = cache.find({J, n});
  if (it == cache.end()) {
    Rng rng = make_rng(42, static_cast<std::uint64_t>(J));
    Fixture f;
    f.models = testsupport::random_models({J, 4, 6}, rng);
    f.x = testsupport::random_covariates(n, 6, rng);
    it = cache.emplace(std::make_pair(J, n), std::move(f)).first;
  }
  return it->second;
}

void BM_reference(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(reference::decompose(f.x, f.models));
  state.SetItemsProcessed(state.iterations() * state.range(1));
}

void BM_parallel(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  const int saved = omp_get_max_threads();
  omp_set_num_threads(static_cast<int>(state.range(2)));
  for (auto _ : state) benchmark::DoNotOptimize(decompose(f.x, f.models));
  omp_set_num_threads(saved);
  state.SetItemsProcessed(state.iterations() * state.range(1));
}

}  // namespace

BENCHMARK(BM_reference)->Args({5, 20000})->Args({11, 20000})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_parallel)
    ->ArgsProduct({{5, 11}, {20000}, {1, 2, 4}})
    ->ArgNames({"J", "n", "threads"})
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
