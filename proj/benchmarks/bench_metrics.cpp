#include <benchmark/benchmark.h>

#include <vector>

#include "milpath/metrics.hpp"
#include "milpath/morpho.hpp"
#include "milpath/random.hpp"

static void BM_RocAuc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  milpath::Rng rng(3);
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = static_cast<double>(rng.below(1000));
    y[i] = static_cast<int>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(milpath::roc_auc(s, y));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_RocAuc)->RangeMultiplier(8)->Range(64, 1 << 18)->Complexity(benchmark::oNLogN);

static void BM_WelchTTest(benchmark::State& state) {
  milpath::Rng rng(4);
  std::vector<double> a(static_cast<std::size_t>(state.range(0))), b(a.size());
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal() + 0.1;
  for (auto _ : state) benchmark::DoNotOptimize(milpath::welch_t_test(a, b).p);
}
BENCHMARK(BM_WelchTTest)->Arg(100)->Arg(100000);
