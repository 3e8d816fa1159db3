#include <benchmark/benchmark.h>

#include "milpath/morpho.hpp"
#include "milpath/synth.hpp"

static void BM_NucleusFeatures(benchmark::State& state) {
  const auto patch = milpath::synth_patch(milpath::Subtype::kAbc, static_cast<int>(state.range(0)), 11);
  std::size_t nuclei = 0;
  for (auto _ : state) {
    const auto recs = milpath::nucleus_features(patch.mask, patch.image);
    nuclei = recs.size();
    benchmark::DoNotOptimize(recs.data());
  }
  state.counters["nuclei"] = static_cast<double>(nuclei);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(nuclei));
}
BENCHMARK(BM_NucleusFeatures)->Arg(256)->Arg(512)->Unit(benchmark::kMicrosecond);

static void BM_SynthPatch(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(milpath::synth_patch(milpath::Subtype::kGcb, 256, ++seed).mask.labels.data());
  }
}
BENCHMARK(BM_SynthPatch)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
