#include <benchmark/benchmark.h>

#include "milpath/milnet.hpp"
#include "milpath/random.hpp"
#include "milpath/trainer.hpp"

using namespace milpath;

namespace {

ModelConfig bench_config(int d) {
  ModelConfig c;
  c.input_dim = d;
  return c;
}

Eigen::MatrixXd bench_bag(int n, int d) {
  Rng rng(7);
  Eigen::MatrixXd e(n, d);
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
  return e;
}

}  // namespace

static void BM_Forward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0)), d = static_cast<int>(state.range(1));
  const MilParams p = init_params(bench_config(d), 1);
  const Eigen::MatrixXd e = bench_bag(n, d);
  for (auto _ : state) benchmark::DoNotOptimize(forward(e, p, ForwardMode::eval()).probs);
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Forward)->Args({32, 64})->Args({256, 64})->Args({256, 1024})->Unit(benchmark::kMicrosecond);

static void BM_ForwardBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0)), d = static_cast<int>(state.range(1));
  const MilParams p = init_params(bench_config(d), 1);
  const Eigen::MatrixXd e = bench_bag(n, d);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const auto t = forward(e, p, ForwardMode::training(++seed));
    benchmark::DoNotOptimize(backward(t, e, p, Subtype::kGcb).loss);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ForwardBackward)->Args({32, 64})->Args({256, 1024})->Unit(benchmark::kMicrosecond);

static void BM_AdamW(benchmark::State& state) {
  MilParams p = init_params(bench_config(static_cast<int>(state.range(0))), 1);
  MilGrads g = init_params(bench_config(static_cast<int>(state.range(0))), 2);
  AdamWState st = AdamWState::for_params(p);
  TrainConfig cfg;
  for (auto _ : state) adamw_step(p, g, st, cfg);
  state.counters["params"] = static_cast<double>(p.parameter_count());
}
BENCHMARK(BM_AdamW)->Arg(64)->Arg(1024)->Unit(benchmark::kMicrosecond);
