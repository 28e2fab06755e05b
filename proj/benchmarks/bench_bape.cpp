#include <benchmark/benchmark.h>

#include "vibropsi/bape.hpp"
#include "vibropsi/config.hpp"
#include "vibropsi/simulation.hpp"

using namespace vibropsi;

namespace {

std::shared_ptr<const BapeModel> default_model() {
  static const auto model = BapeModel::create(GridConfig{}, default_candidates());
  return model;
}

/// Posterior after a short alternating history, so no cell is exactly uniform.
Posterior warmed_posterior() {
  Posterior p = Posterior::uniform(default_model());
  for (int i = 0; i < 10; ++i) {
    p = update(p, 2.5 * (1 + (i * 7) % 18), i % 3 ? Outcome::kCorrect : Outcome::kIncorrect);
  }
  return p;
}

void BM_ModelBuild(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(BapeModel::create(GridConfig{}, default_candidates()));
}
BENCHMARK(BM_ModelBuild)->Unit(benchmark::kMillisecond);

void BM_Update(benchmark::State& state) {
  const Posterior p = warmed_posterior();
  for (auto _ : state) benchmark::DoNotOptimize(update(p, 20.0, Outcome::kCorrect));
}
BENCHMARK(BM_Update)->Unit(benchmark::kMicrosecond);

void BM_UpdateOffCandidate(benchmark::State& state) {
  const Posterior p = warmed_posterior();
  for (auto _ : state) benchmark::DoNotOptimize(update(p, 21.3, Outcome::kCorrect));
}
BENCHMARK(BM_UpdateOffCandidate)->Unit(benchmark::kMicrosecond);

void BM_SelectNext(benchmark::State& state) {
  const Posterior p = warmed_posterior();
  for (auto _ : state) benchmark::DoNotOptimize(select_next(p));
}
BENCHMARK(BM_SelectNext)->Unit(benchmark::kMillisecond);

void BM_Postmean(benchmark::State& state) {
  const Posterior p = warmed_posterior();
  const auto xs = default_curve_grid();
  for (auto _ : state) benchmark::DoNotOptimize(postmean_curve(p, xs));
}
BENCHMARK(BM_Postmean)->Unit(benchmark::kMillisecond);

void BM_Session(benchmark::State& state) {
  const auto model = default_model();
  SessionConfig c;
  c.tsid = "bench";
  c.trials_per_block = static_cast<int>(state.range(0));
  std::uint64_t seed = 1;
  for (auto _ : state) {
    c.seed = seed++;
    benchmark::DoNotOptimize(
        simulate_session(c, ObserverModel::ideal({22.5, 3.0, 0.5, 0.02}), model, BackendConfig{}));
  }
}
BENCHMARK(BM_Session)->Arg(50)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
