#include <benchmark/benchmark.h>

#include <random>

#include "common.hpp"
#include "seqret/relevance.hpp"
#include "seqret/unwarp.hpp"

namespace {

void BM_FisherKernel(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  std::vector<double> a(dim), b(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    a[i] = n(rng);
    b[i] = n(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(seqret::fisher_kernel(a, b));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_FisherKernel)->RangeMultiplier(4)->Range(64, 16384);

void BM_UnwarpTime(benchmark::State& state) {
  const auto& w = bench::World::get();
  double t = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(seqret::unwarp_time(w.bundle.unwarp, t));
    t = t < w.data.horizon() ? t + 0.37 : 0.1;
  }
}
BENCHMARK(BM_UnwarpTime);

void BM_UnwarpSequence(benchmark::State& state) {
  const auto& w = bench::World::get();
  const auto& seq = *w.corpus.front();
  for (auto _ : state) benchmark::DoNotOptimize(seqret::unwarp_sequence(w.bundle.unwarp, seq));
  state.counters["events"] = static_cast<double>(seq.size());
}
BENCHMARK(BM_UnwarpSequence);

// One (query, corpus) pair per iteration under each scoring mode.
void BM_RelevanceScore(benchmark::State& state) {
  const auto& w = bench::World::get();
  const auto mode = static_cast<seqret::ScoreMode>(state.range(0));
  const auto parts = w.bundle.scorer_parts();
  const auto& q = w.data.queries.begin()->second;
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(seqret::relevance_score(parts, q, *w.corpus[i], mode));
    i = (i + 1) % w.corpus.size();
  }
  state.SetLabel(seqret::to_string(mode));
}
BENCHMARK(BM_RelevanceScore)
    ->Arg(static_cast<int>(seqret::ScoreMode::SelfAttn))
    ->Arg(static_cast<int>(seqret::ScoreMode::CrossAttn))
    ->Arg(static_cast<int>(seqret::ScoreMode::HashNsr))
    ->Unit(benchmark::kMicrosecond);

}  // namespace
