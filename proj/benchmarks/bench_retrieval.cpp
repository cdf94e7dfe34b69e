#include <benchmark/benchmark.h>

#include "common.hpp"

namespace {

struct Indexed {
  seqret::BuiltIndex built;

  static const Indexed& get() {
    static const Indexed x = [] {
      const auto& w = bench::World::get();
      seqret::IndexBuildConfig cfg;
      cfg.scheme = seqret::HashScheme::RandomHyperplane;
      cfg.seed = 1;
      return Indexed{seqret::build_index(w.bundle, w.corpus, cfg)};
    }();
    return x;
  }
};

void BM_EmbedCorpus(benchmark::State& state) {
  const auto& w = bench::World::get();
  for (auto _ : state) benchmark::DoNotOptimize(seqret::embed_corpus(w.bundle, w.corpus));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.corpus.size()));
}
BENCHMARK(BM_EmbedCorpus)->Unit(benchmark::kMillisecond);

void BM_Retrieve(benchmark::State& state) {
  const auto& w = bench::World::get();
  const auto& ix = Indexed::get();
  const auto mode = static_cast<seqret::RetrievalMode>(state.range(0));
  const seqret::Retriever r(w.bundle, w.data.corpus, &ix.built.embeddings, &ix.built.index);
  const auto& q = w.data.queries.begin()->second;
  std::size_t comparisons = 0;
  for (auto _ : state) {
    const auto res = r.retrieve(q, 10, mode);
    comparisons = res.comparisons;
    benchmark::DoNotOptimize(res);
  }
  state.counters["comparisons"] = static_cast<double>(comparisons);
  state.counters["corpus"] = static_cast<double>(w.corpus.size());
  state.SetLabel(seqret::to_string(mode));
}
BENCHMARK(BM_Retrieve)
    ->Arg(static_cast<int>(seqret::RetrievalMode::Exhaustive))
    ->Arg(static_cast<int>(seqret::RetrievalMode::HashedSelf))
    ->Arg(static_cast<int>(seqret::RetrievalMode::Telescopic))
    ->Unit(benchmark::kMillisecond);

void BM_HashLookup(benchmark::State& state) {
  const auto& w = bench::World::get();
  const auto& ix = Indexed::get();
  const seqret::Retriever r(w.bundle, w.data.corpus, &ix.built.embeddings, &ix.built.index);
  const auto& q = w.data.queries.begin()->second;
  for (auto _ : state) benchmark::DoNotOptimize(r.candidates(q));
}
BENCHMARK(BM_HashLookup)->Unit(benchmark::kMicrosecond);

}  // namespace
