#include "seqret/retrieval.hpp"

#include <fstream>

#include "seqret/dataset_io.hpp"
#include "seqret/diff/checkpoint.hpp"
#include "seqret/errors.hpp"
#include "seqret/parallel.hpp"
#include "seqret/seeding.hpp"

namespace seqret {

using nlohmann::json;

namespace {

constexpr int kEmbeddingFormatVersion = 1;

}  // namespace

// --- embeddings ----------------------------------------------------------------

const std::vector<double>& EmbeddingStore::at(const std::string& id) const {
  const auto it = vectors.find(id);
  if (it == vectors.end()) throw InputError("no embedding for '" + id + "'");
  return it->second;
}

json EmbeddingStore::to_json() const {
  return {{"format_version", kEmbeddingFormatVersion}, {"vectors", vectors}, {"fallback", fallback}};
}

EmbeddingStore EmbeddingStore::from_json(const json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kEmbeddingFormatVersion) {
      throw FormatError("unsupported embedding format version " + std::to_string(version));
    }
    EmbeddingStore s;
    s.vectors = j.at("vectors").get<std::map<std::string, std::vector<double>>>();
    s.fallback = j.at("fallback").get<std::set<std::string>>();
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed embedding store: ") + e.what());
  }
}

void EmbeddingStore::save(const std::filesystem::path& path) const { diff::write_json_file(path, to_json()); }

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) {
  return from_json(diff::read_json_file(path));
}

EmbeddingStore embed_corpus(const ModelBundle& bundle, const std::vector<const EventSequence*>& corpus,
                            std::size_t workers) {
  std::vector<std::vector<double>> vecs(corpus.size());
  std::vector<char> flagged(corpus.size(), 0);
  parallel_for(corpus.size(), workers, [&](std::size_t i) {
    try {
      vecs[i] = fisher_vector(bundle.self, *corpus[i], nullptr, bundle.fisher, &bundle.self_stats);
    } catch (const DegenerateEmbeddingError&) {
      FisherConfig plain = bundle.fisher;
      plain.mode = FisherMode::Identity;
      vecs[i] = fisher_vector(bundle.self, *corpus[i], nullptr, plain, nullptr);
      flagged[i] = 1;
    }
  });
  EmbeddingStore store;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string& id = corpus[i]->id();
    if (!store.vectors.emplace(id, std::move(vecs[i])).second) throw InputError("duplicate corpus id '" + id + "'");
    if (flagged[i]) store.fallback.insert(id);
  }
  return store;
}

Hasher make_hasher(const EmbeddingStore& store, const IndexBuildConfig& cfg, HashTrainReport* report) {
  if (store.vectors.empty()) throw InputError("cannot hash an empty embedding store");
  const std::size_t d = store.vectors.begin()->second.size();
  if (cfg.scheme == HashScheme::RandomHyperplane) {
    return Hasher::random_hyperplane(d, cfg.hash.code_length, derive_seed(cfg.seed, {51}));
  }
  std::vector<std::vector<double>> rows;
  rows.reserve(store.size());
  for (const auto& [id, v] : store.vectors) rows.push_back(v);
  HashTrainConfig hc = cfg.hash;
  hc.seed = derive_seed(cfg.seed, {53});
  return Hasher::learned(train_hash_net(rows, hc, report));
}

HashIndex index_embeddings(const EmbeddingStore& store, const Hasher& hasher, const IndexBuildConfig& cfg) {
  HashIndex index(hasher, cfg.profile, derive_seed(cfg.seed, {57}));
  for (const auto& [id, v] : store.vectors) index.insert(id, hasher.code(v));
  return index;
}

BuiltIndex build_index(const ModelBundle& bundle, const std::vector<const EventSequence*>& corpus,
                       const IndexBuildConfig& cfg, BuildReport* report) {
  BuildReport local;
  BuildReport& r = report ? *report : local;
  r = {};
  EmbeddingStore store = embed_corpus(bundle, corpus, cfg.workers);
  Hasher hasher = make_hasher(store, cfg, &r.hash);
  HashIndex index = index_embeddings(store, hasher, cfg);
  r.sequences = store.size();
  r.fallback_ids.assign(store.fallback.begin(), store.fallback.end());
  return {std::move(store), std::move(index)};
}

// --- retrieval ---------------------------------------------------------------------

RetrievalMode parse_retrieval_mode(const std::string& s) {
  if (s == "exhaustive") return RetrievalMode::Exhaustive;
  if (s == "hashed_self") return RetrievalMode::HashedSelf;
  if (s == "telescopic") return RetrievalMode::Telescopic;
  throw ConfigError("unknown retrieval mode '" + s + "'");
}

std::string to_string(RetrievalMode m) {
  switch (m) {
    case RetrievalMode::Exhaustive:
      return "exhaustive";
    case RetrievalMode::HashedSelf:
      return "hashed_self";
    case RetrievalMode::Telescopic:
      return "telescopic";
  }
  return "exhaustive";
}

Retriever::Retriever(const ModelBundle& bundle, const std::map<std::string, EventSequence>& corpus,
                     const EmbeddingStore* embeddings, const HashIndex* index, RetrievalConfig cfg)
    : bundle_(bundle),
      corpus_(corpus),
      embeddings_(embeddings),
      index_(index),
      cfg_(cfg),
      scorer_(bundle.scorer_parts()) {
  if (cfg_.rerank_scorer != ScoreMode::CrossAttn && cfg_.rerank_scorer != ScoreMode::HashNsr) {
    throw ConfigError("telescopic reranking needs crossattn or hash_nsr");
  }
  if (cfg_.workers == 0) throw ConfigError("retrieval workers must be positive");
  if (index_ && embeddings_ && embeddings_->size() > 0 &&
      index_->hasher().input_dim() != embeddings_->vectors.begin()->second.size()) {
    throw DimensionError("index and embeddings disagree on the vector width");
  }
}

std::vector<Scored> Retriever::score_all(const EventSequence& query, const std::vector<std::string>& ids,
                                         ScoreMode mode) const {
  const Scorer::Query q = scorer_.prepare(query, mode);
  std::vector<Scored> out(ids.size());
  parallel_for(ids.size(), cfg_.workers, [&](std::size_t i) {
    const auto it = corpus_.find(ids[i]);
    if (it == corpus_.end()) throw InputError("candidate '" + ids[i] + "' is not in the corpus");
    const std::vector<double>* v = nullptr;
    if (mode == ScoreMode::SelfAttn && embeddings_) v = &embeddings_->at(ids[i]);
    out[i] = {ids[i], scorer_.score(q, it->second, mode, v).s};
  });
  sort_ranking(out);
  return out;
}

LookupResult Retriever::candidates(const EventSequence& query) const {
  if (!index_) throw ConfigError("hashed retrieval needs an index");
  // The hash key always comes from the self-attention embedding.
  const Scorer::Query q = scorer_.prepare(query, ScoreMode::SelfAttn);
  return index_->lookup_with_fallback(index_->hasher().code(q.v_self));
}

RetrievalResult Retriever::retrieve(const EventSequence& query, std::size_t k, RetrievalMode mode) const {
  if (k < 1) throw ArgumentError("k must be at least 1");
  RetrievalResult r;
  r.query_id = query.id();
  r.mode = mode;
  if (mode == RetrievalMode::Exhaustive) {
    std::vector<std::string> ids;
    ids.reserve(corpus_.size());
    for (const auto& [id, s] : corpus_) ids.push_back(id);
    r.ranked = score_all(query, ids, cfg_.exhaustive_scorer);
    r.comparisons = ids.size();
  } else {
    const LookupResult found = candidates(query);
    r.stage = found.stage;
    r.comparisons = found.ids.size();
    r.ranked = score_all(query, found.ids, mode == RetrievalMode::HashedSelf ? ScoreMode::SelfAttn : cfg_.rerank_scorer);
  }
  if (r.ranked.size() > k) r.ranked.resize(k);
  return r;
}

void write_results_csv(const std::filesystem::path& path, const std::vector<RetrievalResult>& results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "query_id,rank,corpus_id,score,mode,comparisons\n";
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.ranked.size(); ++i) {
      out << r.query_id << ',' << i + 1 << ',' << r.ranked[i].id << ',' << format_double(r.ranked[i].score) << ','
          << to_string(r.mode) << ',' << r.comparisons << '\n';
    }
  }
}

RetrievalReport evaluate_retrieval(const Retriever& retriever, const Dataset& data,
                                   const std::vector<std::string>& queries, RetrievalMode mode,
                                   const std::vector<std::size_t>& ks, std::size_t workers) {
  std::vector<std::string> used, excluded;
  for (const auto& q : queries) {
    const auto it = data.labels.by_query.find(q);
    if (it == data.labels.by_query.end() || it->second.positives.empty()) {
      excluded.push_back(q);
    } else {
      used.push_back(q);
    }
  }
  if (used.empty()) throw InputError("no query with positives to evaluate");
  std::vector<RetrievalResult> results(used.size());
  parallel_for(used.size(), workers, [&](std::size_t i) {
    results[i] = retriever.retrieve(data.query_at(used[i]), retriever.corpus_size(), mode);
  });
  std::vector<RankMetrics> per_query;
  RetrievalReport rep;
  double comparisons = 0.0;
  for (std::size_t i = 0; i < used.size(); ++i) {
    std::vector<std::string> ids;
    for (const auto& s : results[i].ranked) ids.push_back(s.id);
    per_query.push_back(rank_metrics(ids, data.labels.at(used[i]).positives, ks));
    comparisons += static_cast<double>(results[i].comparisons);
    if (mode != RetrievalMode::Exhaustive) ++rep.stages[results[i].stage];
  }
  rep.metrics = aggregate(used, per_query, ks);
  rep.metrics.excluded = excluded;
  rep.mean_comparisons = comparisons / static_cast<double>(used.size());
  rep.metrics.mean_candidates = rep.mean_comparisons;
  rep.reduction = 1.0 - rep.mean_comparisons / static_cast<double>(retriever.corpus_size());
  return rep;
}

}  // namespace seqret
