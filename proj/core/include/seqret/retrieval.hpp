#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <vector>

#include "seqret/evalkit.hpp"
#include "seqret/hashindex.hpp"
#include "seqret/train.hpp"

namespace seqret {

/// Self-attention Fisher vectors of the corpus, by id.
struct EmbeddingStore {
  std::map<std::string, std::vector<double>> vectors;
  /// Ids embedded with the identity preconditioner after the Fisher-weighted
  /// vector degenerated.
  std::set<std::string> fallback;

  std::size_t size() const noexcept { return vectors.size(); }
  const std::vector<double>& at(const std::string& id) const;

  nlohmann::json to_json() const;
  static EmbeddingStore from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static EmbeddingStore load(const std::filesystem::path& path);

  friend bool operator==(const EmbeddingStore&, const EmbeddingStore&) = default;
};

struct IndexBuildConfig {
  HashScheme scheme = HashScheme::Learned;
  IndexProfile profile = IndexProfile::desk();
  HashTrainConfig hash;  // code_length is used by both schemes
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct BuildReport {
  std::size_t sequences = 0;
  std::vector<std::string> fallback_ids;
  HashTrainReport hash;  // empty for random hyperplanes
};

/// Self vectors of every corpus sequence from the bundle's self-attention
/// model (identity fallback for degenerate ones).
EmbeddingStore embed_corpus(const ModelBundle& bundle, const std::vector<const EventSequence*>& corpus,
                            std::size_t workers = 1);

/// Hasher for the configured scheme, trained on `store` when learned.
Hasher make_hasher(const EmbeddingStore& store, const IndexBuildConfig& cfg, HashTrainReport* report = nullptr);

HashIndex index_embeddings(const EmbeddingStore& store, const Hasher& hasher, const IndexBuildConfig& cfg);

struct BuiltIndex {
  EmbeddingStore embeddings;
  HashIndex index;
};

BuiltIndex build_index(const ModelBundle& bundle, const std::vector<const EventSequence*>& corpus,
                       const IndexBuildConfig& cfg, BuildReport* report = nullptr);

enum class RetrievalMode { Exhaustive, HashedSelf, Telescopic };
RetrievalMode parse_retrieval_mode(const std::string& s);
std::string to_string(RetrievalMode m);

struct RetrievalResult {
  std::string query_id;
  std::vector<Scored> ranked;  // score descending, ties by id
  RetrievalMode mode = RetrievalMode::Exhaustive;
  std::size_t comparisons = 0;
  LookupStage stage = LookupStage::Exact;  // hashed modes only

  friend bool operator==(const RetrievalResult&, const RetrievalResult&) = default;
};

struct RetrievalConfig {
  ScoreMode exhaustive_scorer = ScoreMode::SelfAttn;
  ScoreMode rerank_scorer = ScoreMode::CrossAttn;  // crossattn or hash_nsr
  std::size_t workers = 1;  // per-candidate scoring
};

/// Read-only view over a bundle, the corpus and (for hashed modes) an index.
/// Every pointer must outlive the retriever.
class Retriever {
 public:
  Retriever(const ModelBundle& bundle, const std::map<std::string, EventSequence>& corpus,
            const EmbeddingStore* embeddings, const HashIndex* index, RetrievalConfig cfg = {});

  /// Top-k (all candidates when fewer). ArgumentError when k < 1.
  RetrievalResult retrieve(const EventSequence& query, std::size_t k, RetrievalMode mode) const;

  /// Candidate ids of the hashed modes with the stage that produced them.
  LookupResult candidates(const EventSequence& query) const;

  const RetrievalConfig& config() const noexcept { return cfg_; }
  std::size_t corpus_size() const noexcept { return corpus_.size(); }

 private:
  std::vector<Scored> score_all(const EventSequence& query, const std::vector<std::string>& ids, ScoreMode mode) const;

  const ModelBundle& bundle_;
  const std::map<std::string, EventSequence>& corpus_;
  const EmbeddingStore* embeddings_;
  const HashIndex* index_;
  RetrievalConfig cfg_;
  Scorer scorer_;
};

/// query_id,rank,corpus_id,score,mode,comparisons
void write_results_csv(const std::filesystem::path& path, const std::vector<RetrievalResult>& results);

struct RetrievalReport {
  MetricReport metrics;          // over the full candidate ranking of each query
  double mean_comparisons = 0.0;
  double reduction = 0.0;        // 1 - mean_comparisons / |C|
  std::map<LookupStage, std::size_t> stages;
};

/// Runs every labelled query with a positive through `mode` and scores the
/// complete candidate ranking against its positives.
RetrievalReport evaluate_retrieval(const Retriever& retriever, const Dataset& data,
                                   const std::vector<std::string>& queries, RetrievalMode mode,
                                   const std::vector<std::size_t>& ks = {10, 20}, std::size_t workers = 1);

}  // namespace seqret
