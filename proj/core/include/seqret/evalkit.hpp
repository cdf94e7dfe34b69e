#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <vector>

#include "seqret/ctes.hpp"

namespace seqret {

struct RankMetrics {
  double ap = 0.0;
  double rr = 0.0;
  std::map<std::size_t, double> ndcg;  // K -> NDCG@K
};

/// AP over |relevant| (relevant items missing from the list count 0), binary
/// NDCG@K for each K, and reciprocal rank of the first relevant item.
RankMetrics rank_metrics(const std::vector<std::string>& ranked, const std::set<std::string>& relevant,
                         const std::vector<std::size_t>& ks);

struct Scored {
  std::string id;
  double score = 0.0;

  friend bool operator==(const Scored&, const Scored&) = default;
};

/// Score descending, ties by id ascending.
void sort_ranking(std::vector<Scored>& items);

struct MetricReport {
  std::vector<std::size_t> ks;
  std::map<std::string, double> metrics;  // "map", "mrr", "ndcg@10", ...
  std::vector<std::pair<std::string, double>> per_query_ap;
  std::vector<std::string> excluded;  // queries without positives
  double mean_candidates = 0.0;

  double map() const { return metrics.at("map"); }
  double ndcg(std::size_t k) const { return metrics.at("ndcg@" + std::to_string(k)); }

  nlohmann::json to_json() const;
  void write_json(const std::filesystem::path& path) const;
  /// metric,value rows.
  void write_csv(const std::filesystem::path& path) const;
  /// query_id,ap sorted by query id.
  void write_per_query_csv(const std::filesystem::path& path) const;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

/// Aggregates per-query metrics (in the given order) into a report.
MetricReport aggregate(const std::vector<std::string>& query_ids, const std::vector<RankMetrics>& per_query,
                       const std::vector<std::size_t>& ks);

struct ProtocolConfig {
  std::vector<std::size_t> ks = {10, 20};
  std::size_t negatives = 1000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

/// All positives plus min(negatives, |C_q-|) negatives sampled without
/// replacement, sorted by id. Deterministic in (seed, query id).
std::vector<std::string> protocol_candidates(const QueryRelevance& rel, std::size_t negatives, std::uint64_t seed,
                                             const std::string& query_id);

/// Scores candidates for one query; must return one score per candidate.
using CandidateScorer = std::function<std::vector<double>(const std::string& query_id, const std::vector<std::string>& candidates)>;

MetricReport evaluate_protocol(const Dataset& data, const std::vector<std::string>& query_ids, const CandidateScorer& scorer,
                               const ProtocolConfig& cfg);

}  // namespace seqret
