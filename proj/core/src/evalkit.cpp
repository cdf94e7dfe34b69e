#include "seqret/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_set>

#include "seqret/dataset_io.hpp"
#include "seqret/errors.hpp"
#include "seqret/parallel.hpp"
#include "seqret/seeding.hpp"

namespace seqret {

RankMetrics rank_metrics(const std::vector<std::string>& ranked, const std::set<std::string>& relevant,
                         const std::vector<std::size_t>& ks) {
  if (relevant.empty()) throw InputError("rank_metrics needs at least one relevant item");
  {
    std::unordered_set<std::string> seen;
    for (const auto& id : ranked) {
      if (!seen.insert(id).second) throw InputError("ranked list contains '" + id + "' twice");
    }
  }
  RankMetrics m;
  double hits = 0.0;
  double precision_sum = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (!relevant.count(ranked[i])) continue;
    hits += 1.0;
    precision_sum += hits / static_cast<double>(i + 1);
    if (m.rr == 0.0) m.rr = 1.0 / static_cast<double>(i + 1);
  }
  m.ap = precision_sum / static_cast<double>(relevant.size());
  for (std::size_t k : ks) {
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
      if (relevant.count(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    }
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, relevant.size()); ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    m.ndcg[k] = idcg > 0.0 ? dcg / idcg : 0.0;
  }
  return m;
}

void sort_ranking(std::vector<Scored>& items) {
  std::sort(items.begin(), items.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json per_query = nlohmann::json::object();
  for (const auto& [q, ap] : per_query_ap) per_query[q] = ap;
  return {{"ks", ks},
          {"metrics", metrics},
          {"per_query_ap", per_query},
          {"excluded_queries", excluded},
          {"mean_candidates", mean_candidates}};
}

void MetricReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

void MetricReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "metric,value\n";
  for (const auto& [k, v] : metrics) out << k << ',' << format_double(v) << '\n';
}

void MetricReport::write_per_query_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  auto rows = per_query_ap;
  std::sort(rows.begin(), rows.end());
  out << "query_id,ap\n";
  for (const auto& [q, ap] : rows) out << q << ',' << format_double(ap) << '\n';
}

MetricReport aggregate(const std::vector<std::string>& query_ids, const std::vector<RankMetrics>& per_query,
                       const std::vector<std::size_t>& ks) {
  if (query_ids.size() != per_query.size()) throw DimensionError("aggregate: ids and metrics differ in length");
  MetricReport r;
  r.ks = ks;
  double ap = 0.0;
  double rr = 0.0;
  std::map<std::size_t, double> ndcg;
  for (std::size_t i = 0; i < per_query.size(); ++i) {
    ap += per_query[i].ap;
    rr += per_query[i].rr;
    for (std::size_t k : ks) ndcg[k] += per_query[i].ndcg.at(k);
    r.per_query_ap.emplace_back(query_ids[i], per_query[i].ap);
  }
  const double n = std::max<double>(1.0, static_cast<double>(per_query.size()));
  r.metrics["map"] = ap / n;
  r.metrics["mrr"] = rr / n;
  for (std::size_t k : ks) r.metrics["ndcg@" + std::to_string(k)] = ndcg[k] / n;
  return r;
}

std::vector<std::string> protocol_candidates(const QueryRelevance& rel, std::size_t negatives, std::uint64_t seed,
                                             const std::string& query_id) {
  std::vector<std::string> neg(rel.negatives.begin(), rel.negatives.end());
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a of the id keeps the draw independent of query order
  for (unsigned char ch : query_id) h = (h ^ ch) * 1099511628211ULL;
  std::mt19937_64 rng(derive_seed(seed, {41, h}));
  if (neg.size() > negatives) {
    // partial Fisher-Yates: the first `negatives` slots are a uniform sample
    for (std::size_t i = 0; i < negatives; ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, neg.size() - 1)(rng);
      std::swap(neg[i], neg[j]);
    }
    neg.resize(negatives);
  }
  std::vector<std::string> out(rel.positives.begin(), rel.positives.end());
  out.insert(out.end(), neg.begin(), neg.end());
  std::sort(out.begin(), out.end());
  return out;
}

MetricReport evaluate_protocol(const Dataset& data, const std::vector<std::string>& query_ids, const CandidateScorer& scorer,
                               const ProtocolConfig& cfg) {
  std::vector<std::string> kept;
  std::vector<std::string> excluded;
  for (const auto& q : query_ids) {
    const auto it = data.labels.by_query.find(q);
    if (it == data.labels.by_query.end() || it->second.positives.empty()) {
      excluded.push_back(q);
    } else {
      kept.push_back(q);
    }
  }
  std::vector<RankMetrics> per(kept.size());
  std::vector<std::size_t> sizes(kept.size());
  parallel_for(kept.size(), cfg.workers, [&](std::size_t i) {
    const auto& rel = data.labels.at(kept[i]);
    const auto cands = protocol_candidates(rel, cfg.negatives, cfg.seed, kept[i]);
    const auto scores = scorer(kept[i], cands);
    if (scores.size() != cands.size()) throw DimensionError("scorer returned the wrong number of scores");
    std::vector<Scored> ranked(cands.size());
    for (std::size_t j = 0; j < cands.size(); ++j) ranked[j] = {cands[j], scores[j]};
    sort_ranking(ranked);
    std::vector<std::string> ids;
    ids.reserve(ranked.size());
    for (const auto& r : ranked) ids.push_back(r.id);
    per[i] = rank_metrics(ids, rel.positives, cfg.ks);
    sizes[i] = cands.size();
  });
  MetricReport report = aggregate(kept, per, cfg.ks);
  report.excluded = std::move(excluded);
  double total = 0.0;
  for (std::size_t s : sizes) total += static_cast<double>(s);
  report.mean_candidates = kept.empty() ? 0.0 : total / static_cast<double>(kept.size());
  return report;
}

}  // namespace seqret
