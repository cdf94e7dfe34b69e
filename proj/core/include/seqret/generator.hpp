#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seqret/ctes.hpp"

namespace seqret {

enum class WarpFamily { Identity, Affine, AffinePower };

WarpFamily parse_warp_family(const std::string& name);
std::string to_string(WarpFamily w);

/// Synthetic benchmark generator. Each base sequence is a renewal process
/// with log-normal inter-arrivals and a first-order Markov mark chain; every
/// member of its pool is a contiguous window of it under a random monotone
/// warp.
struct GeneratorConfig {
  std::size_t n_base = 64;
  std::size_t subseqs_min = 17;  // pool size ~ Unif[subseqs_min, subseqs_max]
  std::size_t subseqs_max = 17;
  std::size_t mark_vocab = 5;
  double mean_len = 50.0;
  double length_spread = 0.2;  // window length ~ Unif[mean_len (1 - s), mean_len (1 + s)]
  WarpFamily warp = WarpFamily::AffinePower;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double power_min = 0.8;
  double power_max = 1.25;
  double shift_fraction = 0.25;  // max shift as a fraction of mean_len * mean_interarrival
  double mean_interarrival = 1.0;
  double dirichlet_alpha = 0.5;
  std::uint64_t seed = 0;
  std::size_t max_len = kDefaultMaxLength;

  void validate() const;
};

struct WarpParams {
  double scale = 1.0;
  double shift = 0.0;
  double power = 1.0;
};

struct GeneratedPools {
  std::vector<EventSequence> bases;
  std::vector<EventSequence> sequences;                    // every derived sequence
  std::map<std::string, std::vector<std::string>> pools;   // base id -> derived ids
  std::map<std::string, WarpParams> warps;                 // derived id -> warp applied
  std::map<std::string, std::size_t> window_start;         // derived id -> first base index
};

GeneratedPools generate_pools(const GeneratorConfig& cfg);

struct LabeledSplit {
  std::vector<std::string> queries;
  std::vector<std::string> corpus;
  RelevanceLabels labels;
};

/// One query drawn uniformly from each pool; its positives are the rest of
/// the pool and its negatives every other pool minus that pool's query.
LabeledSplit derive_relevance_labels(const std::map<std::string, std::vector<std::string>>& pools, std::uint64_t seed);

/// Shuffled disjoint split by ratios (floor, then remainders by largest
/// fractional part).
QuerySplit split_queries(std::vector<std::string> query_ids, const std::vector<double>& ratios, std::uint64_t seed);

/// Pools, labels and a 0.5 / 0.1 / 0.4 query split, all from cfg.seed.
Dataset generate_synthetic(const GeneratorConfig& cfg);

}  // namespace seqret
