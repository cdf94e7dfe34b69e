#include "seqret/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "seqret/errors.hpp"
#include "seqret/seeding.hpp"

namespace seqret {

namespace {

std::string base_id(std::size_t b) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "b%03zu", b);
  return buf;
}

std::string derived_id(std::size_t b, std::size_t j) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "b%03zu_s%03zu", b, j);
  return buf;
}

std::vector<double> dirichlet(std::mt19937_64& rng, std::size_t k, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (auto& x : p) {
    x = gamma(rng);
    total += x;
  }
  if (total <= 0.0) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(k));
    return p;
  }
  for (auto& x : p) x /= total;
  return p;
}

struct BaseProcess {
  std::vector<double> times;
  std::vector<std::size_t> marks;
  double horizon = 0.0;
};

BaseProcess draw_base(const GeneratorConfig& cfg, std::size_t length, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double spread = 0.3 + 0.5 * unit(rng);
  std::vector<double> mark_offset(cfg.mark_vocab);
  for (auto& d : mark_offset) d = 0.4 * normal(rng);
  std::vector<std::discrete_distribution<std::size_t>> rows;
  rows.reserve(cfg.mark_vocab);
  for (std::size_t m = 0; m < cfg.mark_vocab; ++m) {
    const auto p = dirichlet(rng, cfg.mark_vocab, cfg.dirichlet_alpha);
    rows.emplace_back(p.begin(), p.end());
  }
  std::uniform_int_distribution<std::size_t> first_mark(0, cfg.mark_vocab - 1);

  BaseProcess base;
  base.times.reserve(length);
  base.marks.reserve(length);
  std::size_t prev_mark = first_mark(rng);
  double t = 0.0;
  for (std::size_t i = 0; i < length; ++i) {
    const double gap = std::exp(mark_offset[prev_mark] + spread * normal(rng));
    t += gap;
    const std::size_t mark = rows[prev_mark](rng);
    base.times.push_back(t);
    base.marks.push_back(mark);
    prev_mark = mark;
  }
  // rescale so the empirical mean inter-arrival equals the configured one
  const double factor = cfg.mean_interarrival / (t / static_cast<double>(length));
  for (auto& x : base.times) x *= factor;
  base.horizon = base.times.back() + cfg.mean_interarrival;
  return base;
}

}  // namespace

WarpFamily parse_warp_family(const std::string& name) {
  if (name == "identity") return WarpFamily::Identity;
  if (name == "affine") return WarpFamily::Affine;
  if (name == "affine_power") return WarpFamily::AffinePower;
  throw ConfigError("unknown warp family '" + name + "'");
}

std::string to_string(WarpFamily w) {
  switch (w) {
    case WarpFamily::Identity:
      return "identity";
    case WarpFamily::Affine:
      return "affine";
    case WarpFamily::AffinePower:
      return "affine_power";
  }
  return "affine_power";
}

void GeneratorConfig::validate() const {
  if (n_base < 2) throw ConfigError("n_base must be >= 2");
  if (mean_len < 4.0) throw ConfigError("mean_len must be >= 4");
  if (subseqs_min > subseqs_max) throw ConfigError("subseqs_min must be <= subseqs_max");
  if (subseqs_min < 1) throw ConfigError("subseqs_min must be >= 1");
  if (mark_vocab < 1) throw ConfigError("mark_vocab must be >= 1");
  if (!(length_spread >= 0.0 && length_spread < 1.0)) throw ConfigError("length_spread must be in [0, 1)");
  if (!(scale_min > 0.0 && scale_min <= scale_max)) throw ConfigError("warp scale range must satisfy 0 < min <= max");
  if (!(power_min > 0.0 && power_min <= power_max)) throw ConfigError("warp power range must satisfy 0 < min <= max");
  if (!(shift_fraction >= 0.0)) throw ConfigError("shift_fraction must be >= 0");
  if (!(mean_interarrival > 0.0)) throw ConfigError("mean_interarrival must be > 0");
  if (!(dirichlet_alpha > 0.0)) throw ConfigError("dirichlet_alpha must be > 0");
  if (std::llround(mean_len * (1.0 + length_spread)) > static_cast<long long>(max_len)) {
    throw ConfigError("window lengths can exceed the sequence length cap");
  }
}

GeneratedPools generate_pools(const GeneratorConfig& cfg) {
  cfg.validate();
  const auto len_lo = static_cast<std::size_t>(std::max(1LL, std::llround(cfg.mean_len * (1.0 - cfg.length_spread))));
  const auto len_hi = static_cast<std::size_t>(std::llround(cfg.mean_len * (1.0 + cfg.length_spread)));
  const std::size_t base_len = 3 * len_hi;
  const double max_shift = cfg.shift_fraction * cfg.mean_len * cfg.mean_interarrival;

  GeneratedPools out;
  for (std::size_t b = 0; b < cfg.n_base; ++b) {
    std::mt19937_64 rng(derive_seed(cfg.seed, {1, b}));
    const BaseProcess base = draw_base(cfg, base_len, rng);
    {
      std::vector<Event> ev;
      for (std::size_t i = 0; i < base_len; ++i) ev.push_back({base.times[i], base.marks[i]});
      out.bases.emplace_back(base_id(b), std::move(ev), base.horizon, base_len);
    }

    std::uniform_int_distribution<std::size_t> pool_size(cfg.subseqs_min, cfg.subseqs_max);
    std::uniform_int_distribution<std::size_t> window_len(len_lo, len_hi);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t members = pool_size(rng);
    auto& pool = out.pools[base_id(b)];
    for (std::size_t j = 0; j < members; ++j) {
      const std::size_t n = window_len(rng);
      const std::size_t start = std::uniform_int_distribution<std::size_t>(0, base_len - n)(rng);
      const double t_prev = start > 0 ? base.times[start - 1] : 0.0;
      const double t_next = start + n < base_len ? base.times[start + n] : base.horizon;

      WarpParams warp;
      if (cfg.warp != WarpFamily::Identity) {
        warp.scale = std::exp(std::log(cfg.scale_min) + unit(rng) * (std::log(cfg.scale_max) - std::log(cfg.scale_min)));
        warp.shift = unit(rng) * max_shift;
        if (cfg.warp == WarpFamily::AffinePower) warp.power = cfg.power_min + unit(rng) * (cfg.power_max - cfg.power_min);
      }

      std::vector<Event> ev;
      ev.reserve(n);
      double horizon = t_next;
      if (cfg.warp == WarpFamily::Identity) {
        for (std::size_t i = start; i < start + n; ++i) ev.push_back({base.times[i], base.marks[i]});
      } else {
        const double width = t_next - t_prev;
        for (std::size_t i = start; i < start + n; ++i) {
          const double rel = (base.times[i] - t_prev) / width;
          ev.push_back({warp.scale * width * std::pow(rel, warp.power) + warp.shift, base.marks[i]});
        }
        horizon = warp.scale * width + warp.shift;
      }
      const std::string id = derived_id(b, j);
      out.sequences.emplace_back(id, std::move(ev), horizon, cfg.max_len);
      out.warps.emplace(id, warp);
      out.window_start.emplace(id, start);
      pool.push_back(id);
    }
  }
  return out;
}

LabeledSplit derive_relevance_labels(const std::map<std::string, std::vector<std::string>>& pools, std::uint64_t seed) {
  if (pools.size() < 2) throw LabelingError("at least two pools are needed so every query has negatives");
  std::mt19937_64 rng(derive_seed(seed, {2}));
  LabeledSplit out;
  std::map<std::string, std::string> query_of_pool;
  for (const auto& [pool_id, members] : pools) {
    if (members.size() < 2) throw LabelingError("pool '" + pool_id + "' has fewer than two members");
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng);
    query_of_pool.emplace(pool_id, members[pick]);
    out.queries.push_back(members[pick]);
  }
  for (const auto& [pool_id, members] : pools) {
    for (const auto& id : members) {
      if (id != query_of_pool.at(pool_id)) out.corpus.push_back(id);
    }
  }
  for (const auto& [pool_id, members] : pools) {
    const std::string& q = query_of_pool.at(pool_id);
    QueryRelevance rel;
    const std::set<std::string> in_pool(members.begin(), members.end());
    for (const auto& c : out.corpus) {
      if (in_pool.count(c)) {
        rel.positives.insert(c);
      } else {
        rel.negatives.insert(c);
      }
    }
    out.labels.by_query.emplace(q, std::move(rel));
  }
  return out;
}

QuerySplit split_queries(std::vector<std::string> query_ids, const std::vector<double>& ratios, std::uint64_t seed) {
  if (ratios.size() != 3) throw SplitError("expected three ratios (train, val, test)");
  double total = 0.0;
  std::size_t positive_parts = 0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw SplitError("ratios must be nonnegative");
    total += r;
    if (r > 0.0) ++positive_parts;
  }
  if (std::abs(total - 1.0) > 1e-9) throw SplitError("ratios must sum to 1");
  const std::size_t n = query_ids.size();
  if (n < positive_parts) throw SplitError("fewer queries than partitions");

  std::vector<std::size_t> sizes(3);
  std::vector<double> frac(3);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::vector<std::size_t> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % 3) {
    if (ratios[order[k]] > 0.0) {
      ++sizes[order[k]];
      ++assigned;
    }
  }
  // every part with a positive ratio gets at least one query
  for (std::size_t i = 0; i < 3; ++i) {
    if (ratios[i] > 0.0 && sizes[i] == 0) {
      const auto donor = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      --sizes[donor];
      ++sizes[i];
    }
  }

  std::sort(query_ids.begin(), query_ids.end());
  std::mt19937_64 rng(derive_seed(seed, {3}));
  std::shuffle(query_ids.begin(), query_ids.end(), rng);
  QuerySplit split;
  auto it = query_ids.begin();
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  split.val.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  split.test.assign(it, it + static_cast<std::ptrdiff_t>(sizes[2]));
  return split;
}

Dataset generate_synthetic(const GeneratorConfig& cfg) {
  GeneratedPools pools = generate_pools(cfg);
  LabeledSplit labeled = derive_relevance_labels(pools.pools, cfg.seed);
  const std::set<std::string> query_set(labeled.queries.begin(), labeled.queries.end());

  Dataset data;
  data.mark_vocab_size = cfg.mark_vocab;
  for (auto& s : pools.sequences) {
    const std::string id = s.id();
    if (query_set.count(id)) {
      data.queries.emplace(id, std::move(s));
    } else {
      data.corpus.emplace(id, std::move(s));
    }
  }
  data.labels = std::move(labeled.labels);
  data.split = split_queries(labeled.queries, {0.5, 0.1, 0.4}, cfg.seed);
  data.validate();
  return data;
}

}  // namespace seqret
