#include "seqret/hashindex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "seqret/diff/adam.hpp"
#include "seqret/diff/checkpoint.hpp"
#include "seqret/errors.hpp"
#include "seqret/seeding.hpp"

namespace seqret {

using diff::BoundParams;
using diff::ParamStore;
using diff::Tensor;
using diff::Var;

HashScheme parse_hash_scheme(const std::string& s) {
  if (s == "rh" || s == "random_hyperplane") return HashScheme::RandomHyperplane;
  if (s == "learned") return HashScheme::Learned;
  throw ConfigError("unknown hash scheme '" + s + "'");
}

std::string to_string(HashScheme s) { return s == HashScheme::Learned ? "learned" : "random_hyperplane"; }

std::string to_string(LookupStage s) {
  switch (s) {
    case LookupStage::Exact:
      return "exact";
    case LookupStage::Hamming1:
      return "hamming1";
    case LookupStage::Exhaustive:
      return "exhaustive";
  }
  return "exact";
}

void HashWeights::validate() const {
  if (!(eta1 >= 0.0 && eta2 >= 0.0 && eta3 >= 0.0)) throw ConfigError("hash weights must be nonnegative");
  if (std::abs(eta1 + eta2 + eta3 - 1.0) > 1e-9) throw ConfigError("hash weights must sum to 1");
}

void HashTrainConfig::validate() const {
  weights.validate();
  if (code_length == 0) throw ConfigError("code length must be positive");
  if (!(lr > 0.0)) throw ConfigError("hash learning rate must be positive");
}

// --- HashNet -----------------------------------------------------------------

HashNet::HashNet(std::size_t input_dim, std::size_t code_length, ParamStore params)
    : input_dim_(input_dim), code_length_(code_length), params_(std::move(params)) {
  auto expect = [&](const std::string& name, std::size_t r, std::size_t c) {
    if (!params_.contains(name)) throw ConfigError("hash net is missing " + name);
    const Tensor& t = params_.at(name);
    if (t.rows() != r || t.cols() != c) throw DimensionError("hash net parameter " + name + " has the wrong shape");
  };
  expect(kPrefix + "W1", input_dim, input_dim);
  expect(kPrefix + "b1", 1, input_dim);
  expect(kPrefix + "W2", input_dim, code_length);
  expect(kPrefix + "b2", 1, code_length);
}

HashNet HashNet::init(std::size_t input_dim, std::size_t code_length, std::uint64_t seed, std::span<const double> mean) {
  if (input_dim == 0 || code_length == 0) throw ConfigError("hash net dimensions must be positive");
  if (!mean.empty() && mean.size() != input_dim) throw DimensionError("mean has the wrong length");
  std::mt19937_64 rng(derive_seed(seed, {23}));
  std::normal_distribution<double> normal(0.0, 1.0);
  // Unit-variance first layer: inputs are unit-norm embeddings, so this keeps
  // the hidden pre-activations O(1) rather than in the linear range of tanh.
  Tensor w1 = Tensor::matrix(input_dim, input_dim);
  for (double& x : w1.data()) x = normal(rng);
  Tensor w2 = Tensor::matrix(input_dim, code_length);
  for (double& x : w2.data()) x = normal(rng) / std::sqrt(static_cast<double>(input_dim));
  Tensor b1 = Tensor::matrix(1, input_dim);
  if (!mean.empty()) {
    for (std::size_t j = 0; j < input_dim; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < input_dim; ++i) acc += mean[i] * w1(i, j);
      b1(0, j) = -acc;
    }
  }
  ParamStore ps;
  ps.add(kPrefix + "W1", std::move(w1));
  ps.add(kPrefix + "b1", std::move(b1));
  ps.add(kPrefix + "W2", std::move(w2));
  ps.add(kPrefix + "b2", Tensor::matrix(1, code_length));
  return HashNet(input_dim, code_length, std::move(ps));
}

Var HashNet::forward(const BoundParams& p, const Var& x) const {
  if (x.cols() != input_dim_) throw DimensionError("hash net input has the wrong width");
  const Var h = diff::tanh(diff::add_row(diff::matmul(x, p[kPrefix + "W1"]), p[kPrefix + "b1"]));
  return diff::add_row(diff::matmul(h, p[kPrefix + "W2"]), p[kPrefix + "b2"]);
}

std::vector<double> HashNet::forward(std::span<const double> v) const {
  if (v.size() != input_dim_) throw DimensionError("hash net input has the wrong length");
  const Tensor& w1 = params_.at(kPrefix + "W1");
  const Tensor& b1 = params_.at(kPrefix + "b1");
  const Tensor& w2 = params_.at(kPrefix + "W2");
  const Tensor& b2 = params_.at(kPrefix + "b2");
  std::vector<double> h(input_dim_);
  for (std::size_t j = 0; j < input_dim_; ++j) {
    double acc = b1(0, j);
    for (std::size_t i = 0; i < input_dim_; ++i) acc += v[i] * w1(i, j);
    h[j] = std::tanh(acc);
  }
  std::vector<double> out(code_length_);
  for (std::size_t r = 0; r < code_length_; ++r) {
    double acc = b2(0, r);
    for (std::size_t j = 0; j < input_dim_; ++j) acc += h[j] * w2(j, r);
    out[r] = acc;
  }
  return out;
}

// --- objective ---------------------------------------------------------------

namespace {

double pair_count(std::size_t r) { return static_cast<double>(r) * static_cast<double>(r - 1) / 2.0; }

Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows, std::size_t width) {
  Tensor t = Tensor::matrix(rows.size(), width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != width) throw DimensionError("embedding has the wrong length");
    std::copy(rows[i].begin(), rows[i].end(), t.data().begin() + static_cast<long>(i * width));
  }
  return t;
}

}  // namespace

HashTerms hash_objective_terms(const Tensor& t, const HashWeights& w) {
  w.validate();
  const std::size_t n = t.rows();
  const std::size_t r = t.cols();
  if (n == 0) throw InputError("hash objective needs at least one embedding");
  HashTerms out;
  for (std::size_t c = 0; c < n; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      s += t(c, i);
      out.quantization += std::abs(std::abs(t(c, i)) - 1.0);
    }
    out.balance += std::abs(s);
  }
  out.balance *= w.eta1 / static_cast<double>(n);
  out.quantization *= w.eta2 / static_cast<double>(n);
  if (r > 1) {
    double pairs = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = i + 1; j < r; ++j) {
        double g = 0.0;
        for (std::size_t c = 0; c < n; ++c) g += t(c, i) * t(c, j);
        pairs += std::abs(g);
      }
    }
    out.decorrelation = 2.0 * w.eta3 / pair_count(r) * pairs;
  }
  out.total = out.balance + out.quantization + out.decorrelation;
  return out;
}

Var hash_objective(const HashNet& net, const BoundParams& p, const Var& x, const HashWeights& w) {
  w.validate();
  const double n = static_cast<double>(x.rows());
  const std::size_t r = net.code_length();
  const Var t = diff::tanh(net.forward(p, x));
  Var total = diff::scale(diff::sum(diff::abs(diff::row_sum(t))), w.eta1 / n);
  total = diff::add(total, diff::scale(diff::sum(diff::abs(diff::add_scalar(diff::abs(t), -1.0))), w.eta2 / n));
  if (r > 1) {
    // Gram matrix over codes; its off-diagonal sum counts each pair twice
    // and its diagonal is nonnegative.
    const Var gram = diff::matmul(diff::transpose(t), t);
    const Var off = diff::sub(diff::sum(diff::abs(gram)), diff::sum(diff::square(t)));
    total = diff::add(total, diff::scale(off, w.eta3 / pair_count(r)));
  }
  return total;
}

double hash_objective(const HashNet& net, const std::vector<std::vector<double>>& embeddings, const HashWeights& w) {
  diff::NoGradGuard guard;
  const BoundParams p(net.params(), false);
  return hash_objective(net, p, Var::constant(rows_to_tensor(embeddings, net.input_dim())), w).item();
}

double per_bit_balance(const std::vector<HashCode>& codes) {
  if (codes.empty()) return 0.0;
  const std::size_t r = codes.front().size();
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    double m = 0.0;
    for (const auto& c : codes) m += c[i];
    total += std::abs(m / static_cast<double>(codes.size()));
  }
  return total / static_cast<double>(r);
}

double mean_abs_bit_correlation(const std::vector<HashCode>& codes) {
  if (codes.empty() || codes.front().size() < 2) return 0.0;
  const std::size_t r = codes.front().size();
  const double n = static_cast<double>(codes.size());
  std::vector<double> mean(r, 0.0);
  for (const auto& c : codes)
    for (std::size_t i = 0; i < r; ++i) mean[i] += c[i] / n;
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = i + 1; j < r; ++j) {
      const double vi = 1.0 - mean[i] * mean[i];
      const double vj = 1.0 - mean[j] * mean[j];
      if (vi <= 1e-12 || vj <= 1e-12) {
        total += 1.0;  // a constant bit carries nothing beyond the others
        continue;
      }
      double m = 0.0;
      for (const auto& c : codes) m += c[i] * c[j] / n;
      total += std::abs(m - mean[i] * mean[j]) / std::sqrt(vi * vj);
    }
  }
  return total / pair_count(r);
}

HashNet train_hash_net(const std::vector<std::vector<double>>& embeddings, const HashTrainConfig& cfg,
                       HashTrainReport* report) {
  cfg.validate();
  if (embeddings.size() < 2) throw InputError("hash training needs at least two embeddings");
  const std::size_t d = embeddings.front().size();
  const Tensor x = rows_to_tensor(embeddings, d);
  std::vector<double> mean;
  if (cfg.center_inputs) {
    mean.assign(d, 0.0);
    for (const auto& e : embeddings)
      for (std::size_t i = 0; i < d; ++i) mean[i] += e[i] / static_cast<double>(embeddings.size());
  }
  HashNet net = HashNet::init(d, cfg.code_length, cfg.seed, mean);

  auto codes_of = [&](const HashNet& n) {
    const Hasher h = Hasher::learned(n);
    std::vector<HashCode> out;
    out.reserve(embeddings.size());
    for (const auto& e : embeddings) out.push_back(h.code(e));
    return out;
  };
  HashTrainReport rep;
  {
    const auto c0 = codes_of(net);
    rep.initial_balance = per_bit_balance(c0);
    rep.initial_correlation = mean_abs_bit_correlation(c0);
  }

  const Var xv = Var::constant(x);
  auto loss = [&](const BoundParams& p) { return hash_objective(net, p, xv, cfg.weights); };
  diff::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  diff::AdamState state = diff::AdamState::for_params(net.params(), adam_cfg);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t step = 0; step < cfg.epochs; ++step) {
    const BoundParams p(net.params(), true);
    const Var l = loss(p);
    const auto grads = diff::grad(l, p.leaves());
    const auto names = p.names();
    diff::adam_step(state, net.params(), diff::flatten_grads(net.params(), names, grads));
    rep.objective.push_back(l.item());
    best = std::min(best, l.item());
    rep.best_so_far.push_back(best);
  }
  const auto c1 = codes_of(net);
  rep.balance = per_bit_balance(c1);
  rep.correlation = mean_abs_bit_correlation(c1);
  if (report) *report = std::move(rep);
  return net;
}

// --- Hasher ------------------------------------------------------------------

Hasher Hasher::random_hyperplane(std::size_t input_dim, std::size_t code_length, std::uint64_t seed) {
  if (input_dim == 0 || code_length == 0) throw ConfigError("hyperplane dimensions must be positive");
  Hasher h;
  h.scheme_ = HashScheme::RandomHyperplane;
  h.input_dim_ = input_dim;
  h.code_length_ = code_length;
  h.hyperplanes_ = Tensor::matrix(code_length, input_dim);
  std::mt19937_64 rng(derive_seed(seed, {29}));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t r = 0; r < code_length; ++r) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t i = 0; i < input_dim; ++i) {
        h.hyperplanes_(r, i) = normal(rng);
        norm += h.hyperplanes_(r, i) * h.hyperplanes_(r, i);
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < input_dim; ++i) h.hyperplanes_(r, i) /= norm;
  }
  return h;
}

Hasher Hasher::learned(HashNet net) {
  Hasher h;
  h.scheme_ = HashScheme::Learned;
  h.input_dim_ = net.input_dim();
  h.code_length_ = net.code_length();
  h.net_ = std::move(net);
  return h;
}

std::vector<double> Hasher::pre_sign(std::span<const double> v) const {
  if (v.size() != input_dim_) throw DimensionError("embedding length does not match the hasher");
  if (scheme_ == HashScheme::Learned) return net_->forward(v);
  std::vector<double> out(code_length_);
  for (std::size_t r = 0; r < code_length_; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < input_dim_; ++i) acc += hyperplanes_(r, i) * v[i];
    out[r] = acc;
  }
  return out;
}

HashCode Hasher::code(std::span<const double> v) const {
  if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }))
    throw DegenerateInputError("cannot hash a zero vector");
  const auto pre = pre_sign(v);
  HashCode c(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) c[i] = pre[i] >= 0.0 ? 1 : -1;
  return c;
}

nlohmann::json Hasher::to_json() const {
  nlohmann::json j = {{"scheme", to_string(scheme_)}, {"input_dim", input_dim_}, {"R", code_length_}};
  if (scheme_ == HashScheme::Learned) {
    j["params"] = diff::params_to_json(net_->params());
  } else {
    j["hyperplanes"] = hyperplanes_.storage();
  }
  return j;
}

Hasher Hasher::from_json(const nlohmann::json& j) {
  try {
    Hasher h;
    h.scheme_ = parse_hash_scheme(j.at("scheme").get<std::string>());
    h.input_dim_ = j.at("input_dim").get<std::size_t>();
    h.code_length_ = j.at("R").get<std::size_t>();
    if (h.scheme_ == HashScheme::Learned) {
      h.net_ = HashNet(h.input_dim_, h.code_length_, diff::params_from_json(j.at("params")));
    } else {
      auto data = j.at("hyperplanes").get<std::vector<double>>();
      if (data.size() != h.input_dim_ * h.code_length_) throw FormatError("hyperplane table has the wrong size");
      h.hyperplanes_ = Tensor({h.code_length_, h.input_dim_}, std::move(data));
    }
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed hasher: ") + e.what());
  }
}

// --- buckets -----------------------------------------------------------------

IndexProfile IndexProfile::parse(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ConfigError("unknown index profile '" + name + "'");
}

std::uint64_t bucket_id(const HashCode& code, std::span<const std::size_t> positions) {
  std::uint64_t id = 0;
  for (std::size_t p : positions) {
    if (p >= code.size()) throw DimensionError("bit position outside the code");
    id = (id << 1) | (code[p] > 0 ? 1u : 0u);
  }
  return id;
}

HashIndex::HashIndex(Hasher hasher, IndexProfile profile, std::uint64_t seed)
    : hasher_(std::move(hasher)), profile_(profile), seed_(seed) {
  const std::size_t r = hasher_.code_length();
  if (profile_.bits > r) throw ConfigError("bits per table exceed the code length");
  if (profile_.bits > 63) throw ConfigError("at most 63 bits per table are supported");
  if (profile_.tables == 0) throw ConfigError("an index needs at least one table");
  for (std::size_t m = 0; m < profile_.tables; ++m) {
    std::vector<std::size_t> all(r);
    std::iota(all.begin(), all.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, {31, m}));
    for (std::size_t i = 0; i < profile_.bits; ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, r - 1)(rng);
      std::swap(all[i], all[j]);
    }
    all.resize(profile_.bits);
    tables_.push_back({std::move(all), {}});
  }
}

void HashIndex::check_code(const HashCode& code) const {
  if (code.size() != hasher_.code_length()) throw DimensionError("code length does not match the index");
}

std::vector<std::pair<std::size_t, std::uint64_t>> HashIndex::assign_buckets(const HashCode& code) const {
  check_code(code);
  std::vector<std::pair<std::size_t, std::uint64_t>> out;
  for (std::size_t m = 0; m < tables_.size(); ++m) out.emplace_back(m, bucket_id(code, tables_[m].positions));
  return out;
}

void HashIndex::insert(const std::string& id, const HashCode& code) {
  check_code(code);
  if (codes_.count(id)) throw InputError("id '" + id + "' is already indexed");
  for (const auto& [m, b] : assign_buckets(code)) {
    auto& ids = tables_[m].buckets[b];
    ids.insert(std::upper_bound(ids.begin(), ids.end(), id), id);
  }
  codes_.emplace(id, code);
}

std::vector<std::string> HashIndex::lookup(const HashCode& query) const {
  std::set<std::string> out;
  for (const auto& [m, b] : assign_buckets(query)) {
    const auto it = tables_[m].buckets.find(b);
    if (it != tables_[m].buckets.end()) out.insert(it->second.begin(), it->second.end());
  }
  return {out.begin(), out.end()};
}

LookupResult HashIndex::lookup_with_fallback(const HashCode& query) const {
  LookupResult r;
  r.ids = lookup(query);
  if (!r.ids.empty()) return r;
  std::set<std::string> near;
  for (const auto& [m, b] : assign_buckets(query)) {
    for (std::size_t bit = 0; bit < profile_.bits; ++bit) {
      const auto it = tables_[m].buckets.find(b ^ (std::uint64_t{1} << bit));
      if (it != tables_[m].buckets.end()) near.insert(it->second.begin(), it->second.end());
    }
  }
  if (!near.empty()) {
    r.ids.assign(near.begin(), near.end());
    r.stage = LookupStage::Hamming1;
    return r;
  }
  for (const auto& [id, code] : codes_) r.ids.push_back(id);
  r.stage = LookupStage::Exhaustive;
  return r;
}

nlohmann::json HashIndex::to_json() const {
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& t : tables_) {
    nlohmann::json buckets = nlohmann::json::object();
    for (const auto& [b, ids] : t.buckets) buckets[std::to_string(b)] = ids;
    tables.push_back({{"positions", t.positions}, {"buckets", buckets}});
  }
  nlohmann::json codes = nlohmann::json::object();
  for (const auto& [id, c] : codes_) codes[id] = std::vector<int>(c.begin(), c.end());
  return {{"format_version", 1},
          {"scheme", to_string(hasher_.scheme())},
          {"R", hasher_.code_length()},
          {"M", profile_.tables},
          {"L", profile_.bits},
          {"seed", seed_},
          {"tables", tables},
          {"codes", codes},
          {"hasher", hasher_.to_json()}};
}

HashIndex HashIndex::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != 1) throw FormatError("unsupported index format version");
    HashIndex idx;
    idx.hasher_ = Hasher::from_json(j.at("hasher"));
    idx.profile_ = {j.at("M").get<std::size_t>(), j.at("L").get<std::size_t>()};
    idx.seed_ = j.at("seed").get<std::uint64_t>();
    if (j.at("R").get<std::size_t>() != idx.hasher_.code_length()) throw FormatError("index R disagrees with its hasher");
    for (const auto& t : j.at("tables")) {
      HashTable table;
      table.positions = t.at("positions").get<std::vector<std::size_t>>();
      if (table.positions.size() != idx.profile_.bits) throw FormatError("table has the wrong number of positions");
      for (const auto& [key, ids] : t.at("buckets").items())
        table.buckets[std::stoull(key)] = ids.get<std::vector<std::string>>();
      idx.tables_.push_back(std::move(table));
    }
    if (idx.tables_.size() != idx.profile_.tables) throw FormatError("index has the wrong number of tables");
    for (const auto& [id, c] : j.at("codes").items()) {
      const auto v = c.get<std::vector<int>>();
      HashCode code(v.begin(), v.end());
      idx.check_code(code);
      idx.codes_.emplace(id, std::move(code));
    }
    return idx;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed index: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw FormatError("malformed bucket id");
  }
}

void HashIndex::save(const std::filesystem::path& path) const { diff::write_json_file(path, to_json()); }

HashIndex HashIndex::load(const std::filesystem::path& path) { return from_json(diff::read_json_file(path)); }

}  // namespace seqret
