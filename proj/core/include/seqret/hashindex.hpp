#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seqret/diff/param_store.hpp"

namespace seqret {

using HashCode = std::vector<std::int8_t>;  // entries in {-1, +1}

enum class HashScheme { RandomHyperplane, Learned };

HashScheme parse_hash_scheme(const std::string& s);  // "rh" / "random_hyperplane" / "learned"
std::string to_string(HashScheme s);

/// Weights of the balance, quantization and decorrelation terms:
///   eta1/|C| sum_c |1^T t_c| + eta2/|C| sum_c || |t_c| - 1 ||_1
///     + 2 eta3 / C(R,2) sum_{i<j} |sum_c t_c[i] t_c[j]|
/// with t_c = tanh(Lambda_psi(v_c)).
struct HashWeights {
  double eta1 = 0.4;
  double eta2 = 0.3;
  double eta3 = 0.3;

  void validate() const;
};

/// Lambda_psi: tanh hidden layer of the input width, then linear to R.
/// Parameters: hash.W1 (d x d), hash.b1 (1 x d), hash.W2 (d x R), hash.b2 (1 x R).
class HashNet {
 public:
  static inline const std::string kPrefix = "hash.";

  HashNet(std::size_t input_dim, std::size_t code_length, diff::ParamStore params);
  /// Random weights; the hidden bias is set so that the hidden layer sees
  /// centred inputs when `mean` (the embedding mean) is given.
  static HashNet init(std::size_t input_dim, std::size_t code_length, std::uint64_t seed,
                      std::span<const double> mean = {});

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t code_length() const noexcept { return code_length_; }
  const diff::ParamStore& params() const noexcept { return params_; }
  diff::ParamStore& params() noexcept { return params_; }

  /// Lambda_psi over the rows of x (n x d) -> n x R.
  diff::Var forward(const diff::BoundParams& p, const diff::Var& x) const;
  std::vector<double> forward(std::span<const double> v) const;

  friend bool operator==(const HashNet&, const HashNet&) = default;

 private:
  std::size_t input_dim_;
  std::size_t code_length_;
  diff::ParamStore params_;
};

struct HashTerms {
  double balance = 0.0;
  double quantization = 0.0;
  double decorrelation = 0.0;
  double total = 0.0;
};

/// Objective terms from already squashed outputs t = tanh(Lambda) (n x R).
HashTerms hash_objective_terms(const diff::Tensor& squashed, const HashWeights& w);

/// Differentiable objective over the rows of x.
diff::Var hash_objective(const HashNet& net, const diff::BoundParams& p, const diff::Var& x, const HashWeights& w);
double hash_objective(const HashNet& net, const std::vector<std::vector<double>>& embeddings, const HashWeights& w);

/// Mean over bits of |mean_c code[i]|.
double per_bit_balance(const std::vector<HashCode>& codes);
/// Mean over bit pairs i < j of |Pearson correlation| across codes; a pair
/// with a constant bit counts as 1.
double mean_abs_bit_correlation(const std::vector<HashCode>& codes);

struct HashTrainConfig {
  HashWeights weights;
  std::size_t code_length = 32;
  std::size_t epochs = 300;  // full-batch Adam steps
  double lr = 1e-2;
  bool center_inputs = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct HashTrainReport {
  std::vector<double> objective;     // per step
  std::vector<double> best_so_far;   // running minimum
  double initial_balance = 0.0;
  double initial_correlation = 0.0;
  double balance = 0.0;
  double correlation = 0.0;
};

HashNet train_hash_net(const std::vector<std::vector<double>>& embeddings, const HashTrainConfig& cfg,
                       HashTrainReport* report = nullptr);

/// Maps embeddings to sign codes under either scheme. Zero pre-sign values
/// resolve to +1.
class Hasher {
 public:
  /// R Gaussian directions normalised to unit length.
  static Hasher random_hyperplane(std::size_t input_dim, std::size_t code_length, std::uint64_t seed);
  static Hasher learned(HashNet net);

  HashScheme scheme() const noexcept { return scheme_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t code_length() const noexcept { return code_length_; }
  const diff::Tensor& hyperplanes() const noexcept { return hyperplanes_; }
  const std::optional<HashNet>& net() const noexcept { return net_; }

  std::vector<double> pre_sign(std::span<const double> v) const;
  /// Throws DegenerateInputError for a zero vector, DimensionError on size.
  HashCode code(std::span<const double> v) const;

  nlohmann::json to_json() const;
  static Hasher from_json(const nlohmann::json& j);

  friend bool operator==(const Hasher&, const Hasher&) = default;

 private:
  HashScheme scheme_ = HashScheme::RandomHyperplane;
  std::size_t input_dim_ = 0;
  std::size_t code_length_ = 0;
  diff::Tensor hyperplanes_;  // R x d
  std::optional<HashNet> net_;
};

struct IndexProfile {
  std::size_t tables = 4;  // M
  std::size_t bits = 6;    // L

  static IndexProfile desk() { return {4, 6}; }
  static IndexProfile paper() { return {10, 12}; }
  static IndexProfile parse(const std::string& name);

  friend bool operator==(const IndexProfile&, const IndexProfile&) = default;
};

struct HashTable {
  std::vector<std::size_t> positions;  // L distinct bit positions
  std::map<std::uint64_t, std::vector<std::string>> buckets;  // ids kept sorted

  friend bool operator==(const HashTable&, const HashTable&) = default;
};

/// Big-endian L-bit key from the selected positions (+1 -> 1, -1 -> 0).
std::uint64_t bucket_id(const HashCode& code, std::span<const std::size_t> positions);

enum class LookupStage { Exact, Hamming1, Exhaustive };
std::string to_string(LookupStage s);

struct LookupResult {
  std::vector<std::string> ids;  // sorted
  LookupStage stage = LookupStage::Exact;
};

class HashIndex {
 public:
  /// Draws each table's positions from the seed. ConfigError when L > R or
  /// L > 63.
  HashIndex(Hasher hasher, IndexProfile profile, std::uint64_t seed);

  const Hasher& hasher() const noexcept { return hasher_; }
  const IndexProfile& profile() const noexcept { return profile_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<HashTable>& tables() const noexcept { return tables_; }
  const std::map<std::string, HashCode>& codes() const noexcept { return codes_; }
  std::size_t size() const noexcept { return codes_.size(); }

  /// (table, bucket id) for every table.
  std::vector<std::pair<std::size_t, std::uint64_t>> assign_buckets(const HashCode& code) const;
  /// Adds an id with its code; re-inserting an id is an InputError.
  void insert(const std::string& id, const HashCode& code);

  /// Union of the query's bucket in every table (possibly empty).
  std::vector<std::string> lookup(const HashCode& query) const;
  /// lookup, widened to buckets at Hamming distance 1 and then to every id
  /// when still empty.
  LookupResult lookup_with_fallback(const HashCode& query) const;

  nlohmann::json to_json() const;
  static HashIndex from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static HashIndex load(const std::filesystem::path& path);

  friend bool operator==(const HashIndex&, const HashIndex&) = default;

 private:
  HashIndex() = default;
  void check_code(const HashCode& code) const;

  Hasher hasher_;
  IndexProfile profile_;
  std::uint64_t seed_ = 0;
  std::vector<HashTable> tables_;
  std::map<std::string, HashCode> codes_;
};

}  // namespace seqret
