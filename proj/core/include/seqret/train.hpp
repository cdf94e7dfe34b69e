#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "seqret/ctes.hpp"
#include "seqret/evalkit.hpp"
#include "seqret/mtpp.hpp"
#include "seqret/relevance.hpp"
#include "seqret/unwarp.hpp"

namespace seqret {

// --- model bundle --------------------------------------------------------------

struct BundleConfig {
  MtppConfig mtpp;        // mode is overridden per model
  UnwarpConfig unwarp;
  FisherConfig fisher;
  double gamma = 0.1;
  /// Scale inputs by 1/T and 1/mean inter-arrival of the data.
  bool data_scaled_inputs = true;
};

/// Both attention models, the unwarper and the scoring state that goes with
/// them. Everything needed to score a pair is in here.
struct ModelBundle {
  MtppModel self;
  MtppModel cross;
  UnwarpNet unwarp;
  FisherConfig fisher;
  FisherStats self_stats;
  FisherStats cross_stats;
  double gamma = 0.1;
  double horizon = 0.0;  // global T of the data the bundle was built for
  nlohmann::json meta = nlohmann::json::object();

  /// Fresh models with data-dependent head init; Fisher statistics estimated
  /// from the corpus.
  static ModelBundle init(const Dataset& data, const BundleConfig& cfg, std::uint64_t seed);

  ScorerParts scorer_parts() const;
  const MtppModel& model_for(ScoreMode mode) const;

  /// Every parameter under its prefixed name.
  diff::ParamStore joint_params() const;
  /// Write back tensors whose names belong to one of the models.
  void assign(const diff::ParamStore& joint);

  void refresh_fisher_stats(const std::vector<const EventSequence*>& corpus);

  void save(const std::filesystem::path& path) const;
  static ModelBundle load(const std::filesystem::path& path);

  friend bool operator==(const ModelBundle& a, const ModelBundle& b);
};

std::vector<const EventSequence*> corpus_pointers(const Dataset& data);

// --- scoring over a dataset ------------------------------------------------------

/// Scores query/candidate pairs of one dataset with a bundle. Corpus self
/// vectors are computed once up front; the object is then read-only and safe
/// to share between threads.
class CorpusScorer {
 public:
  CorpusScorer(const ModelBundle& bundle, const Dataset& data, ScoreMode mode, std::size_t workers = 1);

  ScoreMode mode() const noexcept { return mode_; }
  const Scorer& scorer() const noexcept { return scorer_; }
  const std::vector<double>* self_vector(const std::string& corpus_id) const;

  std::vector<ScoreRecord> score(const EventSequence& query, const std::vector<std::string>& candidates) const;
  /// Candidate scores in the order given, for evaluate_protocol.
  CandidateScorer candidate_scorer() const;

 private:
  const Dataset& data_;
  ScoreMode mode_;
  Scorer scorer_;
  std::map<std::string, std::vector<double>> self_vectors_;
};

MetricReport evaluate_bundle(const ModelBundle& bundle, const Dataset& data, const std::vector<std::string>& queries,
                             ScoreMode mode, const ProtocolConfig& protocol);

/// Picks gamma from `grid` by MAP on `queries` (first best wins), scoring
/// every pair once. Returns (gamma, MAP) per grid entry.
std::vector<std::pair<double, double>> gamma_sweep(const ModelBundle& bundle, const Dataset& data,
                                                   const std::vector<std::string>& queries, ScoreMode mode,
                                                   const std::vector<double>& grid, const ProtocolConfig& protocol);

// --- objective -------------------------------------------------------------------

/// max(0, s_neg - s_pos + margin).
double hinge_rank_loss(double s_pos, double s_neg, double margin);

enum class Optimization { EndToEnd, Staged };
Optimization parse_optimization(const std::string& s);
std::string to_string(Optimization o);

struct TrainConfig {
  ScoreMode mode = ScoreMode::SelfAttn;  // SelfAttn, CrossAttn or HashNsr
  Optimization optimization = Optimization::EndToEnd;
  double margin = 0.1;
  double gamma = 0.1;
  double lr = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;       // queries per optimizer step
  std::size_t negatives = 100;       // sampled per query per epoch
  std::size_t max_pairs = 2000;      // per query per epoch
  double l2 = 0.0;
  double dropout = 0.0;
  std::size_t patience = 5;
  std::size_t mle_epochs = 5;        // staged stage 1
  std::size_t mle_batch = 32;        // sequences per MLE step
  std::vector<double> gamma_grid;    // validation sweep after training; empty keeps gamma
  std::size_t val_negatives = 1000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const;
};

/// One query with its candidates and the (positive, negative) index pairs
/// into `candidates`.
struct PairExample {
  const EventSequence* query = nullptr;
  std::vector<const EventSequence*> candidates;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

/// What the ranking objective needs besides parameters.
struct ObjectiveSpec {
  ScoreMode mode = ScoreMode::SelfAttn;
  double margin = 0.1;
  double gamma = 0.1;
  /// Preconditioner of the mode's Fisher vectors (empty = identity).
  std::vector<double> preconditioner;
  std::vector<std::string> fisher_names;
  /// Parameters differentiated, sorted; gradients are flattened in this order.
  std::vector<std::string> wrt;
  /// Dropout / unwarp-noise seed; nullopt = deterministic forward passes.
  std::optional<std::uint64_t> seed;
};

/// Spec for `mode` with wrt = every parameter of the mode's model and of the
/// unwarper.
ObjectiveSpec objective_spec(const ModelBundle& bundle, ScoreMode mode, double margin, double gamma);

/// Leaves over `joint` that track gradients for spec.wrt and the Fisher subset.
diff::BoundParams bind_params(const diff::ParamStore& joint, const ObjectiveSpec& spec);

/// Sum of hinge losses of one example as a single graph (differentiable to
/// any order; meant for small instances and checks).
diff::Var pair_hinge_var(const ModelBundle& bundle, const diff::BoundParams& p, const PairExample& ex,
                         const ObjectiveSpec& spec);

struct HingeGradient {
  double loss = 0.0;         // sum of hinge terms
  std::size_t pairs = 0;
  std::size_t active = 0;    // pairs with positive loss
  std::vector<double> grad;  // d loss / d spec.wrt
};

/// Same value and gradient as pair_hinge_var, computed one candidate graph at
/// a time: scores first, then only candidates in active pairs are
/// differentiated.
HingeGradient pair_hinge_gradient(const ModelBundle& bundle, const diff::BoundParams& p, const PairExample& ex,
                                  const ObjectiveSpec& spec);

/// mean hinge over all pairs + unwarp penalty (when unwarp params train) +
/// l2 * sum of squared trainable params.
diff::Var ranking_objective_var(const ModelBundle& bundle, const diff::BoundParams& p,
                                const std::vector<PairExample>& batch, const ObjectiveSpec& spec, double l2);

struct ObjectiveGradient {
  double objective = 0.0;
  double hinge = 0.0;  // mean hinge
  std::vector<double> grad;
};

/// Gradient of ranking_objective_var through pair_hinge_gradient, one worker
/// per example and a reduction in example order. Example i runs with seed
/// derive_seed(spec.seed, {i}) in both functions.
ObjectiveGradient ranking_objective_gradient(const ModelBundle& bundle, const diff::ParamStore& joint,
                                             const std::vector<PairExample>& batch, const ObjectiveSpec& spec, double l2,
                                             std::size_t workers = 1);

// --- training loop ----------------------------------------------------------------

struct HistoryRow {
  std::size_t epoch = 0;
  std::string stage;  // "mle", "rank"
  double loss = 0.0;
  double val_map = 0.0;
};

struct TrainHistory {
  std::vector<HistoryRow> rows;
  std::size_t best_epoch = 0;
  double best_val_map = 0.0;
  double initial_val_map = 0.0;
  bool stopped_early = false;
  bool diverged = false;
  std::string divergence;
  std::vector<std::pair<double, double>> gamma_sweep;

  /// epoch,loss,val_map
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainOptions {
  /// When set, the bundle is checkpointed here at every validation improvement.
  std::optional<std::filesystem::path> checkpoint;
  /// Progress lines go here when set.
  std::function<void(const std::string&)> log;
};

/// Trains the parts of the bundle used by cfg.mode. Returns the bundle with
/// the best validation MAP (the input counts as epoch 0).
ModelBundle train(ModelBundle bundle, const Dataset& data, const TrainConfig& cfg, TrainHistory* history = nullptr,
                  const TrainOptions& options = {});

/// Pair construction for one query and epoch: every positive against
/// `negatives` sampled negatives, at most `max_pairs` pairs.
PairExample sample_pairs(const Dataset& data, const std::string& query_id, std::size_t negatives, std::size_t max_pairs,
                         std::uint64_t seed);

}  // namespace seqret
