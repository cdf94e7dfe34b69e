#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqret/ctes.hpp"
#include "seqret/mtpp.hpp"
#include "seqret/unwarp.hpp"

namespace seqret {

// --- model-independent similarity ------------------------------------------

struct SimU {
  double delta_t = 0.0;
  double delta_x = 0.0;
  double sim_u = 0.0;
};

/// Aligned time/mark mismatch with tail terms (T - t) for the surplus events
/// of the longer sequence. T must bound every event time.
SimU sim_u(const EventSequence& unwarped_q, const EventSequence& c, double horizon);

/// -Delta_t - Delta_x, differentiable in the (unwarped) query times.
diff::Var sim_u_var(const diff::Var& q_times, const std::vector<std::size_t>& q_marks, const EventSequence& c,
                    double horizon);

// --- Fisher vectors ----------------------------------------------------------

enum class FisherMode { Identity, EmpiricalDiagonal };

FisherMode parse_fisher_mode(const std::string& s);
std::string to_string(FisherMode m);

struct FisherConfig {
  /// Parameter names (full, prefixed) in the gradient; empty selects the
  /// model's output heads.
  std::vector<std::string> subset;
  FisherMode mode = FisherMode::EmpiricalDiagonal;
  double damping = 1e-4;
  std::size_t max_samples = 256;  // corpus sequences used to estimate the diagonal

  void validate() const;
};

/// Mean squared gradient per coordinate of the selected subset.
struct FisherStats {
  std::vector<std::string> names;
  std::vector<double> mean_sq;
  std::size_t samples = 0;

  bool empty() const noexcept { return mean_sq.empty(); }
  friend bool operator==(const FisherStats&, const FisherStats&) = default;
};

std::vector<std::string> fisher_param_names(const MtppModel& model, const FisherConfig& cfg);

/// diag^{-1/2} with diag = mean_sq + damping, or all ones in identity mode.
std::vector<double> fisher_preconditioner(const FisherConfig& cfg, const FisherStats* stats, std::size_t dim);

/// Empirical diagonal over up to cfg.max_samples sequences (every k-th in
/// the given order). In cross mode each sequence is its own context.
FisherStats estimate_fisher_stats(const MtppModel& model, const std::vector<const EventSequence*>& seqs,
                                  const FisherConfig& cfg);

/// Preconditioned, unit-normalised gradient of log p(target | context) with
/// respect to `names`, as a 1 x d row. With create_graph the result stays
/// differentiable in every parameter (and in differentiable input times).
/// Throws DegenerateEmbeddingError when the norm is <= 1e-12.
diff::Var fisher_vector_var(const MtppModel& model, const diff::BoundParams& p, const SeqInput& target,
                            const SeqInput* context, const std::vector<std::string>& names,
                            std::span<const double> preconditioner, bool create_graph,
                            const ForwardOptions& opt = {});

std::vector<double> fisher_vector(const MtppModel& model, const EventSequence& seq, const EventSequence* context,
                                  const FisherConfig& cfg, const FisherStats* stats = nullptr);

/// Dot product of two unit vectors.
double fisher_kernel(std::span<const double> v_q, std::span<const double> v_c);

// --- KL score ----------------------------------------------------------------

double lognormal_kl(double mu1, double s1, double mu2, double s2);
diff::Var lognormal_kl(const diff::Var& mu1, const diff::Var& s1, const diff::Var& mu2, const diff::Var& s2);

/// Per-step KL(p_c || p_q) over the first min(|c|, |q|) predictive steps
/// (n x 1 column).
diff::Var stepwise_kl(const EventDistributions& pc, const EventDistributions& pq, std::size_t steps);

/// Negated KL sum between p(. | c, U(q)) and p(. | U(q), U(q)) as a scalar.
diff::Var kl_score_var(const MtppModel& cross, const diff::BoundParams& p, const SeqInput& uq, const SeqInput& c,
                       const ForwardOptions& opt = {});

double kl_relevance(const MtppModel& cross, const UnwarpNet& unwarp, const EventSequence& q, const EventSequence& c);

// --- combined score ----------------------------------------------------------

enum class ScoreMode { SelfAttn, CrossAttn, HashNsr, SimUOnly };

ScoreMode parse_score_mode(const std::string& s);
std::string to_string(ScoreMode m);

struct ScoreRecord {
  std::string query_id;
  std::string corpus_id;
  double kappa = 0.0;
  double delta_t = 0.0;
  double delta_x = 0.0;
  double sim_u = 0.0;
  double s = 0.0;
  std::optional<double> g_kl;
};

/// Everything a score needs; pointers are non-owning and may be null for
/// modes that do not use them.
struct ScorerParts {
  const MtppModel* self = nullptr;
  const MtppModel* cross = nullptr;
  const UnwarpNet* unwarp = nullptr;
  FisherConfig fisher;
  const FisherStats* self_stats = nullptr;
  const FisherStats* cross_stats = nullptr;
  double gamma = 0.1;
  double horizon = 0.0;  // global T
};

class Scorer {
 public:
  explicit Scorer(ScorerParts parts);

  struct Query {
    const EventSequence* original = nullptr;
    EventSequence unwarped;
    double horizon = 0.0;  // T used for every pair with this query
    std::vector<double> v_self;
    std::vector<double> v_cross;
  };

  Query prepare(const EventSequence& q, ScoreMode mode) const;

  /// Query-independent self-attention Fisher vector of a corpus sequence.
  std::vector<double> self_vector(const EventSequence& c) const;

  /// `v_c_self` may carry a precomputed self_vector(c).
  ScoreRecord score(const Query& q, const EventSequence& c, ScoreMode mode,
                    const std::vector<double>* v_c_self = nullptr) const;

  const ScorerParts& parts() const noexcept { return parts_; }

 private:
  std::vector<double> vector_with_fallback(const MtppModel& m, const FisherStats* stats, const EventSequence& seq,
                                           const EventSequence* ctx) const;
  ScorerParts parts_;
};

/// s = kappa + gamma * sim_u.
double combine_score(double kappa, double sim_u, double gamma);

ScoreRecord relevance_score(const ScorerParts& parts, const EventSequence& q, const EventSequence& c, ScoreMode mode);

/// query_id,corpus_id,kappa,delta_t,delta_x,s,g_kl
void write_score_records_csv(const std::filesystem::path& path, const std::vector<ScoreRecord>& records);

}  // namespace seqret
