#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seqret/ctes.hpp"
#include "seqret/diff/param_store.hpp"

namespace seqret {

enum class AttentionMode { Self, Cross };

std::string to_string(AttentionMode m);

struct MtppConfig {
  std::size_t dim = 32;
  std::size_t vocab = 5;
  std::size_t max_len = kDefaultMaxLength;
  std::size_t blocks = 2;
  double dropout = 0.2;
  /// Input-layer multipliers for absolute times and inter-arrivals; the
  /// likelihood itself always works in raw time units.
  double time_scale = 1.0;
  double delta_scale = 1.0;
  AttentionMode mode = AttentionMode::Self;

  void validate() const;
};

/// Data-dependent starting point for the heads.
struct MtppInitStats {
  double mean_log_delta = 0.0;
  double std_log_delta = 1.0;
  std::vector<double> mark_freq;  // empty -> uniform
};

MtppInitStats init_stats_from(const std::vector<const EventSequence*>& seqs, std::size_t vocab);

/// A sequence as the model sees it: times may be differentiable (unwarped
/// query times), marks are fixed.
struct SeqInput {
  diff::Var times;  // n x 1
  std::vector<std::size_t> marks;

  static SeqInput from(const EventSequence& s);
  std::size_t size() const noexcept { return marks.size(); }
};

/// Per-event predictive distributions: row i is the distribution of event i
/// given events before it (row 0 comes from the start token).
struct EventDistributions {
  diff::Var mu;         // n x 1
  diff::Var s;          // n x 1, > 0
  diff::Var log_probs;  // n x |X|
};

struct EventDistribution {
  double mu = 0.0;
  double s = 1.0;
  std::vector<double> mark_probs;
};

struct ForwardOptions {
  /// Seed for dropout masks; nullopt means evaluation mode (no dropout).
  std::optional<std::uint64_t> dropout_seed;
};

/// Attention encoder with an intensity-free log-normal / categorical head.
/// In self mode the encoder is causal over the target itself; in cross mode
/// every target event attends to the context (query) embeddings.
class MtppModel {
 public:
  MtppModel(MtppConfig cfg, diff::ParamStore params);
  static MtppModel init(const MtppConfig& cfg, std::uint64_t seed, const MtppInitStats& stats = {});

  static std::string prefix_for(AttentionMode m);
  const std::string& prefix() const noexcept { return prefix_; }
  const MtppConfig& config() const noexcept { return cfg_; }
  MtppConfig& config() noexcept { return cfg_; }
  const diff::ParamStore& params() const noexcept { return params_; }
  diff::ParamStore& params() noexcept { return params_; }
  std::string name(const std::string& local) const { return prefix_ + local; }

  /// Names of the output-head parameters (FFN, time head, mark head).
  std::vector<std::string> head_param_names() const;

  /// y_i = w_x[x_i] + w_t t_i + w_dt (t_i - t_{i-1}) + b + p_i with t_0 = 0.
  diff::Var embed(const diff::BoundParams& p, const SeqInput& seq) const;

  /// One attention layer: softmax(S K^T / sqrt(D)) V. Causal masks i > j.
  diff::Var attend(const diff::BoundParams& p, std::size_t block, const diff::Var& source, const diff::Var& target,
                   bool causal) const;

  /// Stacked blocks with residual connections; returns the final h (n x D).
  diff::Var encode(const diff::BoundParams& p, const SeqInput& target, const SeqInput* context,
                   const ForwardOptions& opt = {}) const;

  /// Prefix features h_bar (row 0 = start token, row i = sum_{j<i} FFN(h_j)).
  diff::Var prefix_features(const diff::BoundParams& p, const diff::Var& h) const;

  EventDistributions heads(const diff::BoundParams& p, const diff::Var& hbar) const;

  EventDistributions distributions(const diff::BoundParams& p, const SeqInput& target, const SeqInput* context,
                                   const ForwardOptions& opt = {}) const;

  /// Sum over events of log LN(delta_i; mu_i, s_i) + log m(x_i).
  diff::Var log_likelihood(const diff::BoundParams& p, const SeqInput& target, const SeqInput* context,
                           const ForwardOptions& opt = {}) const;

 private:
  MtppConfig cfg_;
  std::string prefix_;
  diff::ParamStore params_;
};

/// Log-normal log-density of delta > 0 with log-mean mu and log-scale s.
double lognormal_log_density(double delta, double mu, double s);

/// Differentiable log-likelihood terms of the inter-arrivals (n x 1).
diff::Var lognormal_log_density(const diff::Var& delta, const diff::Var& mu, const diff::Var& s);

/// Value-level helpers (no gradient tracking).
double log_likelihood(const MtppModel& model, const EventSequence& target, const EventSequence* context = nullptr);
std::vector<EventDistribution> next_event_distributions(const MtppModel& model, const EventSequence& target,
                                                        const EventSequence* context = nullptr);
/// Attention weights of the first block (n_target x n_source).
diff::Tensor attention_weights(const MtppModel& model, const diff::Tensor& source, const diff::Tensor& target, bool causal,
                               std::size_t block = 0);

}  // namespace seqret
