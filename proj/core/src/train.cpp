#include "seqret/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "seqret/config_io.hpp"
#include "seqret/dataset_io.hpp"
#include "seqret/diff/adam.hpp"
#include "seqret/diff/checkpoint.hpp"
#include "seqret/errors.hpp"
#include "seqret/parallel.hpp"
#include "seqret/seeding.hpp"

namespace seqret {

using diff::BoundParams;
using diff::ParamStore;
using diff::Tensor;
using diff::Var;
using nlohmann::json;

namespace {

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

// Fisher-Yates with a fixed generator so orders do not depend on the
// standard library's distributions.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

std::vector<std::string> names_with_prefix(const ParamStore& store, const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& n : store.names()) {
    if (starts_with(n, prefix)) out.push_back(n);
  }
  return out;
}

bool trains_prefix(const std::vector<std::string>& wrt, const std::string& prefix) {
  return std::any_of(wrt.begin(), wrt.end(), [&](const std::string& n) { return starts_with(n, prefix); });
}

std::vector<Var> leaves_for(const BoundParams& p, const std::vector<std::string>& names) {
  std::vector<Var> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(p[n]);
  return out;
}

void accumulate(std::vector<double>& acc, const std::vector<Var>& grads, double w = 1.0) {
  std::size_t off = 0;
  for (const Var& g : grads) {
    for (double x : g.value().data()) {
      if (off >= acc.size()) acc.push_back(0.0);
      acc[off++] += w * x;
    }
  }
}

std::size_t flat_size(const BoundParams& p, const std::vector<std::string>& names) {
  std::size_t n = 0;
  for (const auto& name : names) n += p[name].value().numel();
  return n;
}

ForwardOptions forward_options(const ObjectiveSpec& spec, std::uint64_t slot) {
  ForwardOptions o;
  if (spec.seed) o.dropout_seed = derive_seed(*spec.seed, {slot});
  return o;
}

std::optional<std::uint64_t> noise_seed(const ObjectiveSpec& spec) {
  if (!spec.seed) return std::nullopt;
  return derive_seed(*spec.seed, {~0ULL});
}

// Fisher vector with the scorer's fallback to the identity preconditioner.
Var fisher_vec(const MtppModel& model, const BoundParams& p, const SeqInput& target, const SeqInput* ctx,
               const ObjectiveSpec& spec, bool create_graph, const ForwardOptions& opt) {
  try {
    return fisher_vector_var(model, p, target, ctx, spec.fisher_names, spec.preconditioner, create_graph, opt);
  } catch (const DegenerateEmbeddingError&) {
    if (spec.preconditioner.empty()) throw;
    return fisher_vector_var(model, p, target, ctx, spec.fisher_names, {}, create_graph, opt);
  }
}

double last_value(const Var& col) { return col.value().data().back(); }

void check_modes(ScoreMode mode) {
  if (mode == ScoreMode::SimUOnly) throw ConfigError("simu has no trainable model");
}

}  // namespace

// --- bundle -----------------------------------------------------------------

std::vector<const EventSequence*> corpus_pointers(const Dataset& data) {
  std::vector<const EventSequence*> out;
  out.reserve(data.corpus.size());
  for (const auto& [id, s] : data.corpus) out.push_back(&s);
  return out;
}

ModelBundle ModelBundle::init(const Dataset& data, const BundleConfig& cfg, std::uint64_t seed) {
  if (data.corpus.empty()) throw InputError("cannot build models for an empty corpus");
  const auto corpus = corpus_pointers(data);
  const double T = data.horizon();
  MtppConfig mc = cfg.mtpp;
  mc.vocab = data.mark_vocab_size;
  UnwarpConfig uc = cfg.unwarp;
  if (cfg.data_scaled_inputs) {
    double gaps = 0.0;
    std::size_t count = 0;
    for (const EventSequence* s : corpus) {
      gaps += s->last_time();  // sum of inter-arrivals from 0
      count += s->size();
    }
    mc.time_scale = 1.0 / T;
    mc.delta_scale = gaps > 0.0 ? static_cast<double>(count) / gaps : 1.0;
    uc.input_scale = 1.0 / T;
  }
  const MtppInitStats stats = init_stats_from(corpus, mc.vocab);
  MtppConfig sc = mc;
  sc.mode = AttentionMode::Self;
  MtppConfig cc = mc;
  cc.mode = AttentionMode::Cross;
  ModelBundle b{MtppModel::init(sc, derive_seed(seed, {1}), stats),
                MtppModel::init(cc, derive_seed(seed, {2}), stats),
                UnwarpNet::init(uc, derive_seed(seed, {3})),
                cfg.fisher,
                {},
                {},
                cfg.gamma,
                T,
                json{{"seed", seed}}};
  b.refresh_fisher_stats(corpus);
  return b;
}

ScorerParts ModelBundle::scorer_parts() const {
  return {&self, &cross, &unwarp, fisher, &self_stats, &cross_stats, gamma, horizon};
}

const MtppModel& ModelBundle::model_for(ScoreMode mode) const {
  check_modes(mode);
  return mode == ScoreMode::SelfAttn ? self : cross;
}

ParamStore ModelBundle::joint_params() const {
  ParamStore joint;
  joint.merge(self.params());
  joint.merge(cross.params());
  joint.merge(unwarp.params());
  return joint;
}

void ModelBundle::assign(const ParamStore& joint) {
  for (ParamStore* store : {&self.params(), &cross.params(), &unwarp.params()}) {
    for (const auto& n : store->names()) {
      if (!joint.contains(n)) continue;
      const Tensor& t = joint.at(n);
      Tensor& dst = store->at(n);
      if (t.rows() != dst.rows() || t.cols() != dst.cols()) throw DimensionError("parameter " + n + " changed shape");
      dst = t;
    }
  }
}

void ModelBundle::refresh_fisher_stats(const std::vector<const EventSequence*>& corpus) {
  if (fisher.mode == FisherMode::Identity) {
    self_stats = {};
    cross_stats = {};
    return;
  }
  self_stats = estimate_fisher_stats(self, corpus, fisher);
  cross_stats = estimate_fisher_stats(cross, corpus, fisher);
}

namespace {

json bundle_meta(const ModelBundle& b) {
  return {{"kind", "seqret_bundle"},
          {"mtpp_self", to_json(b.self.config())},
          {"mtpp_cross", to_json(b.cross.config())},
          {"unwarp", to_json(b.unwarp.config())},
          {"fisher", to_json(b.fisher)},
          {"self_stats", to_json(b.self_stats)},
          {"cross_stats", to_json(b.cross_stats)},
          {"gamma", b.gamma},
          {"horizon", b.horizon},
          {"meta", b.meta}};
}

}  // namespace

void ModelBundle::save(const std::filesystem::path& path) const {
  diff::Checkpoint ckpt;
  ckpt.params = joint_params();
  ckpt.meta = bundle_meta(*this);
  diff::save_checkpoint(path, ckpt);
}

ModelBundle ModelBundle::load(const std::filesystem::path& path) {
  const diff::Checkpoint ckpt = diff::load_checkpoint(path);
  const json& m = ckpt.meta;
  if (m.value("kind", std::string{}) != "seqret_bundle") throw FormatError(path.string() + " is not a model bundle");
  try {
    MtppConfig sc = mtpp_config_from_json(m.at("mtpp_self"));
    MtppConfig cc = mtpp_config_from_json(m.at("mtpp_cross"));
    return ModelBundle{MtppModel(sc, ckpt.params.subset(MtppModel::prefix_for(AttentionMode::Self))),
                       MtppModel(cc, ckpt.params.subset(MtppModel::prefix_for(AttentionMode::Cross))),
                       UnwarpNet(unwarp_config_from_json(m.at("unwarp")), ckpt.params.subset(UnwarpNet::kPrefix)),
                       fisher_config_from_json(m.at("fisher")),
                       fisher_stats_from_json(m.at("self_stats")),
                       fisher_stats_from_json(m.at("cross_stats")),
                       m.at("gamma").get<double>(),
                       m.at("horizon").get<double>(),
                       m.value("meta", json::object())};
  } catch (const json::exception& e) {
    throw FormatError("malformed model bundle " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("malformed model bundle " + path.string() + ": " + e.what());
  }
}

bool operator==(const ModelBundle& a, const ModelBundle& b) {
  return a.joint_params() == b.joint_params() && bundle_meta(a) == bundle_meta(b);
}

// --- scoring over a dataset ---------------------------------------------------

CorpusScorer::CorpusScorer(const ModelBundle& bundle, const Dataset& data, ScoreMode mode, std::size_t workers)
    : data_(data), mode_(mode), scorer_(bundle.scorer_parts()) {
  if (mode_ != ScoreMode::SelfAttn) return;
  const auto corpus = corpus_pointers(data_);
  std::vector<std::vector<double>> vecs(corpus.size());
  parallel_for(corpus.size(), workers, [&](std::size_t i) { vecs[i] = scorer_.self_vector(*corpus[i]); });
  for (std::size_t i = 0; i < corpus.size(); ++i) self_vectors_.emplace(corpus[i]->id(), std::move(vecs[i]));
}

const std::vector<double>* CorpusScorer::self_vector(const std::string& corpus_id) const {
  const auto it = self_vectors_.find(corpus_id);
  return it == self_vectors_.end() ? nullptr : &it->second;
}

std::vector<ScoreRecord> CorpusScorer::score(const EventSequence& query, const std::vector<std::string>& candidates) const {
  const Scorer::Query q = scorer_.prepare(query, mode_);
  std::vector<ScoreRecord> out;
  out.reserve(candidates.size());
  for (const auto& id : candidates) out.push_back(scorer_.score(q, data_.corpus_at(id), mode_, self_vector(id)));
  return out;
}

CandidateScorer CorpusScorer::candidate_scorer() const {
  return [this](const std::string& query_id, const std::vector<std::string>& candidates) {
    std::vector<double> s;
    s.reserve(candidates.size());
    for (const auto& r : score(data_.query_at(query_id), candidates)) s.push_back(r.s);
    return s;
  };
}

MetricReport evaluate_bundle(const ModelBundle& bundle, const Dataset& data, const std::vector<std::string>& queries,
                             ScoreMode mode, const ProtocolConfig& protocol) {
  const CorpusScorer cs(bundle, data, mode, protocol.workers);
  return evaluate_protocol(data, queries, cs.candidate_scorer(), protocol);
}

std::vector<std::pair<double, double>> gamma_sweep(const ModelBundle& bundle, const Dataset& data,
                                                   const std::vector<std::string>& queries, ScoreMode mode,
                                                   const std::vector<double>& grid, const ProtocolConfig& protocol) {
  if (mode != ScoreMode::SelfAttn && mode != ScoreMode::CrossAttn) {
    throw ConfigError("gamma only enters selfattn and crossattn scores");
  }
  const CorpusScorer cs(bundle, data, mode, protocol.workers);
  // Slots exist before the workers start, so each writes only its own entry.
  std::map<std::string, std::vector<ScoreRecord>> cache;
  for (const auto& q : queries) cache[q];
  evaluate_protocol(data, queries,
                    [&](const std::string& qid, const std::vector<std::string>& cands) {
                      auto& slot = cache.at(qid);
                      slot = cs.score(data.query_at(qid), cands);
                      std::vector<double> s;
                      for (const auto& r : slot) s.push_back(r.s);
                      return s;
                    },
                    protocol);
  std::vector<std::pair<double, double>> out;
  for (double g : grid) {
    const MetricReport rep = evaluate_protocol(
        data, queries,
        [&](const std::string& qid, const std::vector<std::string>& cands) {
          const auto& slot = cache.at(qid);
          if (slot.size() != cands.size()) throw InputError("candidate lists changed between sweep passes");
          std::vector<double> s;
          for (const auto& r : slot) s.push_back(combine_score(r.kappa, r.sim_u, g));
          return s;
        },
        protocol);
    out.emplace_back(g, rep.map());
  }
  return out;
}

// --- objective ----------------------------------------------------------------

double hinge_rank_loss(double s_pos, double s_neg, double margin) { return std::max(0.0, s_neg - s_pos + margin); }

Optimization parse_optimization(const std::string& s) {
  if (s == "end_to_end" || s == "e2e") return Optimization::EndToEnd;
  if (s == "staged") return Optimization::Staged;
  throw ConfigError("unknown optimization '" + s + "'");
}

std::string to_string(Optimization o) { return o == Optimization::Staged ? "staged" : "end_to_end"; }

void TrainConfig::validate() const {
  check_modes(mode);
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw ConfigError("train.margin must be finite and >= 0");
  if (!std::isfinite(gamma) || gamma < 0.0) throw ConfigError("train.gamma must be finite and >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (negatives == 0) throw ConfigError("train.negatives must be positive");
  if (max_pairs == 0) throw ConfigError("train.max_pairs must be positive");
  if (!(l2 >= 0.0)) throw ConfigError("train.l2 must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train.dropout must lie in [0, 1)");
  if (patience == 0) throw ConfigError("train.patience must be positive");
  if (mle_batch == 0) throw ConfigError("train.mle_batch must be positive");
  if (val_negatives == 0) throw ConfigError("train.val_negatives must be positive");
  for (double g : gamma_grid) {
    if (!std::isfinite(g) || g < 0.0) throw ConfigError("train.gamma_grid entries must be finite and >= 0");
  }
  if (workers == 0) throw ConfigError("train.workers must be positive");
}

ObjectiveSpec objective_spec(const ModelBundle& bundle, ScoreMode mode, double margin, double gamma) {
  const MtppModel& model = bundle.model_for(mode);
  ObjectiveSpec spec;
  spec.mode = mode;
  spec.margin = margin;
  spec.gamma = gamma;
  if (mode != ScoreMode::HashNsr) {
    spec.fisher_names = fisher_param_names(model, bundle.fisher);
    std::size_t dim = 0;
    for (const auto& n : spec.fisher_names) dim += model.params().at(n).numel();
    const FisherStats* stats = mode == ScoreMode::SelfAttn ? &bundle.self_stats : &bundle.cross_stats;
    spec.preconditioner = fisher_preconditioner(bundle.fisher, stats, dim);
  }
  spec.wrt = model.params().names();
  for (const auto& n : bundle.unwarp.params().names()) spec.wrt.push_back(n);
  std::sort(spec.wrt.begin(), spec.wrt.end());
  return spec;
}

BoundParams bind_params(const ParamStore& joint, const ObjectiveSpec& spec) {
  std::set<std::string> track(spec.wrt.begin(), spec.wrt.end());
  track.insert(spec.fisher_names.begin(), spec.fisher_names.end());
  return BoundParams(joint, [&](const std::string& n) { return track.count(n) != 0; });
}

Var pair_hinge_var(const ModelBundle& bundle, const BoundParams& p, const PairExample& ex, const ObjectiveSpec& spec) {
  check_modes(spec.mode);
  const MtppModel& model = bundle.model_for(spec.mode);
  const EventSequence& q = *ex.query;
  const Var uq_times = bundle.unwarp.unwarp_times(p, q.times(), noise_seed(spec));
  const SeqInput uq{uq_times, q.marks()};
  const bool cross = spec.mode != ScoreMode::SelfAttn;
  const double t_q = std::max(bundle.horizon, last_value(uq_times));

  std::optional<Var> vq;
  if (spec.mode != ScoreMode::HashNsr) vq = fisher_vec(model, p, uq, cross ? &uq : nullptr, spec, true, forward_options(spec, 0));
  std::vector<Var> s;
  s.reserve(ex.candidates.size());
  for (std::size_t i = 0; i < ex.candidates.size(); ++i) {
    const EventSequence& c = *ex.candidates[i];
    const SeqInput ci = SeqInput::from(c);
    const ForwardOptions opt = forward_options(spec, i + 1);
    if (spec.mode == ScoreMode::HashNsr) {
      s.push_back(kl_score_var(model, p, uq, ci, opt));
      continue;
    }
    const Var vc = fisher_vec(model, p, ci, cross ? &uq : nullptr, spec, true, opt);
    const Var su = sim_u_var(uq_times, q.marks(), c, std::max(t_q, c.last_time()));
    s.push_back(diff::add(diff::dot(*vq, vc), diff::scale(su, spec.gamma)));
  }
  Var total = Var::constant(Tensor::scalar(0.0));
  for (const auto& [i, j] : ex.pairs) {
    total = diff::add(total, diff::relu(diff::add_scalar(diff::sub(s[j], s[i]), spec.margin)));
  }
  return total;
}

HingeGradient pair_hinge_gradient(const ModelBundle& bundle, const BoundParams& p, const PairExample& ex,
                                  const ObjectiveSpec& spec) {
  check_modes(spec.mode);
  const MtppModel& model = bundle.model_for(spec.mode);
  const EventSequence& q = *ex.query;
  const std::size_t n = ex.candidates.size();
  const std::vector<Var> leaves = leaves_for(p, spec.wrt);
  HingeGradient out;
  out.pairs = ex.pairs.size();
  out.grad.assign(flat_size(p, spec.wrt), 0.0);

  const Var uq_times = bundle.unwarp.unwarp_times(p, q.times(), noise_seed(spec));
  const SeqInput uq{uq_times, q.marks()};
  const SeqInput uq_fixed{Var::constant(uq_times.value()), q.marks()};
  const bool cross = spec.mode != ScoreMode::SelfAttn;
  const bool kl = spec.mode == ScoreMode::HashNsr;
  const double t_q = std::max(bundle.horizon, last_value(uq_times));

  // Pass 1: scores only.
  std::optional<Var> vq;
  if (!kl) vq = fisher_vec(model, p, uq, cross ? &uq : nullptr, spec, true, forward_options(spec, 0));
  std::vector<std::vector<double>> vc(n);
  std::vector<double> su(n, 0.0), s(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const EventSequence& c = *ex.candidates[i];
    const SeqInput ci = SeqInput::from(c);
    const ForwardOptions opt = forward_options(spec, i + 1);
    if (kl) {
      diff::NoGradGuard guard;
      s[i] = kl_score_var(model, p, uq_fixed, ci, opt).item();
      continue;
    }
    const Var v = fisher_vec(model, p, ci, cross ? &uq_fixed : nullptr, spec, false, opt);
    vc[i].assign(v.value().data().begin(), v.value().data().end());
    {
      diff::NoGradGuard guard;
      su[i] = sim_u_var(uq_fixed.times, q.marks(), c, std::max(t_q, c.last_time())).item();
    }
    s[i] = fisher_kernel(vq->value().data(), vc[i]) + spec.gamma * su[i];
  }

  // Hinge weights: d loss / d s_i.
  std::vector<double> w(n, 0.0);
  for (const auto& [i, j] : ex.pairs) {
    const double h = s[j] - s[i] + spec.margin;
    if (h > 0.0) {
      out.loss += h;
      ++out.active;
      w[j] += 1.0;
      w[i] -= 1.0;
    }
  }
  if (out.active == 0) return out;

  // Pass 2: backward through the query side once and each weighted candidate.
  if (kl) {
    Var total = Var::constant(Tensor::scalar(0.0));
    for (std::size_t i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      const Var si = kl_score_var(model, p, uq, SeqInput::from(*ex.candidates[i]), forward_options(spec, i + 1));
      total = diff::add(total, diff::scale(si, w[i]));
    }
    accumulate(out.grad, diff::grad(total, leaves));
    return out;
  }

  std::vector<double> pooled(vq->value().numel(), 0.0);
  Var side = Var::constant(Tensor::scalar(0.0));
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] == 0.0) continue;
    for (std::size_t k = 0; k < pooled.size(); ++k) pooled[k] += w[i] * vc[i][k];
    if (spec.gamma != 0.0) {
      const EventSequence& c = *ex.candidates[i];
      const Var sv = sim_u_var(uq_times, q.marks(), c, std::max(t_q, c.last_time()));
      side = diff::add(side, diff::scale(sv, w[i] * spec.gamma));
    }
  }
  const Var query_part = diff::add(diff::dot(*vq, Var::constant(Tensor::row(pooled))), side);
  accumulate(out.grad, diff::grad(query_part, leaves));

  // Self-attention candidate vectors depend only on the model's own weights.
  if (cross || trains_prefix(spec.wrt, model.prefix())) {
    const Var qconst = Var::constant(vq->value());
    for (std::size_t i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      const Var v = fisher_vec(model, p, SeqInput::from(*ex.candidates[i]), cross ? &uq : nullptr, spec, true,
                               forward_options(spec, i + 1));
      accumulate(out.grad, diff::grad(diff::dot(v, qconst), leaves), w[i]);
    }
  }
  return out;
}

namespace {

std::size_t total_pairs(const std::vector<PairExample>& batch) {
  std::size_t n = 0;
  for (const auto& ex : batch) n += ex.pairs.size();
  return n;
}

ObjectiveSpec example_spec(const ObjectiveSpec& spec, std::size_t i) {
  ObjectiveSpec s = spec;
  if (spec.seed) s.seed = derive_seed(*spec.seed, {i});
  return s;
}

// Unwarp penalty and weight decay, the parts of the objective outside the pairs.
Var regularizer(const ModelBundle& bundle, const BoundParams& p, const ObjectiveSpec& spec, double l2) {
  Var r = Var::constant(Tensor::scalar(0.0));
  if (trains_prefix(spec.wrt, UnwarpNet::kPrefix)) r = diff::add(r, bundle.unwarp.unbiasedness_penalty(p, bundle.horizon));
  if (l2 > 0.0) {
    for (const auto& n : spec.wrt) r = diff::add(r, diff::scale(diff::sum(diff::square(p[n])), l2));
  }
  return r;
}

}  // namespace

Var ranking_objective_var(const ModelBundle& bundle, const BoundParams& p, const std::vector<PairExample>& batch,
                          const ObjectiveSpec& spec, double l2) {
  const std::size_t pairs = total_pairs(batch);
  Var hinge = Var::constant(Tensor::scalar(0.0));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    hinge = diff::add(hinge, pair_hinge_var(bundle, p, batch[i], example_spec(spec, i)));
  }
  if (pairs > 0) hinge = diff::scale(hinge, 1.0 / static_cast<double>(pairs));
  return diff::add(hinge, regularizer(bundle, p, spec, l2));
}

ObjectiveGradient ranking_objective_gradient(const ModelBundle& bundle, const ParamStore& joint,
                                             const std::vector<PairExample>& batch, const ObjectiveSpec& spec, double l2,
                                             std::size_t workers) {
  const std::size_t pairs = total_pairs(batch);
  std::vector<HingeGradient> parts(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    const BoundParams p = bind_params(joint, spec);
    parts[i] = pair_hinge_gradient(bundle, p, batch[i], example_spec(spec, i));
  });
  const BoundParams p = bind_params(joint, spec);
  ObjectiveGradient out;
  out.grad.assign(flat_size(p, spec.wrt), 0.0);
  const double scale = pairs > 0 ? 1.0 / static_cast<double>(pairs) : 0.0;
  for (const auto& part : parts) {
    out.hinge += part.loss * scale;
    for (std::size_t k = 0; k < part.grad.size(); ++k) out.grad[k] += part.grad[k] * scale;
  }
  const Var reg = regularizer(bundle, p, spec, l2);
  if (reg.requires_grad()) accumulate(out.grad, diff::grad(reg, leaves_for(p, spec.wrt)));
  out.objective = out.hinge + reg.item();
  return out;
}

// --- training loop ----------------------------------------------------------

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "epoch,loss,val_map\n";
  for (const auto& r : rows) out << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.val_map) << '\n';
}

PairExample sample_pairs(const Dataset& data, const std::string& query_id, std::size_t negatives, std::size_t max_pairs,
                         std::uint64_t seed) {
  const QueryRelevance& rel = data.labels.at(query_id);
  if (rel.positives.empty()) throw InputError("query " + query_id + " has no positives");
  std::vector<std::string> neg(rel.negatives.begin(), rel.negatives.end());
  seeded_shuffle(neg, derive_seed(seed, {1}));
  neg.resize(std::min(neg.size(), negatives));
  std::sort(neg.begin(), neg.end());

  PairExample ex;
  ex.query = &data.query_at(query_id);
  for (const auto& id : rel.positives) ex.candidates.push_back(&data.corpus_at(id));
  for (const auto& id : neg) ex.candidates.push_back(&data.corpus_at(id));
  const std::size_t np = rel.positives.size();
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t j = 0; j < neg.size(); ++j) ex.pairs.emplace_back(i, np + j);
  }
  if (ex.pairs.size() > max_pairs) {
    seeded_shuffle(ex.pairs, derive_seed(seed, {2}));
    ex.pairs.resize(max_pairs);
    std::sort(ex.pairs.begin(), ex.pairs.end());
  }
  return ex;
}

namespace {

bool uses_fisher(ScoreMode m) { return m == ScoreMode::SelfAttn || m == ScoreMode::CrossAttn; }

class Trainer {
 public:
  Trainer(ModelBundle bundle, const Dataset& data, const TrainConfig& cfg, const TrainOptions& options)
      : bundle_(std::move(bundle)), data_(data), cfg_(cfg), options_(options), corpus_(corpus_pointers(data)) {
    for (const auto& q : data_.split.train) {
      const auto it = data_.labels.by_query.find(q);
      if (it != data_.labels.by_query.end() && !it->second.positives.empty()) train_.push_back(q);
    }
    if (train_.empty()) throw InputError("no training query has a positive candidate");
    val_ = data_.split.val.empty() ? train_ : data_.split.val;
    protocol_.negatives = cfg_.val_negatives;
    protocol_.seed = cfg_.seed;
    protocol_.workers = cfg_.workers;
    bundle_.gamma = cfg_.gamma;
    bundle_.self.config().dropout = cfg_.dropout;
    bundle_.cross.config().dropout = cfg_.dropout;
    joint_ = bundle_.joint_params();
    model_prefix_ = bundle_.model_for(cfg_.mode).prefix();
  }

  ModelBundle run(TrainHistory& h) {
    best_ = bundle_;
    h.initial_val_map = h.best_val_map = validate();
    log("epoch 0 val_map " + format_double(h.initial_val_map));
    try {
      if (cfg_.optimization == Optimization::Staged) {
        stage(h, "mle", cfg_.mle_epochs, names_with_prefix(joint_, model_prefix_));
        bundle_ = best_;
        joint_ = bundle_.joint_params();
        stage(h, "rank", cfg_.epochs, names_with_prefix(joint_, UnwarpNet::kPrefix));
      } else {
        auto wrt = names_with_prefix(joint_, model_prefix_);
        for (const auto& n : names_with_prefix(joint_, UnwarpNet::kPrefix)) wrt.push_back(n);
        std::sort(wrt.begin(), wrt.end());
        stage(h, "rank", cfg_.epochs, wrt);
      }
    } catch (const NumericError& e) {
      h.diverged = true;
      h.divergence = e.what();
      log(std::string("stopped on numerical failure: ") + e.what());
    }
    ModelBundle result = best_;
    if (!cfg_.gamma_grid.empty() && uses_fisher(cfg_.mode)) {
      h.gamma_sweep = gamma_sweep(result, data_, val_, cfg_.mode, cfg_.gamma_grid, protocol_);
      auto best = h.gamma_sweep.front();
      for (const auto& entry : h.gamma_sweep) {
        if (entry.second > best.second) best = entry;
      }
      result.gamma = best.first;
      log("gamma " + format_double(best.first) + " val_map " + format_double(best.second));
    }
    result.meta["train"] = to_json(cfg_);
    result.meta["best_val_map"] = h.best_val_map;
    result.meta["best_epoch"] = h.best_epoch;
    return result;
  }

 private:
  void log(const std::string& line) const {
    if (options_.log) options_.log(line);
  }

  double validate() const { return evaluate_bundle(bundle_, data_, val_, cfg_.mode, protocol_).map(); }

  void refresh_stats(const std::vector<std::string>& wrt) {
    if (!uses_fisher(cfg_.mode) || bundle_.fisher.mode == FisherMode::Identity) return;
    if (!trains_prefix(wrt, model_prefix_)) return;
    if (cfg_.mode == ScoreMode::SelfAttn) {
      bundle_.self_stats = estimate_fisher_stats(bundle_.self, corpus_, bundle_.fisher);
    } else {
      bundle_.cross_stats = estimate_fisher_stats(bundle_.cross, corpus_, bundle_.fisher);
    }
  }

  void stage(TrainHistory& h, const std::string& kind, std::size_t epochs, const std::vector<std::string>& wrt) {
    ParamStore sub;
    for (const auto& n : wrt) sub.add(n, joint_.at(n));
    diff::AdamState adam = diff::AdamState::for_params(sub, {cfg_.lr});
    std::size_t since_best = 0;
    for (std::size_t e = 0; e < epochs; ++e) {
      const std::size_t epoch = ++epoch_;
      const double loss = kind == "mle" ? mle_epoch(epoch, wrt, sub, adam) : rank_epoch(epoch, wrt, sub, adam);
      bundle_.assign(joint_);
      refresh_stats(wrt);
      const double val = validate();
      h.rows.push_back({epoch, kind, loss, val});
      log(kind + " epoch " + std::to_string(epoch) + " loss " + format_double(loss) + " val_map " + format_double(val));
      if (val > h.best_val_map) {
        h.best_val_map = val;
        h.best_epoch = epoch;
        best_ = bundle_;
        since_best = 0;
        if (options_.checkpoint) best_.save(*options_.checkpoint);
      } else if (++since_best >= cfg_.patience) {
        h.stopped_early = true;
        log("no improvement for " + std::to_string(since_best) + " epochs");
        return;
      }
    }
  }

  void apply(ParamStore& sub, diff::AdamState& adam, const std::vector<std::string>& wrt, const std::vector<double>& g) {
    diff::adam_step(adam, sub, g);
    for (const auto& n : wrt) joint_.at(n) = sub.at(n);
  }

  double rank_epoch(std::size_t epoch, const std::vector<std::string>& wrt, ParamStore& sub, diff::AdamState& adam) {
    ObjectiveSpec spec = objective_spec(bundle_, cfg_.mode, cfg_.margin, cfg_.gamma);
    spec.wrt = wrt;
    std::vector<std::size_t> order(train_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    seeded_shuffle(order, derive_seed(cfg_.seed, {3, epoch}));
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      std::vector<PairExample> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg_.batch_size); ++k) {
        batch.push_back(sample_pairs(data_, train_[order[k]], cfg_.negatives, cfg_.max_pairs,
                                     derive_seed(cfg_.seed, {4, epoch, order[k]})));
      }
      spec.seed = derive_seed(cfg_.seed, {5, epoch, steps});
      const ObjectiveGradient og = ranking_objective_gradient(bundle_, joint_, batch, spec, cfg_.l2, cfg_.workers);
      if (!std::isfinite(og.objective)) throw NumericError("ranking objective is not finite");
      apply(sub, adam, wrt, og.grad);
      total += og.objective;
      ++steps;
    }
    return total / static_cast<double>(steps);
  }

  double mle_epoch(std::size_t epoch, const std::vector<std::string>& wrt, ParamStore& sub, diff::AdamState& adam) {
    const MtppModel& model = bundle_.model_for(cfg_.mode);
    const bool cross = model.config().mode == AttentionMode::Cross;
    std::vector<std::size_t> order(corpus_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    seeded_shuffle(order, derive_seed(cfg_.seed, {2, epoch}));
    const std::set<std::string> track(wrt.begin(), wrt.end());
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.mle_batch) {
      const std::size_t end = std::min(order.size(), start + cfg_.mle_batch);
      std::vector<double> nll(end - start);
      std::vector<std::vector<double>> grads(end - start);
      parallel_for(end - start, cfg_.workers, [&](std::size_t k) {
        const BoundParams p(joint_, [&](const std::string& n) { return track.count(n) != 0; });
        const SeqInput t = SeqInput::from(*corpus_[order[start + k]]);
        ForwardOptions opt;
        if (cfg_.dropout > 0.0) opt.dropout_seed = derive_seed(cfg_.seed, {6, epoch, order[start + k]});
        const Var ll = model.log_likelihood(p, t, cross ? &t : nullptr, opt);
        nll[k] = -ll.item();
        accumulate(grads[k], diff::grad(ll, leaves_for(p, wrt)), -1.0);
      });
      const double inv = 1.0 / static_cast<double>(end - start);
      std::vector<double> g(sub.size(), 0.0);
      double loss = 0.0;
      for (std::size_t k = 0; k < grads.size(); ++k) {
        loss += nll[k] * inv;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += grads[k][i] * inv;
      }
      if (!std::isfinite(loss)) throw NumericError("negative log-likelihood is not finite");
      apply(sub, adam, wrt, g);
      total += loss;
      ++steps;
    }
    return total / static_cast<double>(steps);
  }

  ModelBundle bundle_;
  ModelBundle best_ = bundle_;
  const Dataset& data_;
  TrainConfig cfg_;
  TrainOptions options_;
  std::vector<const EventSequence*> corpus_;
  std::vector<std::string> train_;
  std::vector<std::string> val_;
  ProtocolConfig protocol_;
  ParamStore joint_;
  std::string model_prefix_;
  std::size_t epoch_ = 0;
};

}  // namespace

ModelBundle train(ModelBundle bundle, const Dataset& data, const TrainConfig& cfg, TrainHistory* history,
                  const TrainOptions& options) {
  cfg.validate();
  TrainHistory local;
  TrainHistory& h = history ? *history : local;
  h = {};
  Trainer trainer(std::move(bundle), data, cfg, options);
  return trainer.run(h);
}

}  // namespace seqret
