#include "seqret/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "seqret/dataset_io.hpp"
#include "seqret/errors.hpp"

namespace seqret {

using diff::BoundParams;
using diff::Tensor;
using diff::Var;

namespace {

constexpr double kDegenerateNorm = 1e-12;

void check_horizon(const std::vector<double>& times, double horizon, const char* who) {
  for (double t : times) {
    if (t > horizon) throw DomainError(std::string(who) + ": horizon T is smaller than an event time");
  }
}

}  // namespace

// --- SIM_U ---------------------------------------------------------------------

SimU sim_u(const EventSequence& q, const EventSequence& c, double horizon) {
  check_horizon({q.last_time(), c.last_time()}, horizon, "sim_u");
  const std::size_t m = std::min(q.size(), c.size());
  SimU out;
  for (std::size_t i = 0; i < m; ++i) {
    out.delta_t += std::abs(q[i].time - c[i].time);
    if (q[i].mark != c[i].mark) out.delta_x += 1.0;
  }
  const EventSequence& longer = q.size() > c.size() ? q : c;
  for (std::size_t i = m; i < longer.size(); ++i) out.delta_t += horizon - longer[i].time;
  out.delta_x += static_cast<double>(longer.size() - m);
  out.sim_u = -out.delta_t - out.delta_x;
  return out;
}

Var sim_u_var(const Var& q_times, const std::vector<std::size_t>& q_marks, const EventSequence& c, double horizon) {
  const std::size_t nq = q_marks.size();
  if (q_times.rows() != nq || q_times.cols() != 1) throw DimensionError("sim_u_var: times must be an n x 1 column");
  check_horizon({q_times.value().data().begin(), q_times.value().data().end()}, horizon, "sim_u");
  check_horizon({c.last_time()}, horizon, "sim_u");
  const std::size_t m = std::min(nq, c.size());
  double mismatch = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (q_marks[i] != c[i].mark) mismatch += 1.0;
  }
  mismatch += static_cast<double>(std::max(nq, c.size()) - m);

  std::vector<double> ct(m);
  for (std::size_t i = 0; i < m; ++i) ct[i] = c[i].time;
  Var dt = diff::sum(diff::abs(diff::sub(diff::slice_rows(q_times, 0, m), Var::constant(Tensor::column(ct)))));
  double constant_tail = 0.0;
  if (nq > m) {
    const Var tail = diff::sum(diff::slice_rows(q_times, m, nq - m));
    dt = diff::sub(dt, tail);
    constant_tail = static_cast<double>(nq - m) * horizon;
  } else {
    for (std::size_t i = m; i < c.size(); ++i) constant_tail += horizon - c[i].time;
  }
  return diff::neg(diff::add_scalar(dt, constant_tail + mismatch));
}

// --- Fisher --------------------------------------------------------------------

FisherMode parse_fisher_mode(const std::string& s) {
  if (s == "identity") return FisherMode::Identity;
  if (s == "empirical_diagonal" || s == "diagonal") return FisherMode::EmpiricalDiagonal;
  throw ConfigError("unknown Fisher mode '" + s + "'");
}

std::string to_string(FisherMode m) { return m == FisherMode::Identity ? "identity" : "empirical_diagonal"; }

void FisherConfig::validate() const {
  if (!(damping >= 1e-8)) throw ConfigError("Fisher damping must be >= 1e-8");
  if (max_samples == 0) throw ConfigError("Fisher max_samples must be >= 1");
}

std::vector<std::string> fisher_param_names(const MtppModel& model, const FisherConfig& cfg) {
  if (cfg.subset.empty()) return model.head_param_names();
  std::vector<std::string> names;
  for (const auto& entry : cfg.subset) {
    // entries may be full names or prefixes of the model's own parameters
    bool matched = false;
    for (const auto& n : model.params().names()) {
      if (n == entry || n.rfind(entry, 0) == 0 || n == model.name(entry) || n.rfind(model.name(entry), 0) == 0) {
        names.push_back(n);
        matched = true;
      }
    }
    if (!matched) throw ConfigError("Fisher subset entry '" + entry + "' matches no parameter");
  }
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return names;
}

std::vector<double> fisher_preconditioner(const FisherConfig& cfg, const FisherStats* stats, std::size_t dim) {
  std::vector<double> out(dim, 1.0);
  if (cfg.mode == FisherMode::Identity || stats == nullptr || stats->empty()) return out;
  if (stats->mean_sq.size() != dim) throw DimensionError("Fisher statistics do not match the gradient dimension");
  for (std::size_t i = 0; i < dim; ++i) out[i] = 1.0 / std::sqrt(stats->mean_sq[i] + cfg.damping);
  return out;
}

Var fisher_vector_var(const MtppModel& model, const BoundParams& p, const SeqInput& target, const SeqInput* context,
                      const std::vector<std::string>& names, std::span<const double> preconditioner, bool create_graph,
                      const ForwardOptions& opt) {
  if (names.empty()) throw ConfigError("Fisher parameter subset is empty");
  const Var ll = model.log_likelihood(p, target, context, opt);
  std::vector<Var> leaves;
  leaves.reserve(names.size());
  for (const auto& n : names) leaves.push_back(p[n]);
  const std::vector<Var> g = diff::grad(ll, leaves, create_graph);
  Var flat = diff::flatten_concat(g);
  const std::size_t d = flat.cols();
  if (!preconditioner.empty()) {
    if (preconditioner.size() != d) throw DimensionError("preconditioner length differs from the gradient");
    flat = diff::mul(flat, Var::constant(Tensor::row({preconditioner.begin(), preconditioner.end()})));
  }
  const Var norm = diff::sqrt(diff::sum(diff::square(flat)));
  if (!(norm.item() > kDegenerateNorm)) throw DegenerateEmbeddingError("Fisher gradient vanishes after preconditioning");
  return diff::div(flat, diff::broadcast_scalar(norm, 1, d));
}

std::vector<double> fisher_vector(const MtppModel& model, const EventSequence& seq, const EventSequence* context,
                                  const FisherConfig& cfg, const FisherStats* stats) {
  const auto names = fisher_param_names(model, cfg);
  const std::set<std::string> chosen(names.begin(), names.end());
  const BoundParams p(model.params(), [&](const std::string& n) { return chosen.count(n) != 0; });
  const SeqInput t = SeqInput::from(seq);
  std::optional<SeqInput> c;
  if (context) c = SeqInput::from(*context);
  std::size_t dim = 0;
  for (const auto& n : names) dim += model.params().at(n).numel();
  const auto pre = fisher_preconditioner(cfg, stats, dim);
  const Var v = fisher_vector_var(model, p, t, c ? &*c : nullptr, names, pre, false);
  return {v.value().data().begin(), v.value().data().end()};
}

FisherStats estimate_fisher_stats(const MtppModel& model, const std::vector<const EventSequence*>& seqs,
                                  const FisherConfig& cfg) {
  cfg.validate();
  FisherStats st;
  st.names = fisher_param_names(model, cfg);
  const std::set<std::string> chosen(st.names.begin(), st.names.end());
  const BoundParams p(model.params(), [&](const std::string& n) { return chosen.count(n) != 0; });
  std::vector<Var> leaves;
  for (const auto& n : st.names) leaves.push_back(p[n]);
  const std::size_t n = seqs.size();
  const std::size_t take = std::min(n, cfg.max_samples);
  const bool cross = model.config().mode == AttentionMode::Cross;
  for (std::size_t k = 0; k < take; ++k) {
    const EventSequence& s = *seqs[k * n / take];
    const SeqInput t = SeqInput::from(s);
    const Var ll = model.log_likelihood(p, t, cross ? &t : nullptr);
    const std::vector<Var> g = diff::grad(ll, leaves, false);
    std::size_t off = 0;
    for (const auto& gi : g) {
      if (st.mean_sq.size() < off + gi.value().numel()) st.mean_sq.resize(off + gi.value().numel(), 0.0);
      for (double x : gi.value().data()) st.mean_sq[off++] += x * x;
    }
  }
  for (double& x : st.mean_sq) x /= static_cast<double>(std::max<std::size_t>(take, 1));
  st.samples = take;
  return st;
}

double fisher_kernel(std::span<const double> v_q, std::span<const double> v_c) {
  if (v_q.size() != v_c.size()) throw DimensionError("Fisher vectors have different lengths");
  double dot = 0.0;
  for (std::size_t i = 0; i < v_q.size(); ++i) dot += v_q[i] * v_c[i];
  return dot;
}

// --- KL --------------------------------------------------------------------------

double lognormal_kl(double mu1, double s1, double mu2, double s2) {
  if (!(s1 > 0.0) || !(s2 > 0.0)) throw DomainError("log-normal scales must be > 0");
  const double dm = mu1 - mu2;
  return std::log(s2 / s1) + (s1 * s1 + dm * dm) / (2.0 * s2 * s2) - 0.5;
}

Var lognormal_kl(const Var& mu1, const Var& s1, const Var& mu2, const Var& s2) {
  const Var num = diff::add(diff::square(s1), diff::square(diff::sub(mu1, mu2)));
  const Var ratio = diff::div(num, diff::scale(diff::square(s2), 2.0));
  return diff::add_scalar(diff::add(diff::sub(diff::log(s2), diff::log(s1)), ratio), -0.5);
}

Var stepwise_kl(const EventDistributions& pc, const EventDistributions& pq, std::size_t steps) {
  auto rows = [steps](const Var& v) { return diff::slice_rows(v, 0, steps); };
  const Var time_kl = lognormal_kl(rows(pc.mu), rows(pc.s), rows(pq.mu), rows(pq.s));
  const Var lpc = rows(pc.log_probs);
  const Var mark_kl = diff::row_sum(diff::mul(diff::exp(lpc), diff::sub(lpc, rows(pq.log_probs))));
  return diff::add(time_kl, mark_kl);
}

Var kl_score_var(const MtppModel& cross, const BoundParams& p, const SeqInput& uq, const SeqInput& c,
                 const ForwardOptions& opt) {
  if (cross.config().mode != AttentionMode::Cross) throw ConfigError("the KL score needs a cross-attention model");
  const EventDistributions pc = cross.distributions(p, c, &uq, opt);
  const EventDistributions pq = cross.distributions(p, uq, &uq, opt);
  const std::size_t steps = std::min(uq.size(), c.size());
  return diff::neg(diff::sum(stepwise_kl(pc, pq, steps)));
}

double kl_relevance(const MtppModel& cross, const UnwarpNet& unwarp, const EventSequence& q, const EventSequence& c) {
  diff::NoGradGuard guard;
  const BoundParams p(cross.params(), false);
  const SeqInput uq = SeqInput::from(unwarp_sequence(unwarp, q));
  return kl_score_var(cross, p, uq, SeqInput::from(c)).item();
}

// --- combined score ------------------------------------------------------------

ScoreMode parse_score_mode(const std::string& s) {
  if (s == "selfattn") return ScoreMode::SelfAttn;
  if (s == "crossattn") return ScoreMode::CrossAttn;
  if (s == "hash_nsr") return ScoreMode::HashNsr;
  if (s == "simu") return ScoreMode::SimUOnly;
  throw ConfigError("unknown mode '" + s + "'");
}

std::string to_string(ScoreMode m) {
  switch (m) {
    case ScoreMode::SelfAttn:
      return "selfattn";
    case ScoreMode::CrossAttn:
      return "crossattn";
    case ScoreMode::HashNsr:
      return "hash_nsr";
    case ScoreMode::SimUOnly:
      return "simu";
  }
  return "selfattn";
}

double combine_score(double kappa, double sim_u, double gamma) { return kappa + gamma * sim_u; }

Scorer::Scorer(ScorerParts parts) : parts_(std::move(parts)) { parts_.fisher.validate(); }

std::vector<double> Scorer::vector_with_fallback(const MtppModel& m, const FisherStats* stats, const EventSequence& seq,
                                                 const EventSequence* ctx) const {
  try {
    return fisher_vector(m, seq, ctx, parts_.fisher, stats);
  } catch (const DegenerateEmbeddingError&) {
    if (parts_.fisher.mode == FisherMode::Identity) throw;
    FisherConfig plain = parts_.fisher;
    plain.mode = FisherMode::Identity;
    return fisher_vector(m, seq, ctx, plain, nullptr);
  }
}

Scorer::Query Scorer::prepare(const EventSequence& q, ScoreMode mode) const {
  Query out{&q, parts_.unwarp ? unwarp_sequence(*parts_.unwarp, q) : q, 0.0, {}, {}};
  out.horizon = std::max(parts_.horizon, out.unwarped.last_time());
  if (mode == ScoreMode::SelfAttn) {
    if (!parts_.self) throw ConfigError("selfattn scoring needs a self-attention model");
    out.v_self = vector_with_fallback(*parts_.self, parts_.self_stats, out.unwarped, nullptr);
  } else if (mode == ScoreMode::CrossAttn) {
    if (!parts_.cross) throw ConfigError("crossattn scoring needs a cross-attention model");
    out.v_cross = vector_with_fallback(*parts_.cross, parts_.cross_stats, out.unwarped, &out.unwarped);
  } else if (mode == ScoreMode::HashNsr && !parts_.cross) {
    throw ConfigError("hash_nsr scoring needs a cross-attention model");
  }
  return out;
}

std::vector<double> Scorer::self_vector(const EventSequence& c) const {
  if (!parts_.self) throw ConfigError("no self-attention model");
  return vector_with_fallback(*parts_.self, parts_.self_stats, c, nullptr);
}

ScoreRecord Scorer::score(const Query& q, const EventSequence& c, ScoreMode mode, const std::vector<double>* v_c_self) const {
  ScoreRecord r;
  r.query_id = q.original ? q.original->id() : q.unwarped.id();
  r.corpus_id = c.id();
  const SimU su = sim_u(q.unwarped, c, std::max(q.horizon, c.last_time()));
  r.delta_t = su.delta_t;
  r.delta_x = su.delta_x;
  r.sim_u = su.sim_u;
  switch (mode) {
    case ScoreMode::SelfAttn: {
      if (q.v_self.empty()) throw ConfigError("query was not prepared for selfattn scoring");
      const std::vector<double> own = v_c_self ? std::vector<double>{} : self_vector(c);
      r.kappa = fisher_kernel(q.v_self, v_c_self ? *v_c_self : own);
      r.s = combine_score(r.kappa, r.sim_u, parts_.gamma);
      break;
    }
    case ScoreMode::CrossAttn: {
      if (q.v_cross.empty()) throw ConfigError("query was not prepared for crossattn scoring");
      r.kappa = fisher_kernel(q.v_cross, vector_with_fallback(*parts_.cross, parts_.cross_stats, c, &q.unwarped));
      r.s = combine_score(r.kappa, r.sim_u, parts_.gamma);
      break;
    }
    case ScoreMode::HashNsr: {
      diff::NoGradGuard guard;
      const BoundParams p(parts_.cross->params(), false);
      r.g_kl = kl_score_var(*parts_.cross, p, SeqInput::from(q.unwarped), SeqInput::from(c)).item();
      r.s = *r.g_kl;
      break;
    }
    case ScoreMode::SimUOnly:
      r.s = r.sim_u;
      break;
  }
  return r;
}

ScoreRecord relevance_score(const ScorerParts& parts, const EventSequence& q, const EventSequence& c, ScoreMode mode) {
  const Scorer scorer(parts);
  return scorer.score(scorer.prepare(q, mode), c, mode);
}

void write_score_records_csv(const std::filesystem::path& path, const std::vector<ScoreRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "query_id,corpus_id,kappa,delta_t,delta_x,s,g_kl\n";
  for (const auto& r : records) {
    out << r.query_id << ',' << r.corpus_id << ',' << format_double(r.kappa) << ',' << format_double(r.delta_t) << ','
        << format_double(r.delta_x) << ',' << format_double(r.s) << ',' << (r.g_kl ? format_double(*r.g_kl) : "")
        << '\n';
  }
}

}  // namespace seqret
