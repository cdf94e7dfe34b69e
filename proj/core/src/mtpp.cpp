#include "seqret/mtpp.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "seqret/errors.hpp"
#include "seqret/seeding.hpp"

namespace seqret {

using diff::BoundParams;
using diff::Tensor;
using diff::Var;

namespace {

constexpr double kScaleFloor = 1e-4;
constexpr double kMaskedLogit = -1e30;

std::string block_name(std::size_t b, const char* what) { return "attn" + std::to_string(b) + "." + what; }

double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

Tensor gaussian(std::size_t r, std::size_t c, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sd);
  Tensor t = Tensor::matrix(r, c);
  for (double& x : t.data()) x = n(rng);
  return t;
}

// Inter-arrivals t_i - t_{i-1} with t_0 = 0, as an n x 1 column.
Var inter_arrivals(const Var& times) {
  const std::size_t n = times.rows();
  if (n == 1) return times;
  return diff::sub(times, diff::pad_rows(diff::slice_rows(times, 0, n - 1), 1, n));
}

}  // namespace

std::string to_string(AttentionMode m) { return m == AttentionMode::Self ? "self" : "cross"; }

void MtppConfig::validate() const {
  if (dim == 0) throw ConfigError("mtpp dim must be >= 1");
  if (vocab == 0) throw ConfigError("mtpp vocabulary must be >= 1");
  if (max_len == 0) throw ConfigError("mtpp max_len must be >= 1");
  if (blocks == 0) throw ConfigError("mtpp needs at least one attention block");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (!(time_scale > 0.0) || !(delta_scale > 0.0)) throw ConfigError("input time scales must be > 0");
}

MtppInitStats init_stats_from(const std::vector<const EventSequence*>& seqs, std::size_t vocab) {
  MtppInitStats st;
  st.mark_freq.assign(vocab, 0.0);
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto* s : seqs) {
    double prev = 0.0;
    for (const auto& e : s->events()) {
      const double l = std::log(e.time - prev);
      sum += l;
      sq += l * l;
      ++n;
      prev = e.time;
      if (e.mark < vocab) st.mark_freq[e.mark] += 1.0;
    }
  }
  if (n == 0) return MtppInitStats{};
  st.mean_log_delta = sum / static_cast<double>(n);
  st.std_log_delta = std::sqrt(std::max(sq / static_cast<double>(n) - st.mean_log_delta * st.mean_log_delta, 1e-4));
  for (double& f : st.mark_freq) f /= static_cast<double>(n);
  return st;
}

SeqInput SeqInput::from(const EventSequence& s) { return {Var::constant(Tensor::column(s.times())), s.marks()}; }

std::string MtppModel::prefix_for(AttentionMode m) { return m == AttentionMode::Self ? "mtpp_self." : "mtpp_cross."; }

MtppModel::MtppModel(MtppConfig cfg, diff::ParamStore params)
    : cfg_(cfg), prefix_(prefix_for(cfg.mode)), params_(std::move(params)) {
  cfg_.validate();
  auto expect = [&](const std::string& local, std::size_t r, std::size_t c) {
    const std::string n = name(local);
    if (!params_.contains(n)) throw ConfigError("mtpp parameters lack " + n);
    const Tensor& t = params_.at(n);
    if (t.rows() != r || t.cols() != c) throw DimensionError("mtpp parameter " + n + " has the wrong shape");
  };
  const std::size_t d = cfg_.dim;
  expect("emb.mark", cfg_.vocab, d);
  expect("emb.w_t", 1, d);
  expect("emb.w_dt", 1, d);
  expect("emb.b", 1, d);
  expect("emb.pos", cfg_.max_len, d);
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    for (const char* w : {"WS", "WK", "WV"}) expect(block_name(b, w), d, d);
  }
  for (const char* w : {"ffn.w_f", "ffn.b_o", "ffn.w_out", "ffn.b_out", "start"}) expect(w, 1, d);
  expect("head.time.W", d, 2);
  expect("head.time.b", 1, 2);
  expect("head.mark.W", d, cfg_.vocab);
  expect("head.mark.b", 1, cfg_.vocab);
}

MtppModel MtppModel::init(const MtppConfig& cfg, std::uint64_t seed, const MtppInitStats& stats) {
  cfg.validate();
  std::mt19937_64 rng(derive_seed(seed, {21, cfg.mode == AttentionMode::Self ? 0u : 1u}));
  const std::size_t d = cfg.dim;
  const double attn_sd = 1.0 / std::sqrt(static_cast<double>(d));
  const std::string pre = prefix_for(cfg.mode);
  diff::ParamStore p;
  auto add = [&](const std::string& local, Tensor t) { p.add(pre + local, std::move(t)); };
  add("emb.mark", gaussian(cfg.vocab, d, 0.5, rng));
  add("emb.w_t", gaussian(1, d, 0.5, rng));
  add("emb.w_dt", gaussian(1, d, 0.5, rng));
  add("emb.b", Tensor::matrix(1, d));
  add("emb.pos", gaussian(cfg.max_len, d, 0.05, rng));
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    for (const char* w : {"WS", "WK", "WV"}) add(block_name(b, w), gaussian(d, d, attn_sd, rng));
  }
  add("ffn.w_f", gaussian(1, d, 1.0, rng));
  {
    std::uniform_real_distribution<double> u(0.0, 0.2);
    Tensor b_o = Tensor::matrix(1, d);
    for (double& x : b_o.data()) x = u(rng);
    add("ffn.b_o", std::move(b_o));
  }
  add("ffn.w_out", gaussian(1, d, 0.3, rng));
  add("ffn.b_out", Tensor::matrix(1, d));
  add("start", gaussian(1, d, 0.3, rng));
  add("head.time.W", gaussian(d, 2, 0.01, rng));
  add("head.time.b", Tensor::row({stats.mean_log_delta, inverse_softplus(std::max(stats.std_log_delta - kScaleFloor, 0.05))}));
  add("head.mark.W", gaussian(d, cfg.vocab, 0.01, rng));
  Tensor mark_b = Tensor::matrix(1, cfg.vocab);
  if (stats.mark_freq.size() == cfg.vocab) {
    for (std::size_t m = 0; m < cfg.vocab; ++m) mark_b[m] = std::log(std::max(stats.mark_freq[m], 1e-3));
  }
  add("head.mark.b", std::move(mark_b));
  return MtppModel(cfg, std::move(p));
}

std::vector<std::string> MtppModel::head_param_names() const {
  std::vector<std::string> out;
  for (const auto& n : params_.names()) {
    if (n.rfind(prefix_ + "ffn.", 0) == 0 || n.rfind(prefix_ + "head.", 0) == 0) out.push_back(n);
  }
  return out;
}

Var MtppModel::embed(const BoundParams& p, const SeqInput& seq) const {
  const std::size_t n = seq.size();
  if (n == 0) throw SequenceError("cannot embed an empty sequence");
  if (n > cfg_.max_len) {
    throw CapacityError("sequence of " + std::to_string(n) + " events exceeds the position table (" +
                        std::to_string(cfg_.max_len) + ")");
  }
  if (seq.times.rows() != n || seq.times.cols() != 1) throw DimensionError("embed: times must be an n x 1 column");
  for (std::size_t m : seq.marks) {
    if (m >= cfg_.vocab) throw SequenceError("mark " + std::to_string(m) + " outside the model vocabulary");
  }
  const Var t = diff::scale(seq.times, cfg_.time_scale);
  const Var dt = diff::scale(inter_arrivals(seq.times), cfg_.delta_scale);
  Var y = diff::gather_rows(p[name("emb.mark")], seq.marks);
  y = diff::add(y, diff::matmul(t, p[name("emb.w_t")]));
  y = diff::add(y, diff::matmul(dt, p[name("emb.w_dt")]));
  y = diff::add_row(y, p[name("emb.b")]);
  return diff::add(y, diff::slice_rows(p[name("emb.pos")], 0, n));
}

Var MtppModel::attend(const BoundParams& p, std::size_t block, const Var& source, const Var& target, bool causal) const {
  if (source.rows() == 0) throw AttentionError("attention over an empty source");
  if (causal && source.rows() != target.rows()) throw AttentionError("causal attention needs source == target");
  const Var s = diff::matmul(target, p[name(block_name(block, "WS"))]);
  const Var k = diff::matmul(source, p[name(block_name(block, "WK"))]);
  const Var v = diff::matmul(source, p[name(block_name(block, "WV"))]);
  Var logits = diff::scale(diff::matmul(s, diff::transpose(k)), 1.0 / std::sqrt(static_cast<double>(cfg_.dim)));
  if (causal) {
    const std::size_t n = target.rows();
    Tensor mask = Tensor::matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) mask(i, j) = kMaskedLogit;
    }
    logits = diff::add(logits, Var::constant(std::move(mask)));
  }
  return diff::matmul(diff::softmax_rows(logits), v);
}

Var MtppModel::encode(const BoundParams& p, const SeqInput& target, const SeqInput* context, const ForwardOptions& opt) const {
  const bool cross = cfg_.mode == AttentionMode::Cross;
  if (cross && (context == nullptr || context->size() == 0)) throw AttentionError("cross attention needs a context sequence");
  Var y = embed(p, target);
  const Var source = cross ? embed(p, *context) : Var();
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    Var h = cross ? attend(p, b, source, y, false) : attend(p, b, y, y, true);
    if (opt.dropout_seed && cfg_.dropout > 0.0) h = diff::dropout(h, cfg_.dropout, derive_seed(*opt.dropout_seed, {b}));
    y = diff::add(y, h);
  }
  return y;
}

Var MtppModel::prefix_features(const BoundParams& p, const Var& h) const {
  const std::size_t n = h.rows();
  const Var pre = diff::add_row(diff::mul_row(h, p[name("ffn.w_f")]), p[name("ffn.b_o")]);
  const Var f = diff::add_row(diff::mul_row(diff::relu(pre), p[name("ffn.w_out")]), p[name("ffn.b_out")]);
  const Var start = diff::pad_rows(p[name("start")], 0, n);
  if (n == 1) return start;
  Tensor lower = Tensor::matrix(n, n);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) lower(i, j) = 1.0;
  }
  return diff::add(diff::matmul(Var::constant(std::move(lower)), f), start);
}

EventDistributions MtppModel::heads(const BoundParams& p, const Var& hbar) const {
  const Var tq = diff::add_row(diff::matmul(hbar, p[name("head.time.W")]), p[name("head.time.b")]);
  EventDistributions d;
  d.mu = diff::slice_cols(tq, 0, 1);
  d.s = diff::add_scalar(diff::softplus(diff::slice_cols(tq, 1, 1)), kScaleFloor);
  d.log_probs = diff::log_softmax_rows(diff::add_row(diff::matmul(hbar, p[name("head.mark.W")]), p[name("head.mark.b")]));
  return d;
}

EventDistributions MtppModel::distributions(const BoundParams& p, const SeqInput& target, const SeqInput* context,
                                            const ForwardOptions& opt) const {
  return heads(p, prefix_features(p, encode(p, target, context, opt)));
}

Var MtppModel::log_likelihood(const BoundParams& p, const SeqInput& target, const SeqInput* context,
                              const ForwardOptions& opt) const {
  const EventDistributions d = distributions(p, target, context, opt);
  const Var delta = inter_arrivals(target.times);
  for (double x : delta.value().data()) {
    if (!(x > 0.0)) throw DomainError("nonpositive inter-arrival time");
  }
  const std::size_t n = target.size();
  Tensor onehot = Tensor::matrix(n, cfg_.vocab);
  for (std::size_t i = 0; i < n; ++i) onehot(i, target.marks[i]) = 1.0;
  const Var marks = diff::sum(diff::mul(d.log_probs, Var::constant(std::move(onehot))));
  return diff::add(diff::sum(lognormal_log_density(delta, d.mu, d.s)), marks);
}

double lognormal_log_density(double delta, double mu, double s) {
  if (!(delta > 0.0)) throw DomainError("log-normal density needs delta > 0");
  const double l = std::log(delta);
  const double z = (l - mu) / s;
  return -l - std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z * z;
}

Var lognormal_log_density(const Var& delta, const Var& mu, const Var& s) {
  const Var l = diff::log(delta);
  const Var z = diff::div(diff::sub(l, mu), s);
  const Var out = diff::neg(diff::add(diff::add(l, diff::log(s)), diff::scale(diff::square(z), 0.5)));
  return diff::add_scalar(out, -0.5 * std::log(2.0 * std::numbers::pi));
}

double log_likelihood(const MtppModel& model, const EventSequence& target, const EventSequence* context) {
  diff::NoGradGuard guard;
  const BoundParams p(model.params(), false);
  const SeqInput t = SeqInput::from(target);
  if (context) {
    const SeqInput c = SeqInput::from(*context);
    return model.log_likelihood(p, t, &c).item();
  }
  return model.log_likelihood(p, t, nullptr).item();
}

std::vector<EventDistribution> next_event_distributions(const MtppModel& model, const EventSequence& target,
                                                        const EventSequence* context) {
  diff::NoGradGuard guard;
  const BoundParams p(model.params(), false);
  const SeqInput t = SeqInput::from(target);
  std::optional<SeqInput> c;
  if (context) c = SeqInput::from(*context);
  const EventDistributions d = model.distributions(p, t, c ? &*c : nullptr);
  std::vector<EventDistribution> out(t.size());
  const std::size_t v = model.config().vocab;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].mu = d.mu.value()[i];
    out[i].s = d.s.value()[i];
    out[i].mark_probs.resize(v);
    for (std::size_t m = 0; m < v; ++m) out[i].mark_probs[m] = std::exp(d.log_probs.value()(i, m));
  }
  return out;
}

Tensor attention_weights(const MtppModel& model, const Tensor& source, const Tensor& target, bool causal, std::size_t block) {
  diff::NoGradGuard guard;
  const BoundParams p(model.params(), false);
  const std::size_t d = model.config().dim;
  const Var s = diff::matmul(Var::constant(target), p[model.name(block_name(block, "WS"))]);
  const Var k = diff::matmul(Var::constant(source), p[model.name(block_name(block, "WK"))]);
  Var logits = diff::scale(diff::matmul(s, diff::transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  if (causal) {
    if (source.rows() != target.rows()) throw AttentionError("causal attention needs source == target");
    Tensor mask = Tensor::matrix(target.rows(), source.rows());
    for (std::size_t i = 0; i < target.rows(); ++i) {
      for (std::size_t j = i + 1; j < source.rows(); ++j) mask(i, j) = kMaskedLogit;
    }
    logits = diff::add(logits, Var::constant(std::move(mask)));
  }
  return diff::softmax_rows(logits).value();
}

}  // namespace seqret
