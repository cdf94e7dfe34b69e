#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "numeric.hpp"
#include "quad.hpp"
#include "seqret/errors.hpp"
#include "seqret/mtpp.hpp"

using namespace seqret;
using diff::BoundParams;
using diff::Tensor;
using diff::Var;

namespace {

MtppConfig small(AttentionMode mode, std::size_t dim = 4, std::size_t vocab = 3) {
  MtppConfig cfg;
  cfg.dim = dim;
  cfg.vocab = vocab;
  cfg.max_len = 16;
  cfg.mode = mode;
  return cfg;
}

void zero_all(MtppModel& m) {
  for (const auto& n : m.params().names()) {
    for (double& x : m.params().at(n).data()) x = 0.0;
  }
}

EventSequence random_sequence(std::mt19937_64& rng, std::size_t n, std::size_t vocab, const std::string& id = "s") {
  std::exponential_distribution<double> gap(1.0);
  std::vector<Event> ev;
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    t += gap(rng) + 0.05;
    ev.push_back({t, static_cast<std::size_t>(rng() % vocab)});
  }
  return EventSequence(id, std::move(ev), t + 1.0);
}

}  // namespace

TEST_CASE("zero weights embed to zero") {
  auto m = MtppModel::init(small(AttentionMode::Self), 1);
  zero_all(m);
  const BoundParams p(m.params(), false);
  const EventSequence s("s", {{0.5, 0}, {1.5, 2}}, 3.0);
  const Var y = m.embed(p, SeqInput::from(s));
  for (double v : y.value().data()) CHECK(v == 0.0);
}

TEST_CASE("single event embedding by hand") {
  auto m = MtppModel::init(small(AttentionMode::Self), 1);
  zero_all(m);
  m.params().at("mtpp_self.emb.w_t")[0] = 1.0;
  m.params().at("mtpp_self.emb.w_dt")[0] = 1.0;
  const BoundParams p(m.params(), false);
  const EventSequence s("s", {{1.0, 0}}, 2.0);
  const Tensor y = m.embed(p, SeqInput::from(s)).value();
  CHECK(y[0] == 2.0);
  for (std::size_t j = 1; j < 4; ++j) CHECK(y[j] == 0.0);
}

TEST_CASE("position embeddings make outputs order-sensitive") {
  auto m = MtppModel::init(small(AttentionMode::Self), 2);
  const EventSequence s("s", {{0.5, 1}, {1.5, 1}}, 3.0);
  const BoundParams p(m.params(), false);
  const Tensor before = m.embed(p, SeqInput::from(s)).value();
  auto& pos = m.params().at("mtpp_self.emb.pos");
  for (std::size_t j = 0; j < 4; ++j) std::swap(pos(0, j), pos(1, j));
  const BoundParams q(m.params(), false);
  CHECK_FALSE(m.embed(q, SeqInput::from(s)).value() == before);
}

TEST_CASE("too long a sequence is a capacity error") {
  auto cfg = small(AttentionMode::Self);
  cfg.max_len = 3;
  const auto m = MtppModel::init(cfg, 1);
  const BoundParams p(m.params(), false);
  const EventSequence s("s", {{0.5, 1}, {1.0, 1}, {1.5, 0}, {2.0, 0}}, 3.0);
  CHECK_THROWS_AS(m.embed(p, SeqInput::from(s)), CapacityError);
}

TEST_CASE("attention") {
  std::mt19937_64 rng(4);
  const auto m = MtppModel::init(small(AttentionMode::Cross, 5), 3);
  const BoundParams p(m.params(), false);

  SUBCASE("one source means every target reads v_1") {
    const Tensor src = testing_support::random_tensor(1, 5, rng);
    const Tensor tgt = testing_support::random_tensor(4, 5, rng);
    const Tensor h = m.attend(p, 0, Var::constant(src), Var::constant(tgt), false).value();
    const Tensor v = diff::matmul(Var::constant(src), p["mtpp_cross.attn0.WV"]).value();
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 5; ++j) CHECK(h(i, j) == doctest::Approx(v[j]).epsilon(1e-14));
    }
  }
  SUBCASE("zero query weights average the values") {
    auto z = m;
    for (double& x : z.params().at("mtpp_cross.attn0.WS").data()) x = 0.0;
    const BoundParams pz(z.params(), false);
    const Tensor src = testing_support::random_tensor(3, 5, rng);
    const Tensor tgt = testing_support::random_tensor(2, 5, rng);
    const Tensor h = z.attend(pz, 0, Var::constant(src), Var::constant(tgt), false).value();
    const Tensor v = diff::matmul(Var::constant(src), pz["mtpp_cross.attn0.WV"]).value();
    for (std::size_t j = 0; j < 5; ++j) {
      const double mean = (v(0, j) + v(1, j) + v(2, j)) / 3.0;
      CHECK(h(0, j) == doctest::Approx(mean).epsilon(1e-13));
      CHECK(h(1, j) == doctest::Approx(mean).epsilon(1e-13));
    }
  }
  SUBCASE("weights match a direct softmax") {
    const Tensor src = testing_support::random_tensor(4, 5, rng);
    const Tensor tgt = testing_support::random_tensor(3, 5, rng);
    const Tensor w = attention_weights(m, src, tgt, false);
    const Tensor& ws = m.params().at("mtpp_cross.attn0.WS");
    const Tensor& wk = m.params().at("mtpp_cross.attn0.WK");
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<double> logit(4, 0.0);
      for (std::size_t k = 0; k < 4; ++k) {
        for (std::size_t a = 0; a < 5; ++a) {
          for (std::size_t b = 0; b < 5; ++b) {
            for (std::size_t c = 0; c < 5; ++c) logit[k] += tgt(i, b) * ws(b, a) * src(k, c) * wk(c, a);
          }
        }
        logit[k] /= std::sqrt(5.0);
      }
      double z = 0.0;
      for (double l : logit) z += std::exp(l);
      double row = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        CHECK(std::abs(w(i, k) - std::exp(logit[k]) / z) < 1e-12);
        row += w(i, k);
      }
      CHECK(std::abs(row - 1.0) < 1e-12);
    }
  }
  SUBCASE("causal weights vanish above the diagonal") {
    const Tensor y = testing_support::random_tensor(4, 5, rng);
    const Tensor w = attention_weights(m, y, y, true);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = i + 1; j < 4; ++j) CHECK(w(i, j) == 0.0);
    }
    CHECK(w(0, 0) == 1.0);
  }
  SUBCASE("empty context is rejected") {
    const EventSequence s("s", {{0.5, 1}}, 1.0);
    CHECK_THROWS_AS(m.encode(p, SeqInput::from(s), nullptr), AttentionError);
  }
}

TEST_CASE("head outputs") {
  auto m = MtppModel::init(small(AttentionMode::Self), 5);
  std::mt19937_64 rng(6);
  const EventSequence s = random_sequence(rng, 6, 3);

  SUBCASE("zero mark head is uniform") {
    for (const char* n : {"mtpp_self.head.mark.W", "mtpp_self.head.mark.b"}) {
      for (double& x : m.params().at(n).data()) x = 0.0;
    }
    for (const auto& d : next_event_distributions(m, s)) {
      for (double pm : d.mark_probs) CHECK(pm == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    }
  }
  SUBCASE("zero time head gives mu 0 and s = ln 2 + 1e-4") {
    for (const char* n : {"mtpp_self.head.time.W", "mtpp_self.head.time.b"}) {
      for (double& x : m.params().at(n).data()) x = 0.0;
    }
    for (const auto& d : next_event_distributions(m, s)) {
      CHECK(d.mu == 0.0);
      CHECK(d.s == doctest::Approx(std::log(2.0) + 1e-4).epsilon(1e-14));
    }
  }
  SUBCASE("random parameters always give valid distributions") {
    for (int trial = 0; trial < 20; ++trial) {
      auto r = MtppModel::init(small(AttentionMode::Self), static_cast<std::uint64_t>(trial));
      std::normal_distribution<double> n(0.0, 3.0);
      for (double& x : r.params().at("mtpp_self.head.time.W").data()) x = n(rng);
      for (double& x : r.params().at("mtpp_self.head.mark.W").data()) x = n(rng);
      for (const auto& d : next_event_distributions(r, s)) {
        CHECK(d.s > 0.0);
        double total = 0.0;
        for (double pm : d.mark_probs) {
          CHECK(pm >= 0.0);
          total += pm;
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("one-event likelihood equals the closed form") {
  const auto m = MtppModel::init(small(AttentionMode::Self), 8);
  const EventSequence s("s", {{0.7, 2}}, 1.0);
  const auto d = next_event_distributions(m, s).at(0);
  const double l = std::log(0.7);
  const double want = -l - std::log(d.s) - 0.5 * std::log(2 * std::numbers::pi) -
                      (l - d.mu) * (l - d.mu) / (2 * d.s * d.s) + std::log(d.mark_probs[2]);
  CHECK(log_likelihood(m, s) == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("log-normal density integrates to one") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> mu(-2.0, 2.0);
  std::uniform_real_distribution<double> sd(0.1, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double m = mu(rng);
    const double s = sd(rng);
    // substitute x = e^u so the integrand is smooth and its support bounded
    double mass = 0.0;
    const double lo = m - 12.0 * s;
    const double width = 24.0 * s / 64.0;
    for (int k = 0; k < 64; ++k) {
      mass += testing_support::adaptive_simpson(
          [&](double u) { return std::exp(lognormal_log_density(std::exp(u), m, s) + u); }, lo + k * width,
          lo + (k + 1) * width, 1e-12);
    }
    CHECK(std::abs(mass - 1.0) < 1e-3);
  }
  CHECK_THROWS_AS(lognormal_log_density(0.0, 0.0, 1.0), DomainError);
}

TEST_CASE("scaling the mark head keeps the argmax") {
  auto m = MtppModel::init(small(AttentionMode::Self), 12);
  std::mt19937_64 rng(12);
  const EventSequence s = random_sequence(rng, 5, 3);
  const auto before = next_event_distributions(m, s);
  const double ll_before = log_likelihood(m, s);
  for (const char* n : {"mtpp_self.head.mark.W", "mtpp_self.head.mark.b"}) {
    for (double& x : m.params().at(n).data()) x *= 3.0;
  }
  const auto after = next_event_distributions(m, s);
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto argmax = [](const std::vector<double>& v) { return std::max_element(v.begin(), v.end()) - v.begin(); };
    CHECK(argmax(before[i].mark_probs) == argmax(after[i].mark_probs));
  }
  CHECK(log_likelihood(m, s) != ll_before);
}

TEST_CASE("causal mask: later events never change earlier predictions") {
  const auto m = MtppModel::init(small(AttentionMode::Self, 6), 14);
  std::mt19937_64 rng(14);
  const EventSequence s = random_sequence(rng, 8, 3);
  const auto base = next_event_distributions(m, s);
  for (std::size_t k = 0; k < s.size(); ++k) {
    auto ev = s.events();
    const double lo = k == 0 ? 0.0 : ev[k - 1].time;
    ev[k].time = 0.5 * (lo + ev[k].time);
    ev[k].mark = (ev[k].mark + 1) % 3;
    const auto pert = next_event_distributions(m, EventSequence("s", ev, s.horizon()));
    for (std::size_t i = 0; i <= k; ++i) {
      CHECK(pert[i].mu == base[i].mu);
      CHECK(pert[i].s == base[i].s);
      CHECK(pert[i].mark_probs == base[i].mark_probs);
    }
    bool changed = false;
    for (std::size_t i = k + 1; i < s.size(); ++i) changed = changed || pert[i].mu != base[i].mu;
    if (k + 1 < s.size()) CHECK(changed);
  }
}

TEST_CASE("cross mode depends on the query") {
  const auto m = MtppModel::init(small(AttentionMode::Cross, 6), 15);
  std::mt19937_64 rng(15);
  const EventSequence c = random_sequence(rng, 6, 3);
  const EventSequence q1 = random_sequence(rng, 5, 3);
  const EventSequence q2 = random_sequence(rng, 5, 3);
  CHECK(log_likelihood(m, c, &q1) != log_likelihood(m, c, &q2));
}

TEST_CASE("likelihood gradient matches finite differences") {
  std::mt19937_64 rng(16);
  for (AttentionMode mode : {AttentionMode::Self, AttentionMode::Cross}) {
    for (int trial = 0; trial < 3; ++trial) {
      auto cfg = small(mode, 8);
      cfg.max_len = 10;
      const auto m = MtppModel::init(cfg, 100 + static_cast<std::uint64_t>(trial));
      const EventSequence t = random_sequence(rng, 1 + rng() % 8, 3);
      const EventSequence q = random_sequence(rng, 1 + rng() % 8, 3);
      const SeqInput ti = SeqInput::from(t);
      const SeqInput qi = SeqInput::from(q);
      const SeqInput* ctx = mode == AttentionMode::Cross ? &qi : nullptr;
      const diff::LossFn f = [&](const BoundParams& p) { return m.log_likelihood(p, ti, ctx); };
      const auto g = diff::gradient(f, m.params());
      const auto fd = testing_support::fd_gradient(
          [&](const diff::ParamStore& ps) {
            const MtppModel other(cfg, ps);
            diff::NoGradGuard guard;
            return other.log_likelihood(BoundParams(ps, false), ti, ctx).item();
          },
          m.params());
      CHECK(testing_support::max_rel_err(g, fd) < 1e-4);
    }
  }
}

TEST_CASE("dropout is active only with a seed") {
  const auto m = MtppModel::init(small(AttentionMode::Self, 6), 18);
  std::mt19937_64 rng(18);
  const SeqInput s = SeqInput::from(random_sequence(rng, 6, 3));
  const BoundParams p(m.params(), false);
  const double eval = m.log_likelihood(p, s, nullptr).item();
  CHECK(m.log_likelihood(p, s, nullptr, {}).item() == eval);
  const double a = m.log_likelihood(p, s, nullptr, {7}).item();
  CHECK(a != eval);
  CHECK(m.log_likelihood(p, s, nullptr, {7}).item() == a);
}
