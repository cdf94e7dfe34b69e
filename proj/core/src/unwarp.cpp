#include "seqret/unwarp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "seqret/errors.hpp"
#include "seqret/seeding.hpp"

namespace seqret {

using diff::BoundParams;
using diff::Tensor;
using diff::Var;

namespace {

Var activate(const Var& x, HiddenActivation a) { return a == HiddenActivation::Tanh ? diff::tanh(x) : diff::relu(x); }

const std::string& name(const char* suffix) {
  static thread_local std::string buf;
  buf = UnwarpNet::kPrefix + suffix;
  return buf;
}

}  // namespace

UnwarpNet::UnwarpNet(UnwarpConfig cfg, diff::ParamStore params)
    : cfg_(cfg), params_(std::move(params)), rule_(gauss_legendre(cfg.quadrature_order)) {
  for (const char* n : {"W1", "b1", "W2", "b2", "W3", "b3"}) {
    if (!params_.contains(kPrefix + n)) throw ConfigError(std::string("unwarp parameters lack ") + n);
  }
  if (!(cfg_.sigma > 0.0)) throw ConfigError("unwarp sigma must be > 0");
}

UnwarpNet UnwarpNet::init(const UnwarpConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, {11}));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const std::size_t h = cfg.hidden;
  diff::ParamStore p;
  Tensor w1 = Tensor::matrix(1, h);
  Tensor b1 = Tensor::matrix(1, h);
  for (std::size_t j = 0; j < h; ++j) {
    w1[j] = 2.0 * normal(rng);
    b1[j] = unit(rng);
  }
  Tensor w2 = Tensor::matrix(h, h);
  for (double& x : w2.data()) x = normal(rng) / std::sqrt(static_cast<double>(h));
  Tensor w3 = Tensor::matrix(h, 1);
  for (double& x : w3.data()) x = 0.1 * normal(rng) / std::sqrt(static_cast<double>(h));
  // inverse softplus of (1 - floor) so the integrand starts near 1
  const double target = cfg.rectifier == Rectifier::Softplus ? 1.0 - cfg.floor : 1.0;
  const double b3 = cfg.rectifier == Rectifier::Softplus ? std::log(std::expm1(target)) : target;
  p.add(kPrefix + "W1", std::move(w1));
  p.add(kPrefix + "b1", std::move(b1));
  p.add(kPrefix + "W2", std::move(w2));
  p.add(kPrefix + "b2", Tensor::matrix(1, h));
  p.add(kPrefix + "W3", std::move(w3));
  p.add(kPrefix + "b3", Tensor::scalar(b3));
  return UnwarpNet(cfg, std::move(p));
}

Var UnwarpNet::integrand(const BoundParams& p, const Var& points) const {
  const Var x = diff::scale(points, cfg_.input_scale);
  Var h = activate(diff::add_row(diff::matmul(x, p[name("W1")]), p[name("b1")]), cfg_.activation);
  h = activate(diff::add_row(diff::matmul(h, p[name("W2")]), p[name("b2")]), cfg_.activation);
  const Var out = diff::add_row(diff::matmul(h, p[name("W3")]), p[name("b3")]);
  if (cfg_.rectifier == Rectifier::Relu) return diff::relu(out);
  return diff::add_scalar(diff::softplus(out), cfg_.floor);
}

Var UnwarpNet::unwarp_times(const BoundParams& p, const std::vector<double>& times, std::optional<std::uint64_t> noise_seed) const {
  const std::size_t n = times.size();
  const std::size_t k = rule_.order();
  for (double t : times) {
    if (!(t >= 0.0)) throw DomainError("unwarp: time must be >= 0");
  }
  // Integrate piecewise between consecutive sorted times and accumulate, so
  // U is exactly nondecreasing across one call regardless of quadrature error.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  Tensor points = Tensor::matrix(n * k, 1);
  Tensor widths = Tensor::matrix(n, 1);
  double lo = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double hi = times[order[i]];
    widths[i] = hi - lo;
    for (std::size_t j = 0; j < k; ++j) points[i * k + j] = lo + (hi - lo) * 0.5 * (rule_.nodes[j] + 1.0);
    lo = hi;
  }
  Tensor half_weights = Tensor::matrix(k, 1);
  for (std::size_t j = 0; j < k; ++j) half_weights[j] = 0.5 * rule_.weights[j];
  const Var u = diff::reshape(integrand(p, Var::constant(std::move(points))), n, k);
  const Var pieces = diff::mul(diff::matmul(u, Var::constant(std::move(half_weights))), Var::constant(std::move(widths)));
  Var out = pieces;
  if (n > 1) {
    Tensor lower = Tensor::matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) lower(i, j) = 1.0;
    }
    out = diff::matmul(Var::constant(std::move(lower)), pieces);
    std::vector<std::size_t> rank(n);
    for (std::size_t i = 0; i < n; ++i) rank[order[i]] = i;
    out = diff::gather_rows(out, std::move(rank));
  }
  if (noise_seed && cfg_.noise) {
    std::mt19937_64 rng(*noise_seed);
    std::normal_distribution<double> eta(0.0, cfg_.sigma);
    out = diff::add_scalar(out, eta(rng));
  }
  return out;
}

Var UnwarpNet::unbiasedness_penalty(const BoundParams& p, double horizon) const {
  if (!(horizon > 0.0)) throw DomainError("unbiasedness penalty needs T > 0");
  const std::size_t k = rule_.order();
  Tensor points = Tensor::matrix(k, 1);
  Tensor weights = Tensor::matrix(k, 1);
  for (std::size_t j = 0; j < k; ++j) {
    points[j] = horizon * 0.5 * (rule_.nodes[j] + 1.0);
    weights[j] = 0.5 * horizon * rule_.weights[j];
  }
  const Var dev = diff::square(diff::add_scalar(integrand(p, Var::constant(std::move(points))), -1.0));
  const Var integral = diff::sum(diff::mul(dev, Var::constant(std::move(weights))));
  return diff::scale(integral, 1.0 / (cfg_.sigma * cfg_.sigma));
}

double unwarp_time(const UnwarpNet& net, double t) {
  if (!(t >= 0.0)) throw DomainError("unwarp: time must be >= 0");
  diff::NoGradGuard guard;
  const BoundParams p(net.params(), false);
  return net.unwarp_times(p, {t}).item();
}

double integrand_value(const UnwarpNet& net, double tau) {
  diff::NoGradGuard guard;
  const BoundParams p(net.params(), false);
  return net.integrand(p, Var::constant(Tensor::scalar(tau))).item();
}

EventSequence unwarp_sequence(const UnwarpNet& net, const EventSequence& seq) {
  diff::NoGradGuard guard;
  const BoundParams p(net.params(), false);
  std::vector<double> times = seq.times();
  times.push_back(seq.horizon());
  const Var u = net.unwarp_times(p, times);
  std::vector<double> out(u.value().data().begin(), u.value().data().end());
  const double horizon = out.back();
  out.pop_back();
  return seq.with_times(out, horizon);
}

double unbiasedness_penalty(const UnwarpNet& net, double horizon) {
  diff::NoGradGuard guard;
  const BoundParams p(net.params(), false);
  return net.unbiasedness_penalty(p, horizon).item();
}

}  // namespace seqret
