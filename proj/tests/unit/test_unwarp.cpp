#include <cmath>
#include <random>

#include "doctest.h"
#include "numeric.hpp"
#include "seqret/errors.hpp"
#include "seqret/quadrature.hpp"
#include "seqret/unwarp.hpp"

using namespace seqret;
using diff::Tensor;

namespace {

// Tiny ReLU net whose integrand is exactly slope * tau + offset on tau >= 0.
UnwarpNet linear_integrand(double slope, double offset) {
  UnwarpConfig cfg;
  cfg.hidden = 2;
  cfg.rectifier = Rectifier::Relu;
  cfg.activation = HiddenActivation::Relu;
  diff::ParamStore p;
  p.add("unwarp.W1", Tensor::row({1.0, 0.0}));
  p.add("unwarp.b1", Tensor::row({0.0, 0.0}));
  p.add("unwarp.W2", Tensor({2, 2}, {1.0, 0.0, 0.0, 0.0}));
  p.add("unwarp.b2", Tensor::row({0.0, 0.0}));
  p.add("unwarp.W3", Tensor::column({slope, 0.0}));
  p.add("unwarp.b3", Tensor::scalar(offset));
  return UnwarpNet(cfg, std::move(p));
}

UnwarpNet random_net(std::uint64_t seed, double spread) {
  UnwarpConfig cfg;
  cfg.hidden = 16;
  cfg.input_scale = 0.1;
  UnwarpNet net = UnwarpNet::init(cfg, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, spread);
  for (double& w : net.params().at("unwarp.W3").data()) w = n(rng);
  net.params().at("unwarp.b3")[0] = n(rng);
  return net;
}

}  // namespace

TEST_CASE("Gauss-Legendre rule integrates low-degree polynomials exactly") {
  const auto rule = gauss_legendre(32);
  double wsum = 0.0;
  for (double w : rule.weights) wsum += w;
  CHECK(wsum == doctest::Approx(2.0).epsilon(1e-14));
  for (int deg = 0; deg <= 8; ++deg) {
    const double got = integrate([deg](double x) { return std::pow(x, deg); }, 0.0, 3.0, rule);
    const double want = std::pow(3.0, deg + 1) / (deg + 1);
    CHECK(std::abs(got - want) < 1e-6 * std::max(1.0, want));
  }
  const auto odd = gauss_legendre(5);
  CHECK(odd.nodes[2] == 0.0);
  CHECK(odd.weights[2] == doctest::Approx(128.0 / 225.0).epsilon(1e-14));
  CHECK_THROWS_AS(gauss_legendre(0), ConfigError);
}

TEST_CASE("constant unit integrand is the identity") {
  const auto net = linear_integrand(0.0, 1.0);
  CHECK(unwarp_time(net, 5.0) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(unwarp_time(net, 0.0) == 0.0);
  const EventSequence s("q", {{0.5, 1}, {1.25, 0}, {3.0, 2}}, 4.0);
  const auto u = unwarp_sequence(net, s);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(u[i].time == doctest::Approx(s[i].time).epsilon(1e-14));
  CHECK(u.marks() == s.marks());
  CHECK(unbiasedness_penalty(net, 3.0) == doctest::Approx(0.0));
}

TEST_CASE("integrand 2 tau integrates to t squared") {
  const auto net = linear_integrand(2.0, 0.0);
  CHECK(integrand_value(net, 1.5) == doctest::Approx(3.0));
  CHECK(std::abs(unwarp_time(net, 3.0) - 9.0) < 1e-6);
}

TEST_CASE("zero integrand gives penalty T / sigma^2") {
  const auto net = linear_integrand(0.0, 0.0);
  CHECK(unbiasedness_penalty(net, 2.0) == doctest::Approx(2.0).epsilon(1e-12));
  UnwarpNet sharper = net;
  sharper.config().sigma = 0.5;
  CHECK(unbiasedness_penalty(sharper, 2.0) == doctest::Approx(8.0).epsilon(1e-12));
  CHECK_THROWS_AS(unbiasedness_penalty(net, 0.0), DomainError);
}

TEST_CASE("negative times are a domain error") {
  const auto net = linear_integrand(0.0, 1.0);
  CHECK_THROWS_AS(unwarp_time(net, -1e-9), DomainError);
}

TEST_CASE("default initialisation starts close to the identity") {
  UnwarpConfig cfg;
  cfg.input_scale = 1.0 / 50.0;
  const auto net = UnwarpNet::init(cfg, 4);
  for (double t : {1.0, 10.0, 40.0}) CHECK(std::abs(unwarp_time(net, t) / t - 1.0) < 0.2);
}

TEST_CASE("random nets are monotone and keep chronological order") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unit(0.0, 20.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto net = random_net(static_cast<std::uint64_t>(trial), 3.0);
    double a = unit(rng);
    double b = unit(rng);
    if (a > b) std::swap(a, b);
    CHECK(unwarp_time(net, a) <= unwarp_time(net, b));
    const EventSequence s("q", {{a * 0.5, 0}, {a, 1}, {b, 0}, {b + 0.01, 1}}, b + 1.0);
    const auto u = unwarp_sequence(net, s);
    for (std::size_t i = 1; i < u.size(); ++i) CHECK(u[i - 1].time < u[i].time);
  }
}

TEST_CASE("unwarp gradient matches central differences") {
  const auto net = random_net(77, 0.5);
  const std::vector<double> times{0.3, 2.0, 7.5};
  const diff::LossFn f = [&](const diff::BoundParams& p) {
    const auto u = net.unwarp_times(p, times);
    return diff::add(diff::sum(diff::square(u)), net.unbiasedness_penalty(p, 9.0));
  };
  const auto g = diff::gradient(f, net.params());
  const auto fd = testing_support::fd_gradient(
      [&](const diff::ParamStore& q) {
        UnwarpNet other(net.config(), q);
        diff::NoGradGuard guard;
        const diff::BoundParams b(q, false);
        const auto u = other.unwarp_times(b, times);
        return diff::add(diff::sum(diff::square(u)), other.unbiasedness_penalty(b, 9.0)).item();
      },
      net.params());
  CHECK(testing_support::max_rel_err(g, fd) < 1e-4);
}

TEST_CASE("noise is drawn only when enabled and seeded") {
  UnwarpConfig cfg;
  cfg.hidden = 8;
  cfg.noise = true;
  cfg.sigma = 0.5;
  const auto net = UnwarpNet::init(cfg, 1);
  const diff::BoundParams p(net.params(), false);
  const double clean = net.unwarp_times(p, {2.0}).item();
  CHECK(unwarp_time(net, 2.0) == clean);
  const double noisy = net.unwarp_times(p, {2.0}, 123).item();
  CHECK(noisy != clean);
  CHECK(net.unwarp_times(p, {2.0}, 123).item() == noisy);
}
