#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seqret/ctes.hpp"
#include "seqret/diff/param_store.hpp"
#include "seqret/quadrature.hpp"

namespace seqret {

enum class Rectifier { Softplus, Relu };
enum class HiddenActivation { Tanh, Relu };

struct UnwarpConfig {
  std::size_t hidden = 128;
  std::size_t quadrature_order = 32;
  /// Scale of the noise term and of the unbiasedness regularizer weight 1/sigma^2.
  double sigma = 1.0;
  /// Draw eta ~ N(0, sigma) on training passes; eta is always 0 at inference.
  bool noise = false;
  Rectifier rectifier = Rectifier::Softplus;
  HiddenActivation activation = HiddenActivation::Tanh;
  /// Integrand input is tau * input_scale (typically 1 / T).
  double input_scale = 1.0;
  double floor = 1e-6;  // added to the softplus output only
};

/// Monotone time transform U(t) = int_0^t u(tau) dtau + eta with a
/// nonnegative two-hidden-layer integrand u. Parameters live under the
/// "unwarp." prefix.
class UnwarpNet {
 public:
  static inline const std::string kPrefix = "unwarp.";

  UnwarpNet(UnwarpConfig cfg, diff::ParamStore params);
  /// Random hidden weights with the output bias chosen so that u is close to 1.
  static UnwarpNet init(const UnwarpConfig& cfg, std::uint64_t seed);

  const UnwarpConfig& config() const noexcept { return cfg_; }
  UnwarpConfig& config() noexcept { return cfg_; }
  const diff::ParamStore& params() const noexcept { return params_; }
  diff::ParamStore& params() noexcept { return params_; }
  const QuadratureRule& rule() const noexcept { return rule_; }

  /// u at the given points (k x 1 column), differentiable in the bound params.
  diff::Var integrand(const diff::BoundParams& p, const diff::Var& points) const;

  /// U at every time (n x 1 column), integrated piecewise between the sorted
  /// times so the outputs of one call are ordered like the inputs. With
  /// noise_seed set and noise enabled a single eta draw is added.
  diff::Var unwarp_times(const diff::BoundParams& p, const std::vector<double>& times,
                         std::optional<std::uint64_t> noise_seed = std::nullopt) const;

  /// (1/sigma^2) int_0^T (u(t) - 1)^2 dt by the same quadrature.
  diff::Var unbiasedness_penalty(const diff::BoundParams& p, double horizon) const;

 private:
  UnwarpConfig cfg_;
  diff::ParamStore params_;
  QuadratureRule rule_;
};

// One quadrature panel over [0, t]. Separate calls keep their order with the
// smooth rectifier; with the hard ReLU a kink inside the panel can reorder two
// close times, so batch ordered times through unwarp_sequence instead.
double unwarp_time(const UnwarpNet& net, double t);
double integrand_value(const UnwarpNet& net, double tau);
EventSequence unwarp_sequence(const UnwarpNet& net, const EventSequence& seq);
double unbiasedness_penalty(const UnwarpNet& net, double horizon);

}  // namespace seqret
