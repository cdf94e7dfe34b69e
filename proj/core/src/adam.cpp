#include "seqret/diff/adam.hpp"

#include <cmath>

#include "seqret/errors.hpp"

namespace seqret::diff {

AdamState AdamState::for_params(const ParamStore& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  s.m.assign(params.size(), 0.0);
  s.v.assign(params.size(), 0.0);
  return s;
}

void adam_step(AdamState& state, ParamStore& params, std::span<const double> grads) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n) {
    throw DimensionError("adam_step: gradient, moment and parameter sizes differ");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
  }
  const auto& c = state.config;
  const auto t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  std::vector<double> flat = params.flatten();
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    flat[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
  params.unflatten(flat);
  ++state.step;
}

}  // namespace seqret::diff
