#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seqret/diff/param_store.hpp"

namespace seqret::diff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  AdamConfig config;
  std::vector<double> m;  // first moments, flattening order
  std::vector<double> v;  // second moments
  std::uint64_t step = 0;

  static AdamState for_params(const ParamStore& params, AdamConfig config = {});

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update. A non-finite gradient throws NumericError
/// before anything is modified.
void adam_step(AdamState& state, ParamStore& params, std::span<const double> grads);

}  // namespace seqret::diff
