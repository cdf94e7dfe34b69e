#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "seqret/diff/param_store.hpp"

namespace testing_support {

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Largest relative error between two vectors, measured against the larger norm.
inline double max_rel_err(std::span<const double> a, std::span<const double> b) {
  double scale = 1e-12;
  for (std::size_t i = 0; i < a.size(); ++i) scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  return worst;
}

/// Central finite-difference gradient of a scalar function of the flat params.
inline std::vector<double> fd_gradient(const std::function<double(const seqret::diff::ParamStore&)>& f,
                                       const seqret::diff::ParamStore& params, double h = 1e-3) {
  std::vector<double> flat = params.flatten();
  std::vector<double> out(flat.size());
  seqret::diff::ParamStore work = params;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double orig = flat[i];
    flat[i] = orig + h;
    work.unflatten(flat);
    const double up = f(work);
    flat[i] = orig - h;
    work.unflatten(flat);
    const double down = f(work);
    flat[i] = orig;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

inline double eval_loss(const seqret::diff::LossFn& fn, const seqret::diff::ParamStore& p) {
  seqret::diff::NoGradGuard guard;
  return fn(seqret::diff::BoundParams(p, false)).item();
}

inline seqret::diff::Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  auto t = seqret::diff::Tensor::matrix(r, c);
  for (double& x : t.data()) x = n(rng);
  return t;
}

}  // namespace testing_support
