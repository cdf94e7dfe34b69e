#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace seqret {

/// Gauss-Legendre nodes and weights on [-1, 1]; exact for polynomials of
/// degree <= 2n - 1.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t order() const noexcept { return nodes.size(); }
};

QuadratureRule gauss_legendre(std::size_t n);

/// Integral of f over [a, b] with the rule rescaled to the interval.
double integrate(const std::function<double(double)>& f, double a, double b, const QuadratureRule& rule);

}  // namespace seqret
