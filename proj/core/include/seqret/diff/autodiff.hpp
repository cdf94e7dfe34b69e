#pragma once

// Reverse-mode differentiation over matrix-valued nodes.
//
// Every backward rule is written in terms of the same differentiable
// primitives, so a gradient computed with create_graph = true is itself a
// graph and can be differentiated again (Hessian-vector products, losses that
// contain a gradient).

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "seqret/diff/tensor.hpp"

namespace seqret::diff {

struct Node;

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Graph input that gradients can be taken with respect to.
  static Var leaf(Tensor value, bool requires_grad = true);
  static Var constant(Tensor value);
  static Var scalar(double v);

  const Tensor& value() const;
  double item() const;  // value of a 1x1 node
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  bool defined() const noexcept { return static_cast<bool>(node_); }
  const char* op() const;

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& shared() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Receives the node's own output and the incoming gradient; returns one
/// gradient per input (undefined Var where the input needs none).
using BackwardFn = std::function<std::vector<Var>(const Var& self, const Var& grad)>;

struct Node {
  Tensor value;
  std::vector<Var> inputs;
  BackwardFn backward;
  const char* op = "leaf";
  bool requires_grad = false;
};

/// True while operations record graph edges (thread-local).
bool recording() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Gradients of a 1x1 output with respect to each of `wrt`. Inputs the
/// output does not depend on receive zeros. With create_graph the returned
/// gradients are differentiable.
std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph = false);

// --- primitives -----------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var relu(const Var& a);
Var abs(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var pow(const Var& a, double p);

Var sum(const Var& a);
Var row_sum(const Var& a);  // n x m -> n x 1
Var col_sum(const Var& a);  // n x m -> 1 x m
Var broadcast_rows(const Var& row, std::size_t n);    // 1 x m -> n x m
Var broadcast_cols(const Var& col, std::size_t m);    // n x 1 -> n x m
Var broadcast_scalar(const Var& s, std::size_t n, std::size_t m);

Var gather_rows(const Var& table, std::vector<std::size_t> index);
Var scatter_rows(const Var& src, std::vector<std::size_t> index, std::size_t rows);
Var slice_rows(const Var& a, std::size_t start, std::size_t len);
Var pad_rows(const Var& a, std::size_t start, std::size_t total);
Var slice_cols(const Var& a, std::size_t start, std::size_t len);
Var pad_cols(const Var& a, std::size_t start, std::size_t total);
Var concat_cols(std::span<const Var> parts);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

// --- composites -----------------------------------------------------------

Var dot(const Var& a, const Var& b);
Var add_row(const Var& m, const Var& row);  // bias add
Var mul_row(const Var& m, const Var& row);
/// Flatten each part row-major and concatenate into a 1 x N row.
Var flatten_concat(std::span<const Var> parts);
/// Multiply by a fixed 0/1 mask scaled by 1/(1-p); identity when p == 0.
Var dropout(const Var& a, double p, std::uint64_t seed);

}  // namespace seqret::diff
