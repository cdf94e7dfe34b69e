#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "seqret/diff/autodiff.hpp"
#include "seqret/diff/tensor.hpp"

namespace seqret::diff {

/// Named parameter tensors. The flattening order is lexicographic by name,
/// which is what gradient vectors, Fisher vectors and optimizer moments index
/// into.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::vector<std::string> names() const;
  std::size_t tensor_count() const noexcept { return tensors_.size(); }
  std::size_t size() const noexcept;  // total scalar count
  std::size_t offset(const std::string& name) const;

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  /// Copy of the tensors whose names start with `prefix`.
  ParamStore subset(const std::string& prefix) const;
  /// Insert every tensor of `other` under `prefix`.
  void merge(const ParamStore& other, const std::string& prefix = "");

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Graph leaves bound to a ParamStore, in flattening order.
class BoundParams {
 public:
  /// Leaves require grad when `requires_grad(name)` holds.
  BoundParams(const ParamStore& store, const std::function<bool(const std::string&)>& requires_grad);
  BoundParams(const ParamStore& store, bool requires_grad);

  const Var& operator[](const std::string& name) const;
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<Var>& leaves() const noexcept { return leaves_; }

  /// Leaves that require grad, with their names.
  std::vector<Var> trainable() const;
  std::vector<std::string> trainable_names() const;

 private:
  std::vector<std::string> names_;
  std::vector<Var> leaves_;
  std::map<std::string, std::size_t> index_;
};

/// Flatten per-leaf gradients into the store's order. Missing names get zeros.
std::vector<double> flatten_grads(const ParamStore& store, std::span<const std::string> names, std::span<const Var> grads);

using LossFn = std::function<Var(const BoundParams&)>;

/// d loss / d params in flattening order.
std::vector<double> gradient(const LossFn& loss_fn, const ParamStore& params);

/// Hessian-vector product H * direction of loss_fn at params.
std::vector<double> grad_of_grad(const LossFn& loss_fn, const ParamStore& params, std::span<const double> direction);

}  // namespace seqret::diff
