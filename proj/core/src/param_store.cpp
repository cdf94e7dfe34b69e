#include "seqret/diff/param_store.hpp"

#include <algorithm>

#include "seqret/errors.hpp"

namespace seqret::diff {

void ParamStore::add(const std::string& name, Tensor value) {
  if (!tensors_.emplace(name, std::move(value)).second) {
    throw ConfigError("duplicate parameter name: " + name);
  }
}

Tensor& ParamStore::at(const std::string& name) {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

std::size_t ParamStore::size() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

std::size_t ParamStore::offset(const std::string& name) const {
  std::size_t off = 0;
  for (const auto& [n, t] : tensors_) {
    if (n == name) return off;
    off += t.numel();
  }
  throw ConfigError("unknown parameter: " + name);
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for (const auto& [_, t] : tensors_) flat.insert(flat.end(), t.data().begin(), t.data().end());
  return flat;
}

void ParamStore::unflatten(std::span<const double> flat) {
  if (flat.size() != size()) throw DimensionError("flat parameter vector has the wrong length");
  std::size_t off = 0;
  for (auto& [_, t] : tensors_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.numel(), t.data().begin());
    off += t.numel();
  }
}

ParamStore ParamStore::subset(const std::string& prefix) const {
  ParamStore out;
  for (const auto& [name, t] : tensors_) {
    if (name.rfind(prefix, 0) == 0) out.add(name, t);
  }
  return out;
}

void ParamStore::merge(const ParamStore& other, const std::string& prefix) {
  for (const auto& [name, t] : other) add(prefix + name, t);
}

BoundParams::BoundParams(const ParamStore& store, const std::function<bool(const std::string&)>& requires_grad) {
  for (const auto& [name, t] : store) {
    index_.emplace(name, leaves_.size());
    names_.push_back(name);
    leaves_.push_back(Var::leaf(t, requires_grad(name)));
  }
}

BoundParams::BoundParams(const ParamStore& store, bool requires_grad)
    : BoundParams(store, [requires_grad](const std::string&) { return requires_grad; }) {}

const Var& BoundParams::operator[](const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unbound parameter: " + name);
  return leaves_[it->second];
}

std::vector<Var> BoundParams::trainable() const {
  std::vector<Var> out;
  for (const Var& v : leaves_) {
    if (v.requires_grad()) out.push_back(v);
  }
  return out;
}

std::vector<std::string> BoundParams::trainable_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    if (leaves_[i].requires_grad()) out.push_back(names_[i]);
  }
  return out;
}

std::vector<double> flatten_grads(const ParamStore& store, std::span<const std::string> names, std::span<const Var> grads) {
  if (names.size() != grads.size()) throw DimensionError("gradient/name count mismatch");
  std::map<std::string, const Var*> by_name;
  for (std::size_t i = 0; i < names.size(); ++i) by_name.emplace(names[i], &grads[i]);
  std::vector<double> flat;
  flat.reserve(store.size());
  for (const auto& [name, t] : store) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      flat.insert(flat.end(), t.numel(), 0.0);
    } else {
      const auto data = it->second->value().data();
      if (data.size() != t.numel()) throw DimensionError("gradient shape mismatch for " + name);
      flat.insert(flat.end(), data.begin(), data.end());
    }
  }
  return flat;
}

std::vector<double> gradient(const LossFn& loss_fn, const ParamStore& params) {
  const BoundParams bound(params, true);
  const Var loss = loss_fn(bound);
  const auto grads = grad(loss, bound.leaves(), false);
  return flatten_grads(params, bound.names(), grads);
}

std::vector<double> grad_of_grad(const LossFn& loss_fn, const ParamStore& params, std::span<const double> direction) {
  if (direction.size() != params.size()) throw DimensionError("direction length differs from parameter count");
  const BoundParams bound(params, true);
  const Var loss = loss_fn(bound);
  const auto grads = grad(loss, bound.leaves(), true);
  Var directional = Var::scalar(0.0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const Tensor& shape_of = bound.leaves()[i].value();
    Tensor d(shape_of.shape());
    std::copy_n(direction.begin() + static_cast<std::ptrdiff_t>(off), d.numel(), d.data().begin());
    off += d.numel();
    const Var g2 = reshape(grads[i], shape_of.rows(), shape_of.cols());
    directional = add(directional, dot(g2, Var::constant(d.reshaped({shape_of.rows(), shape_of.cols()}))));
  }
  const auto hv = grad(directional, bound.leaves(), false);
  return flatten_grads(params, bound.names(), hv);
}

}  // namespace seqret::diff
