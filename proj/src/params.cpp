// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/params.hpp"

#include <cmath>

namespace fga {

void ParamStore::add(const std::string& name, Tensor value) {
  if (!tensors_.emplace(name, std::move(value)).second) {
    throw Error(ErrorKind::kContract, "duplicate parameter " + name);
  }
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorKind::kContract, "unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorKind::kContract, "unknown parameter " + name);
  return it->second;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

Var Bound::operator()(const std::string& name) {
  auto it = vars_.find(name);
  if (it != vars_.end()) return it->second;
  Var v = tape_.leaf(store_.at(name));
  vars_.emplace(name, v);
  return v;
}

std::map<std::string, Tensor> Bound::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, value] : store_.tensors()) {
    auto it = vars_.find(name);
    out.emplace(name, it == vars_.end() ? Tensor(value.shape()) : tape_.grad(it->second));
  }
  return out;
}

namespace init {

Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor constant(Shape shape, double value) { return Tensor(std::move(shape), value); }

Tensor uniform(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform({fan_in, fan_out}, bound, rng);
}

}  // namespace init

}  // namespace fga
