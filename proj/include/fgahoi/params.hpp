// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>

#include "fgahoi/autograd.hpp"
#include "fgahoi/rng.hpp"

namespace fga {

/// Named learnable tensors. Iteration order is lexicographic by name, which
/// fixes the order of every reduction over parameters.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::size_t total_size() const;

  std::map<std::string, Tensor>& tensors() { return tensors_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Parameters bound as leaves of one tape; a leaf is created on first use.
class Bound {
 public:
  Bound(Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

  Var operator()(const std::string& name);
  /// Uses an existing leaf for `name` instead of creating one.
  void bind(const std::string& name, Var leaf) { vars_.insert_or_assign(name, leaf); }
  Tape& tape() { return tape_; }

  /// Gradients of every parameter after tape().backward(); unused
  /// parameters get zeros.
  std::map<std::string, Tensor> gradients() const;

 private:
  Tape& tape_;
  const ParamStore& store_;
  std::map<std::string, Var> vars_;
};

namespace init {

Tensor zeros(Shape shape);
Tensor constant(Shape shape, double value);
Tensor uniform(Shape shape, double bound, Rng& rng);
/// Glorot-uniform for a [fan_in, fan_out] matrix.
Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace init

}  // namespace fga
