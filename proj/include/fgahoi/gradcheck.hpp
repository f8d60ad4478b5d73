// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fgahoi/autograd.hpp"
#include "fgahoi/params.hpp"

namespace fga {

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

struct GradCheckOptions {
  double eps = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded subset per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// A coordinate whose error reaches retry_threshold is differenced again
  /// with each of these steps and keeps the smallest error. A wrong gradient
  /// disagrees at every step; a kink closer than `eps` or rounding noise
  /// affects only some of them.
  std::vector<double> retry_eps;
  double retry_threshold = 1e-6;
  /// Negative control: perturbs one analytic gradient before comparing.
  bool corrupt = false;
  /// Returns true for coordinates that sit too close to a kink to difference.
  std::function<bool(std::size_t tensor, std::size_t index)> skip;
  /// Optional tensor names used in GradCheckResult::worst.
  std::vector<std::string> names;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::size_t retried = 0;  // coordinates that kept a retry step
  std::string worst;  // "tensor[i]: analytic vs numeric"
};

/// Builds a scalar from leaves bound to `params` on a fresh tape.
using ScalarBuilder = std::function<Var(Tape&, std::span<const Var>)>;

/// Central differences (f(x+e) - f(x-e)) / 2e against backward(), per
/// coordinate.
GradCheckResult finite_diff_check(const ScalarBuilder& f, const std::vector<Tensor>& params,
                                  const GradCheckOptions& options = {});

/// finite_diff_check over every tensor of a parameter store, in name order.
GradCheckResult check_params(const std::function<Var(Bound&)>& f, const ParamStore& store,
                             const GradCheckOptions& options = {});

}  // namespace fga
