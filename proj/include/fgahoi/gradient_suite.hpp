// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Central-difference checks of every differentiable op and of each model
// stage on a small configuration.

#pragma once

#include <string>
#include <vector>

#include "fgahoi/config.hpp"
#include "fgahoi/gradcheck.hpp"

namespace fga {

/// Largest model (in scalar parameters) the suite will difference.
inline constexpr std::size_t kGradientSuiteParamCap = 50000;
/// Pass bound for every entry.
inline constexpr double kGradientTolerance = 1e-4;
/// Target for single ops.
inline constexpr double kOpGradientTarget = 1e-6;

struct SuiteEntry {
  std::string name;
  bool is_op = false;  // single op rather than a composed module
  GradCheckResult result;
};

struct SuiteReport {
  std::vector<SuiteEntry> entries;
  std::size_t model_params = 0;

  bool passed() const;
  double max_rel_error(bool ops_only = false) const;
  std::string to_json() const;
  std::string to_text() const;
};

/// Moves a fresh store off its near-degenerate start (zero offsets, zero box
/// layers, prior-biased classifiers) so every coordinate carries a gradient
/// well above the differencing noise.
void spread_parameters(ParamStore& store, Rng& rng);

/// Runs every op check, then the encoder, decoder, head and whole model of
/// `cfg` in each merge mode. `corrupt` perturbs one analytic gradient per
/// entry. Throws kCapacity when the model exceeds kGradientSuiteParamCap.
SuiteReport run_gradient_suite(const RunConfig& cfg, bool corrupt = false);

}  // namespace fga
