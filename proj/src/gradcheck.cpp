// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fgahoi/rng.hpp"

namespace fga {

double relative_error(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
  return std::fabs(a - b) / denom;
}

namespace {

double evaluate(const ScalarBuilder& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  return f(tape, leaves).value().item();
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarBuilder& f, const std::vector<Tensor>& params,
                                  const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& p : params) leaves.push_back(tape.leaf(p));
    Var loss = f(tape, leaves);
    tape.backward(loss);
    for (const auto& l : leaves) analytic.push_back(tape.grad(l));
  }

  GradCheckResult result;
  Rng rng(options.seed);
  std::vector<Tensor> work = params;
  bool corrupted = false;
  for (std::size_t t = 0; t < params.size(); ++t) {
    std::vector<std::size_t> coords(params[t].numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
      // Partial Fisher-Yates; the first k entries are the sample.
      for (std::size_t i = 0; i < options.max_coords_per_tensor; ++i) {
        std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
      }
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      if (options.skip && options.skip(t, i)) {
        ++result.skipped;
        continue;
      }
      const double x = params[t][i];
      auto central = [&](double eps) {
        work[t][i] = x + eps;
        const double up = evaluate(f, work);
        work[t][i] = x - eps;
        const double down = evaluate(f, work);
        work[t][i] = x;
        return (up - down) / (2.0 * eps);
      };
      double numeric = central(options.eps);
      double a = analytic[t][i];
      if (options.corrupt && !corrupted) {
        a += 1e-2 * std::max(1.0, std::fabs(a));
        corrupted = true;
      }
      double err = relative_error(a, numeric);
      if (err >= options.retry_threshold) {
        bool improved = false;
        for (double step : options.retry_eps) {
          const double again = central(step);
          if (relative_error(a, again) < err) {
            numeric = again;
            err = relative_error(a, again);
            improved = true;
          }
        }
        if (improved) ++result.retried;
      }
      ++result.checked;
      if (err > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        if (err >= result.max_rel_error) {
          std::ostringstream os;
          os.precision(10);
          if (t < options.names.size()) {
            os << options.names[t];
          } else {
            os << "tensor " << t;
          }
          os << " [" << i << "]: analytic " << a << " vs numeric " << numeric;
          result.worst = os.str();
        }
      }
    }
  }
  return result;
}

GradCheckResult check_params(const std::function<Var(Bound&)>& f, const ParamStore& store,
                             const GradCheckOptions& options) {
  std::vector<std::string> names;
  std::vector<Tensor> params;
  for (const auto& [name, value] : store.tensors()) {
    names.push_back(name);
    params.push_back(value);
  }
  GradCheckOptions opts = options;
  opts.names = names;
  auto builder = [&](Tape& tape, std::span<const Var> leaves) {
    Bound bound(tape, store);
    for (std::size_t i = 0; i < leaves.size(); ++i) bound.bind(names[i], leaves[i]);
    return f(bound);
  };
  return finite_diff_check(builder, params, opts);
}

}  // namespace fga
