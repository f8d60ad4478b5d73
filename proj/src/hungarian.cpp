// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Shortest augmenting path assignment with row/column potentials, O(G^2 N).

#include <cmath>
#include <limits>

#include "fgahoi/head_loss.hpp"

namespace fga {

Matching hungarian_match(const Tensor& costs) {
  if (costs.rank() != 2) throw Error(ErrorKind::kDimension, "cost matrix must be 2-D, got " + shape_str(costs.shape()));
  const std::size_t m = costs.dim(0), n = costs.dim(1);  // predictions, ground truths
  if (n > m) {
    throw Error(ErrorKind::kCapacity, std::to_string(n) + " ground truths exceed " + std::to_string(m) + " predictions");
  }
  if (!all_finite(costs)) throw Error(ErrorKind::kContract, "cost matrix has non-finite entries");
  Matching out;
  if (n == 0) return out;

  // Rows of the working problem are ground truths (1..n), columns are
  // predictions (1..m); index 0 is the virtual source.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  auto a = [&](std::size_t i, std::size_t j) { return costs(j - 1, i - 1); };
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = owner[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> pred_of(n);
  for (std::size_t j = 1; j <= m; ++j) {
    if (owner[j]) pred_of[owner[j] - 1] = j - 1;
  }
  for (std::size_t g = 0; g < n; ++g) {
    out.pairs.emplace_back(pred_of[g], g);
    out.cost += costs(pred_of[g], g);
  }
  return out;
}

}  // namespace fga
