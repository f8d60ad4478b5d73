// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace fga {

/// Normalized centre-size box.
struct Box {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  double x0() const { return cx - 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double x1() const { return cx + 0.5 * w; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static Box from_corners(double x0, double y0, double x1, double y1) {
    return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }
  bool operator==(const Box&) const = default;
};

/// One ground-truth interaction with normalized boxes.
struct HoiAnnotation {
  Box human;
  Box object;
  std::size_t object_class = 0;
  std::vector<std::uint8_t> verbs;  // multi-hot, length num_verbs
};

double iou(const Box& a, const Box& b);
/// IoU minus the fraction of the enclosing box not covered by the union.
/// Zero-area boxes are a contract error.
double giou(const Box& a, const Box& b);

}  // namespace fga
