// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/boxes.hpp"

#include <algorithm>

#include "fgahoi/tensor.hpp"

namespace fga {

namespace {

double intersection(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  return iw * ih;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
  if (!(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0)) {
    throw Error(ErrorKind::kContract, "giou: boxes need positive width and height");
  }
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  const double enclosing = (std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0())) *
                           (std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0()));
  return inter / uni - (enclosing - uni) / enclosing;
}

}  // namespace fga
