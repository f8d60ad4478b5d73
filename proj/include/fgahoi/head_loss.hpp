// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Detection head, set matching and the training objective.

#pragma once

#include <utility>
#include <vector>

#include "fgahoi/autograd.hpp"
#include "fgahoi/boxes.hpp"
#include "fgahoi/config.hpp"
#include "fgahoi/params.hpp"

namespace fga {

struct HoiPrediction {
  Var human_boxes;    // [N_q, 4] (cx, cy, w, h)
  Var object_boxes;   // [N_q, 4]
  Var object_logits;  // [N_q, num_o]
  Var verb_logits;    // [N_q, num_v]
};

void add_head_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);

/// Two 3-layer box heads and two linear classifiers. Box centres are
/// logistic(raw + logit(anchor)), sizes logistic(raw).
HoiPrediction detection_head(Bound& p, Var hoi, Var anchors);

/// Row-wise GIoU of box tensors [N, 4], as [N, 1].
Var giou_rows(Var a, Var b);

/// Prediction-by-ground-truth cost matrix [N_q, G].
Tensor match_cost(const HoiPrediction& pred, const std::vector<HoiAnnotation>& gts, const LossWeights& weights);

struct Matching {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, ground truth), sorted by truth
  double cost = 0.0;
};

/// Minimum-cost assignment of every column (ground truth) of a [N, G] cost
/// matrix to a distinct row, G <= N.
Matching hungarian_match(const Tensor& costs);

/// Mean over elements of alpha_t (1 - p_t)^gamma * -log p_t. A negative alpha
/// disables the class weighting.
Var sigmoid_focal_loss(Var logits, const Tensor& targets, double alpha, double gamma);

/// Focal loss with gamma and no class weighting, for multi-label verbs.
Var modified_focal_loss(Var logits, const Tensor& targets, double gamma = 2.0);

struct LossTerms {
  Var total;
  double object = 0.0;
  double verb = 0.0;
  double bbox = 0.0;  // human + object
  double giou = 0.0;  // human + object
};

/// Every term is summed over its elements and divided by the number of
/// ground truths (at least one). Box terms cover matched pairs only; unmatched
/// queries get all-zero class targets.
LossTerms composite_loss(const HoiPrediction& pred, const std::vector<HoiAnnotation>& gts, const Matching& matching,
                         const LossConfig& cfg);

/// Box rows [N, 4] as plain values.
std::vector<Box> boxes_of(const Tensor& rows);

}  // namespace fga
