// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Post-processing into scored triplets and role mAP.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgahoi/boxes.hpp"
#include "fgahoi/tensor.hpp"

namespace fga {

struct ScoredTriplet {
  Box human;
  Box object;
  std::size_t object_class = 0;
  std::size_t verb_class = 0;
  double score = 0.0;
  std::size_t query = 0;
};

/// Per-query network outputs after the logistic.
struct QueryScores {
  Tensor human_boxes;   // [N_q, 4]
  Tensor object_boxes;  // [N_q, 4]
  Tensor object_probs;  // [N_q, num_o]
  Tensor verb_probs;    // [N_q, num_v]
};

/// One triplet per (query, verb) with the query's most likely object; keeps
/// the top_k by object confidence, then drops any triplet whose (object,
/// verb) class and both boxes (min IoU > delta) repeat a higher-scored one.
/// Result is sorted by score, descending.
std::vector<ScoredTriplet> compose_triplets(const QueryScores& q, std::size_t top_k, double delta);

/// min(IoU_h, IoU_o) > 0.5; classes are the caller's concern.
bool pair_is_tp(const ScoredTriplet& pred, const HoiAnnotation& gt);

/// AP of a ranked TP/FP list. All-point area under the interpolated PR curve,
/// or the 11-point mean.
double ap_from_ranked(const std::vector<bool>& tp, std::size_t num_gt, bool eleven_point = false);

enum class Setting { kDefault, kKnownObject };

Setting parse_setting(const std::string& name);
const char* setting_name(Setting s);

struct ImagePredictions {
  std::int64_t image_id = 0;
  std::vector<ScoredTriplet> triplets;
};

struct ImageTruth {
  std::int64_t image_id = 0;
  std::vector<HoiAnnotation> pairs;
};

struct ClassResult {
  std::size_t object = 0;
  std::size_t verb = 0;
  double ap = 0.0;
  std::size_t num_gt = 0;
  std::size_t num_pred = 0;
  std::size_t num_images = 0;  // images the class was scored over
  bool rare = false;
  bool evaluated = false;  // false when neither truths nor predictions exist
};

struct EvalReport {
  Setting setting = Setting::kDefault;
  std::vector<ClassResult> classes;  // object-major
  double full = 0.0, rare = 0.0, non_rare = 0.0;
  std::size_t num_full = 0, num_rare = 0, num_non_rare = 0;

  std::string to_json() const;
  std::string to_text() const;
};

struct EvalOptions {
  std::size_t num_objects = 0;
  std::size_t num_verbs = 0;
  std::vector<bool> rare;  // per class, object-major; empty means none rare
  Setting setting = Setting::kDefault;
  bool eleven_point = false;
};

/// (object, verb) classes with fewer than `threshold` instances in `train`.
std::vector<bool> rare_classes(const std::vector<ImageTruth>& train, std::size_t num_objects, std::size_t num_verbs,
                               std::size_t threshold);

/// Greedy matching by descending score (ties: image id, then query), each
/// truth used once: a prediction takes the unused truth with the largest
/// min IoU among those passing the pair rule.
EvalReport evaluate_role_map(const std::vector<ImagePredictions>& preds, const std::vector<ImageTruth>& truths,
                             const EvalOptions& options);

std::string predictions_to_json(const std::vector<ImagePredictions>& preds);
std::vector<ImagePredictions> parse_predictions(const std::string& json_text);

}  // namespace fga
