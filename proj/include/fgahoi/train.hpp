// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Data loading, momentum SGD with stage-wise or end-to-end schedules, and
// batched inference.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fgahoi/dataset.hpp"
#include "fgahoi/model.hpp"

namespace fga {

struct Sample {
  std::int64_t id = 0;
  Tensor image;  // [S, S, 3]
  std::vector<HoiAnnotation> gts;
};

/// Reads an annotation file and every image it names (paths relative to the
/// file). Images must be model-sized and class counts must match the model.
std::vector<Sample> load_samples(const std::string& annotation_path, const ModelConfig& cfg);

std::vector<ImageTruth> truths_of(const std::vector<Sample>& samples);

/// FGA_THREADS, or 1 when unset.
std::size_t threads_from_env();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers write
/// results into per-index slots so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

enum class Strategy { kStagewise, kEndToEnd };

Strategy parse_strategy(const std::string& name);
const char* strategy_name(Strategy s);

struct LossSummary {
  double total = 0.0, object = 0.0, verb = 0.0, bbox = 0.0, giou = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based over the whole run
  std::size_t stage = 0;  // 1-based
  MergeMode mode = MergeMode::kFull;
  double lr = 0.0;
  LossSummary loss;  // mean over the epoch's images, before each update
};

struct TrainOptions {
  Strategy strategy = Strategy::kStagewise;
  std::string out_dir;  // empty: no files
  std::size_t threads = 1;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::vector<std::string> checkpoints;
};

/// Stage-wise: stage_epochs[0..2] with base, +HSAM, +TAM merging, each stage
/// restarting the step size. End-to-end: the full model for the same total.
/// Writes train_log.csv and one checkpoint per stage when out_dir is set.
TrainResult train(Model& model, const std::vector<Sample>& data, const TrainOptions& options);

/// Mean loss terms of the model's current mode over `data`.
LossSummary evaluate_loss(const Model& model, const std::vector<Sample>& data, std::size_t threads);

std::vector<ImagePredictions> predict(const Model& model, const std::vector<Sample>& data, std::size_t threads);

std::string log_csv_header();
std::string log_csv_row(const EpochLog& e);

}  // namespace fga
