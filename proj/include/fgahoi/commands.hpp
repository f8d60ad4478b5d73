// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Command implementations behind the C API and the command-line tool. Each
// writes its outputs under a directory and returns a short summary.

#pragma once

#include <string>
#include <vector>

#include "fgahoi/config.hpp"
#include "fgahoi/dataset.hpp"
#include "fgahoi/eval.hpp"
#include "fgahoi/gradient_suite.hpp"
#include "fgahoi/model.hpp"
#include "fgahoi/train.hpp"

namespace fga {

struct CommandResult {
  std::string summary;             // printed by the command-line tool
  std::vector<std::string> files;  // written, in order
};

/// Runs the gradient suite; writes gradcheck.json under out_dir when set.
CommandResult cmd_gradcheck(const RunConfig& cfg, bool corrupt, bool json, const std::string& out_dir,
                            bool* passed);

/// Synthetic corpus from the config's synth settings and seed.
CommandResult cmd_synth(const RunConfig& cfg, const std::string& out_dir);

struct TrainSummary {
  double initial_loss = 0.0;  // full model, before training
  double final_loss = 0.0;    // full model, after training
  std::size_t epochs = 0;
};

/// Trains a fresh model on data_dir/train.json and writes the log, the
/// stage checkpoints and train_summary.json under out_dir.
CommandResult cmd_train(const RunConfig& cfg, const std::string& data_dir, Strategy strategy,
                        const std::string& out_dir, std::size_t threads, TrainSummary* summary = nullptr);

/// Evaluates a checkpoint on an annotation file. Rare classes are counted
/// from rare_from (a training annotation file) when given.
CommandResult cmd_eval(const std::string& checkpoint, const std::string& annotations, Setting setting,
                       const std::string& rare_from, const std::string& out_dir, std::size_t threads,
                       EvalReport* report = nullptr);

/// Histogram of a difficulty metric; edges empty means the defaults.
CommandResult cmd_metrics(const std::string& annotations, Metric metric, const std::string& edges,
                          const std::string& out_dir, bool per_instance);

CommandResult cmd_split(const std::string& annotations, const SplitSelector& selector, const std::string& out_dir);

/// Fine-grained anchors and weights of every decoder layer for one image.
CommandResult cmd_dump_anchors(const std::string& checkpoint, const std::string& image, const std::string& out_path);

/// One record per (layer, query).
std::string anchors_to_json(const DecoderOutput& out);

}  // namespace fga
