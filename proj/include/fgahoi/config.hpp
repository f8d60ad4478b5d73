// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fga {

struct ModelConfig {
  std::size_t image_size = 64;
  /// Side of the first patch embedding; level strides are patch, 2*patch, 4*patch.
  std::size_t patch_size = 8;
  std::size_t backbone_dim = 16;  // C_s
  std::size_t hidden_dim = 64;    // C_d == N_hd
  std::size_t num_heads = 4;
  std::size_t num_levels = 3;
  std::size_t enc_points = 4;
  std::size_t dec_points = 4;  // N_A
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t ffn_dim = 128;
  std::size_t num_queries = 16;
  std::vector<std::size_t> sampling_sizes{1, 3, 5};
  std::size_t num_objects = 3;
  std::size_t num_verbs = 3;

  void validate() const;
};

struct LossWeights {
  double object = 1.0;
  double verb = 1.0;
  double bbox = 2.5;
  double giou = 1.0;
};

struct LossConfig {
  LossWeights weights;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

struct OptimConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
  std::size_t batch_size = 4;
  /// Epochs of base / +HSAM / +TAM stages.
  std::vector<std::size_t> stage_epochs{30, 8, 8};
  /// Fraction of a stage after which the step size drops by lr_drop_factor.
  double first_stage_drop = 0.8;
  double later_stage_drop = 0.375;
  double lr_drop_factor = 0.1;
};

struct SynthConfig {
  std::size_t train_scenes = 200;
  std::size_t test_scenes = 50;
  std::size_t pairs_per_scene = 1;
  double ar_min = 0.0;
  double ar_max = 1.0;
  double lr_min = 0.0;
  double lr_max = 2.0;
  std::size_t max_retries = 200000;
};

struct EvalConfig {
  std::size_t top_k = 100;
  double nms_delta = 0.5;
  std::size_t rare_threshold = 10;
  bool eleven_point = false;
};

/// Everything a command needs. Serialized as key=value lines.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  SynthConfig synth;
  EvalConfig eval;
  std::optional<std::uint64_t> seed;

  /// Desk-scale defaults used by the CLI.
  static RunConfig toy();
  /// Smallest configuration used by gradient checks; seeded with 1.
  static RunConfig tiny();
  /// Full-size hyperparameters, for documentation and shape checks.
  static RunConfig large();
  static RunConfig preset(const std::string& name);

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  std::string to_text() const;
  static RunConfig parse_text(const std::string& text, RunConfig base = toy());
  static RunConfig load(const std::string& path, RunConfig base = toy());

  void validate() const;
  std::uint64_t require_seed() const;
};

}  // namespace fga
