// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// The whole detector: backbone, encoder, decoder and head over one image.

#pragma once

#include <string>
#include <vector>

#include "fgahoi/decoder.hpp"
#include "fgahoi/eval.hpp"
#include "fgahoi/head_loss.hpp"

namespace fga {

struct Model {
  RunConfig config;
  ParamStore params;
  MergeMode mode = MergeMode::kFull;
};

/// Fresh parameters drawn from the config seed.
Model create_model(const RunConfig& config, MergeMode mode = MergeMode::kFull);

void add_model_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);

struct ForwardOutput {
  HoiPrediction prediction;
  DecoderOutput decoder;
};

/// `image` is [S, S, 3] with S = cfg.image_size.
ForwardOutput forward(Bound& p, const Tensor& image, const ModelConfig& cfg, MergeMode mode, bool keep_traces = false);

/// Matches the prediction to `gts` and returns the composite loss.
LossTerms image_loss(Bound& p, const Tensor& image, const std::vector<HoiAnnotation>& gts, const RunConfig& cfg,
                     MergeMode mode);

QueryScores query_scores(const HoiPrediction& pred);

/// Scored triplets for one image with the model's current mode.
std::vector<ScoredTriplet> infer(const Model& model, const Tensor& image);

/// Binary format: "FGAC" magic, version, config text, mode, then each
/// parameter as name, shape and raw little-endian doubles.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

MergeMode parse_merge_mode(const std::string& name);

}  // namespace fga
