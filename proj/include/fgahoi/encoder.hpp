// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Toy hierarchical backbone and deformable transformer encoder producing the
// flattened multi-scale memory the decoder reads from.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "fgahoi/autograd.hpp"
#include "fgahoi/config.hpp"
#include "fgahoi/params.hpp"

namespace fga {

using ValidRatios = std::vector<std::array<double, 2>>;  // (r_h, r_w) per level

struct FeaturePyramid {
  std::vector<Var> levels;  // [H_i, W_i, C_i]
  LevelLayout layout;
  ValidRatios valid_ratios;
};

struct EncodedMemory {
  Var memory;  // [N_s, C_d]
  Var pos;     // [N_s, C_d]
  LevelLayout layout;
  ValidRatios valid_ratios;
};

void add_encoder_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);

/// Patch embedding followed by two 2x2 merges: strides patch, 2*patch, 4*patch
/// with widths C_s, 2*C_s, 4*C_s.
FeaturePyramid build_pyramid(Bound& p, const Tensor& image, const ModelConfig& cfg);

/// 2-D sine/cosine table over normalized pixel centres, [N_s, dim]. Half the
/// channels encode y, half x, as (sin, cos) pairs of geometric frequencies.
Tensor sine_table(const LevelLayout& layout, const ValidRatios& ratios, std::size_t dim);

/// Sine table plus the learnable per-level embedding.
Var positional_encoding(Bound& p, const LevelLayout& layout, const ValidRatios& ratios, std::size_t dim);

/// 1x1 projection of every level to C_d, flattened and stacked level by level.
Var project_and_flatten(Bound& p, const FeaturePyramid& pyramid);

/// Normalized pixel centre of every memory row, scaled by the valid ratios.
Tensor reference_points(const LevelLayout& layout, const ValidRatios& ratios);

struct DeformableTrace {
  Tensor locations;  // [N, heads * levels * points * 2]
  Tensor weights;    // [N, heads, levels * points]
};

/// Deformable self-attention output (before the residual): every row samples
/// `points` locations per head and level around its own reference point.
Var deformable_self_attention(Bound& p, const std::string& prefix, Var memory, Var pos, const LevelLayout& layout,
                              const ValidRatios& ratios, const ModelConfig& cfg, DeformableTrace* trace = nullptr);

/// Self-attention + residual + norm, then feed-forward + residual + norm.
Var encoder_layer(Bound& p, const std::string& prefix, Var memory, Var pos, const LevelLayout& layout,
                  const ValidRatios& ratios, const ModelConfig& cfg);

EncodedMemory encode(Bound& p, const FeaturePyramid& pyramid, Var pos, const ModelConfig& cfg);

/// Row-major [H, W, 3] image -> [(H/patch)*(W/patch), patch*patch*3].
Tensor patchify(const Tensor& image, std::size_t patch);

}  // namespace fga
