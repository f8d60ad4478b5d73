// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Fine-grained anchor decoder: multi-scale sampling around the initial
// anchors, spatial and scale merging, switch-gated fusion, and deformable
// aggregation of the encoded memory into HOI embeddings.

#pragma once

#include <string>
#include <vector>

#include "fgahoi/autograd.hpp"
#include "fgahoi/config.hpp"
#include "fgahoi/encoder.hpp"
#include "fgahoi/params.hpp"

namespace fga {

/// Which merging blocks are active. kBase averages the sampled tokens and
/// adds them to the content; kHsam swaps in the attention merge; kFull adds
/// the switch-gated fusion on top.
enum class MergeMode { kBase, kHsam, kFull };

const char* merge_mode_name(MergeMode mode);

void add_decoder_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);

struct QuerySet {
  Var content;   // C [N_q, C_d]
  Var position;  // P [N_q, C_d]
  Var anchors;   // A [N_q, 2]
};

/// A = logistic(P W + b).
Var init_anchors(Var position, Var weight, Var bias);
QuerySet init_queries(Bound& p);

/// Per level, a size x size grid of points spaced one cell apart in that
/// level's pixels and centred on each anchor, read bilinearly. Level i is
/// [N_q * size_i^2, C_d], grouped by query, grid rows y-major.
std::vector<Var> multi_scale_sample(const EncodedMemory& memory, Var anchors, const std::vector<std::size_t>& sizes);

/// Normalized offsets of the sampling grid for one level, [size^2, 2].
Tensor sampling_grid(std::size_t size, std::size_t height, std::size_t width);

struct AttentionTrace {
  Tensor weights;  // [groups, heads, Lq, Lk]
};

/// C_u = C + MHA((C+P)Wq, (C+P)Wk, C Wv) Wo.
Var update_content(Bound& p, const std::string& prefix, Var content, Var position, std::size_t heads,
                   AttentionTrace* trace = nullptr);

struct HsamTrace {
  std::vector<Tensor> level_weights;  // per level [N_q, heads, 1, size^2]
  Tensor merged;                      // X_m [N_q, N_L, C_d]
  Tensor scale_weights;               // [N_q, heads, 1, N_L]
};

/// Per-level cross-attention of each query over its own tokens, then over
/// the N_L merged level slots. Returns X_u [N_q, C_d].
Var hsam_merge(Bound& p, const std::string& prefix, const std::vector<Var>& sampled, Var content_u,
               std::size_t heads, HsamTrace* trace = nullptr);

/// Mean over each query's tokens, then over levels.
Var average_merge(const std::vector<Var>& sampled, std::size_t num_queries);

/// Interleaves rows of a and b: [a_0, b_0, a_1, b_1, ...].
Var stack_slots(Var a, Var b);

/// U = max_i(S_i0 * X_u + S_i1) + C_u with switch[N_q, 4] laid out
/// (S_00, S_01, S_10, S_11) and shared across channels.
Var tam_combine(Var content_u, Var merged_u, Var switches);

struct TamTrace {
  Tensor stacked;   // X [N_q, 2, C_d]
  Tensor weights;   // [N_q, heads, 1, 2]
  Tensor switches;  // [N_q, 2, 2]
};

Var tam_merge(Bound& p, const std::string& prefix, Var content_u, Var merged_u, std::size_t heads,
              TamTrace* trace = nullptr);

struct FineGrainedAnchors {
  Var locations;  // [N_q, heads * levels * points * 2]
  Var weights;    // [N_q, heads * levels * points]
};

/// Offsets and weights from the merged content. Offsets are in level pixels
/// and added to the initial anchor; weights are a softmax over the joint
/// (level, point) axis of each head.
FineGrainedAnchors generate_fine_grained(Bound& p, const std::string& prefix, Var merged, Var anchors,
                                         const LevelLayout& layout, std::size_t heads, std::size_t points);

/// P_q = sum_n W_n [sum_{l,k} w * W'_n x^l(anchor)], before the residual.
Var deformable_aggregate(Bound& p, const std::string& prefix, const EncodedMemory& memory,
                         const FineGrainedAnchors& fga, std::size_t heads, std::size_t points);

struct LayerTrace {
  AttentionTrace self_attention;
  HsamTrace hsam;
  TamTrace tam;
  Tensor content_u;  // [N_q, C_d]
  Tensor merged_u;   // X_u [N_q, C_d]
  Tensor fused;      // U [N_q, C_d] before normalization
  Tensor anchors;    // [N_q, heads, levels, points, 2]
  Tensor weights;    // [N_q, heads, levels, points]
  Tensor output;     // H [N_q, C_d]
};

struct DecoderOutput {
  Var hoi;      // H of the last layer [N_q, C_d]
  Var anchors;  // A [N_q, 2]
  std::vector<LayerTrace> layers;
};

Var decoder_layer(Bound& p, const std::string& prefix, const EncodedMemory& memory, Var content, Var position,
                  Var anchors, const ModelConfig& cfg, MergeMode mode, LayerTrace* trace = nullptr);

DecoderOutput decode(Bound& p, const EncodedMemory& memory, const QuerySet& queries, const ModelConfig& cfg,
                     MergeMode mode, bool keep_traces = false);

/// Prepends a batch axis to each per-image trace tensor.
struct BatchedTrace {
  Tensor merged;    // X_m [B, N_q, N_L, C_d]
  Tensor stacked;   // X [B, N_q, 2, C_d]
  Tensor switches;  // [B, N_q, 2, 2]
  Tensor anchors;   // [B, N_q, heads, levels, points, 2]
  Tensor weights;   // [B, N_q, heads, levels, points]
};

BatchedTrace batch_layer_traces(const std::vector<LayerTrace>& per_image);

}  // namespace fga
