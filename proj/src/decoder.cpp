// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/decoder.hpp"

#include "layers.hpp"

namespace fga {

using layers::add_attention;
using layers::add_linear;
using layers::add_norm;
using layers::attention;
using layers::lin;
using layers::norm;

namespace {

std::string layer_prefix(std::size_t i) { return "dec.layer" + std::to_string(i) + "."; }

// Rows of `a` repeated `times` each: [a_0 x times, a_1 x times, ...].
Var repeat_rows(Var a, std::size_t times) {
  std::vector<std::size_t> idx;
  idx.reserve(a.value().rows() * times);
  for (std::size_t r = 0; r < a.value().rows(); ++r) idx.insert(idx.end(), times, r);
  return gather_rows(a, std::move(idx));
}

// Row-block interleave of level outputs: row q * L + l holds level l of query q.
Var interleave(const std::vector<Var>& parts) {
  const std::size_t n = parts[0].value().rows(), k = parts.size();
  std::vector<std::size_t> idx(n * k);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t l = 0; l < k; ++l) idx[q * k + l] = l * n + q;
  }
  return gather_rows(concat_rows(parts), std::move(idx));
}

}  // namespace

const char* merge_mode_name(MergeMode mode) {
  switch (mode) {
    case MergeMode::kBase:
      return "base";
    case MergeMode::kHsam:
      return "hsam";
    case MergeMode::kFull:
      return "full";
  }
  return "?";
}

void add_decoder_params(ParamStore& s, const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.hidden_dim, levels = cfg.num_levels;
  const std::size_t samples = cfg.num_heads * levels * cfg.dec_points;
  s.add("query.content", init::uniform({cfg.num_queries, d}, 1.0, rng));
  s.add("query.pos", init::uniform({cfg.num_queries, d}, 1.0, rng));
  s.add("anchor.w", init::xavier(d, 2, rng));
  s.add("anchor.b", init::zeros({2}));
  for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
    const std::string pre = layer_prefix(i);
    add_attention(s, pre + "sa", d, rng);
    for (std::size_t l = 0; l < levels; ++l) add_attention(s, pre + "hsam.level" + std::to_string(l), d, rng);
    add_attention(s, pre + "hsam.scale", d, rng);
    add_attention(s, pre + "tam", d, rng);
    add_linear(s, pre + "tam.mlp1", d, d, rng);
    s.add(pre + "tam.mlp2.w", init::uniform({d, 4}, 0.01, rng));
    s.add(pre + "tam.mlp2.b", Tensor({4}, {2.5, -2.5, -2.5, -2.5}));
    add_norm(s, pre + "tam_norm", d);
    s.add(pre + "offsets.w", init::zeros({d, samples * 2}));
    s.add(pre + "offsets.b", init::zeros({samples * 2}));
    s.add(pre + "attn.w", init::uniform({d, samples}, 0.01, rng));
    s.add(pre + "attn.b", init::zeros({samples}));
    s.add(pre + "value", init::xavier(d, d, rng));
    s.add(pre + "output", init::xavier(d, d, rng));
    add_norm(s, pre + "norm1", d);
    add_linear(s, pre + "ffn1", d, cfg.ffn_dim, rng);
    add_linear(s, pre + "ffn2", cfg.ffn_dim, d, rng);
    add_norm(s, pre + "norm2", d);
  }
}

Var init_anchors(Var position, Var weight, Var bias) { return logistic(linear(position, weight, bias)); }

QuerySet init_queries(Bound& p) {
  Var pos = p("query.pos");
  return {p("query.content"), pos, init_anchors(pos, p("anchor.w"), p("anchor.b"))};
}

Tensor sampling_grid(std::size_t size, std::size_t height, std::size_t width) {
  if (size % 2 == 0) throw Error(ErrorKind::kConfig, "sampling size " + std::to_string(size) + " is even");
  const long r = static_cast<long>(size / 2);
  Tensor grid({size * size, 2});
  std::size_t j = 0;
  for (long dy = -r; dy <= r; ++dy) {
    for (long dx = -r; dx <= r; ++dx, ++j) {
      grid(j, 0) = static_cast<double>(dx) / static_cast<double>(width);
      grid(j, 1) = static_cast<double>(dy) / static_cast<double>(height);
    }
  }
  return grid;
}

std::vector<Var> multi_scale_sample(const EncodedMemory& memory, Var anchors, const std::vector<std::size_t>& sizes) {
  const LevelLayout& layout = memory.layout;
  if (sizes.size() != layout.levels()) {
    throw Error(ErrorKind::kConfig, "need one sampling size per level: got " + std::to_string(sizes.size()) +
                                        " for " + std::to_string(layout.levels()) + " levels");
  }
  const std::size_t nq = anchors.value().rows(), d = memory.memory.value().cols();
  std::vector<Var> out;
  for (std::size_t l = 0; l < layout.levels(); ++l) {
    const std::size_t h = layout.heights[l], w = layout.widths[l], s2 = sizes[l] * sizes[l];
    const Tensor grid = sampling_grid(sizes[l], h, w);
    Tensor offsets({nq * s2, 2});
    for (std::size_t q = 0; q < nq; ++q) {
      std::copy(grid.storage().begin(), grid.storage().end(), offsets.storage().begin() + q * s2 * 2);
    }
    Var map = reshape(slice_rows(memory.memory, layout.offsets[l], h * w), {h, w, d});
    Var points = add_const(repeat_rows(anchors, s2), offsets);
    out.push_back(bilinear_sample(map, points));
  }
  return out;
}

Var update_content(Bound& p, const std::string& prefix, Var content, Var position, std::size_t heads,
                   AttentionTrace* trace) {
  Var qk = add(content, position);
  AttentionOutput a = multi_head_attention(qk, qk, content, attention(p, prefix), heads);
  if (trace) trace->weights = std::move(a.weights);
  return add(content, a.out);
}

Var hsam_merge(Bound& p, const std::string& prefix, const std::vector<Var>& sampled, Var content_u,
               std::size_t heads, HsamTrace* trace) {
  const std::size_t nq = content_u.value().rows(), d = content_u.value().cols();
  std::vector<Var> merged;
  for (std::size_t l = 0; l < sampled.size(); ++l) {
    AttentionOutput a = multi_head_attention(content_u, sampled[l], sampled[l],
                                             attention(p, prefix + "level" + std::to_string(l)), heads, nq);
    if (trace) trace->level_weights.push_back(std::move(a.weights));
    merged.push_back(a.out);
  }
  Var xm = interleave(merged);
  AttentionOutput a = multi_head_attention(content_u, xm, xm, attention(p, prefix + "scale"), heads, nq);
  if (trace) {
    trace->merged = xm.value().reshaped({nq, sampled.size(), d});
    trace->scale_weights = std::move(a.weights);
  }
  return a.out;
}

Var average_merge(const std::vector<Var>& sampled, std::size_t num_queries) {
  Var total;
  for (std::size_t l = 0; l < sampled.size(); ++l) {
    Var m = group_mean_rows(sampled[l], sampled[l].value().rows() / num_queries);
    total = l == 0 ? m : add(total, m);
  }
  return scale(total, 1.0 / static_cast<double>(sampled.size()));
}

Var stack_slots(Var a, Var b) { return interleave({a, b}); }

Var tam_combine(Var content_u, Var merged_u, Var switches) {
  const std::size_t d = merged_u.value().cols();
  auto col = [&](std::size_t i) { return expand_cols(slice_cols(switches, i, 1), d); };
  Var m0 = add(mul(col(0), merged_u), col(1));
  Var m1 = add(mul(col(2), merged_u), col(3));
  return add(maximum(m0, m1), content_u);
}

Var tam_merge(Bound& p, const std::string& prefix, Var content_u, Var merged_u, std::size_t heads, TamTrace* trace) {
  const std::size_t nq = content_u.value().rows(), d = content_u.value().cols();
  Var x = stack_slots(content_u, merged_u);
  AttentionOutput a = multi_head_attention(content_u, x, x, attention(p, prefix), heads, nq);
  Var switches = hard_sigmoid(lin(p, prefix + ".mlp2", relu(lin(p, prefix + ".mlp1", a.out))));
  if (trace) {
    trace->stacked = x.value().reshaped({nq, 2, d});
    trace->weights = std::move(a.weights);
    trace->switches = switches.value().reshaped({nq, 2, 2});
  }
  return tam_combine(content_u, merged_u, switches);
}

FineGrainedAnchors generate_fine_grained(Bound& p, const std::string& prefix, Var merged, Var anchors,
                                         const LevelLayout& layout, std::size_t heads, std::size_t points) {
  const std::size_t nq = merged.value().rows(), levels = layout.levels();
  const std::size_t samples = heads * levels * points;
  Tensor step({nq, samples * 2});
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t j = 0; j < samples; ++j) {
      const std::size_t l = (j / points) % levels;
      step(q, 2 * j) = 1.0 / static_cast<double>(layout.widths[l]);
      step(q, 2 * j + 1) = 1.0 / static_cast<double>(layout.heights[l]);
    }
  }
  const std::vector<Var> copies(samples, anchors);
  Var base = concat_cols(copies);
  Var locations = add(base, mul_const(lin(p, prefix + "offsets", merged), step));
  Var logits = reshape(lin(p, prefix + "attn", merged), {nq, heads, levels * points});
  Var weights = reshape(softmax(logits, 2), {nq, samples});
  return {locations, weights};
}

Var deformable_aggregate(Bound& p, const std::string& prefix, const EncodedMemory& memory,
                         const FineGrainedAnchors& fga, std::size_t heads, std::size_t points) {
  Var value = matmul(memory.memory, p(prefix + "value"));
  Var sampled = deform_sample(value, memory.layout, fga.locations, fga.weights, heads, points);
  return matmul(sampled, p(prefix + "output"));
}

Var decoder_layer(Bound& p, const std::string& prefix, const EncodedMemory& memory, Var content, Var position,
                  Var anchors, const ModelConfig& cfg, MergeMode mode, LayerTrace* trace) {
  const std::size_t heads = cfg.num_heads, nq = content.value().rows();
  Var cu = update_content(p, prefix + "sa", content, position, heads, trace ? &trace->self_attention : nullptr);
  std::vector<Var> sampled = multi_scale_sample(memory, anchors, cfg.sampling_sizes);
  Var xu = mode == MergeMode::kBase
               ? average_merge(sampled, nq)
               : hsam_merge(p, prefix + "hsam.", sampled, cu, heads, trace ? &trace->hsam : nullptr);
  Var u = mode == MergeMode::kFull ? tam_merge(p, prefix + "tam", cu, xu, heads, trace ? &trace->tam : nullptr)
                                   : add(cu, xu);
  FineGrainedAnchors fga = generate_fine_grained(p, prefix, norm(p, prefix + "tam_norm", u), anchors, memory.layout,
                                                 heads, cfg.dec_points);
  if (!all_finite(fga.locations.value())) {
    throw Error(ErrorKind::kNumeric, "non-finite fine-grained anchors in decoder layer " + prefix);
  }
  Var pq = deformable_aggregate(p, prefix, memory, fga, heads, cfg.dec_points);
  Var h1 = norm(p, prefix + "norm1", add(cu, pq));
  Var h = norm(p, prefix + "norm2", add(h1, lin(p, prefix + "ffn2", relu(lin(p, prefix + "ffn1", h1)))));
  if (trace) {
    const std::size_t levels = memory.layout.levels(), k = cfg.dec_points;
    trace->content_u = cu.value();
    trace->merged_u = xu.value();
    trace->fused = u.value();
    trace->anchors = fga.locations.value().reshaped({nq, heads, levels, k, 2});
    trace->weights = fga.weights.value().reshaped({nq, heads, levels, k});
    trace->output = h.value();
  }
  return h;
}

DecoderOutput decode(Bound& p, const EncodedMemory& memory, const QuerySet& queries, const ModelConfig& cfg,
                     MergeMode mode, bool keep_traces) {
  DecoderOutput out;
  out.anchors = queries.anchors;
  Var content = queries.content;
  for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
    LayerTrace trace;
    content = decoder_layer(p, layer_prefix(i), memory, content, queries.position, queries.anchors, cfg, mode,
                            keep_traces ? &trace : nullptr);
    if (keep_traces) out.layers.push_back(std::move(trace));
  }
  out.hoi = content;
  return out;
}

BatchedTrace batch_layer_traces(const std::vector<LayerTrace>& per_image) {
  std::vector<Tensor> merged, stacked, switches, anchors, weights;
  for (const LayerTrace& t : per_image) {
    merged.push_back(t.hsam.merged);
    stacked.push_back(t.tam.stacked);
    switches.push_back(t.tam.switches);
    anchors.push_back(t.anchors);
    weights.push_back(t.weights);
  }
  return {stack(merged), stack(stacked), stack(switches), stack(anchors), stack(weights)};
}

}  // namespace fga
