// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/encoder.hpp"

#include <cmath>

#include "layers.hpp"

namespace fga {

using layers::add_linear;
using layers::add_norm;
using layers::lin;
using layers::norm;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::string layer_prefix(std::size_t i) { return "enc.layer" + std::to_string(i) + "."; }

// Merges each 2x2 block of a [h, w, c] map into one row of width 4c.
Var space_to_depth(Var map) {
  const std::size_t h = map.value().dim(0), w = map.value().dim(1), c = map.value().dim(2);
  Var rows = reshape(map, {h * w, c});
  std::vector<Var> parts;
  for (std::size_t dy = 0; dy < 2; ++dy) {
    for (std::size_t dx = 0; dx < 2; ++dx) {
      std::vector<std::size_t> idx;
      for (std::size_t y = 0; y < h / 2; ++y) {
        for (std::size_t x = 0; x < w / 2; ++x) idx.push_back((2 * y + dy) * w + 2 * x + dx);
      }
      parts.push_back(gather_rows(rows, std::move(idx)));
    }
  }
  return concat_cols(parts);
}

}  // namespace

void add_encoder_params(ParamStore& s, const ModelConfig& cfg, Rng& rng) {
  const std::size_t cs = cfg.backbone_dim, d = cfg.hidden_dim;
  add_linear(s, "backbone.patch", cfg.patch_size * cfg.patch_size * 3, cs, rng);
  add_linear(s, "backbone.merge1", 4 * cs, 2 * cs, rng);
  add_linear(s, "backbone.merge2", 8 * cs, 4 * cs, rng);
  for (std::size_t l = 0; l < cfg.num_levels; ++l) {
    add_linear(s, "enc.input_proj" + std::to_string(l), cs << l, d, rng);
  }
  s.add("enc.level_embed", init::uniform({cfg.num_levels, d}, 0.1, rng));
  const std::size_t samples = cfg.num_heads * cfg.num_levels * cfg.enc_points;
  for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
    const std::string pre = layer_prefix(i);
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

Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw Error(ErrorKind::kDimension, "image must be [H, W, 3], got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1);
  const std::size_t ph = h / patch, pw = w / patch, width = patch * patch * 3;
  Tensor out({ph * pw, width});
  for (std::size_t py = 0; py < ph; ++py) {
    for (std::size_t px = 0; px < pw; ++px) {
      double* row = out.data().data() + (py * pw + px) * width;
      std::size_t k = 0;
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          for (std::size_t c = 0; c < 3; ++c) row[k++] = image[((py * patch + y) * w + px * patch + x) * 3 + c];
        }
      }
    }
  }
  return out;
}

FeaturePyramid build_pyramid(Bound& p, const Tensor& image, const ModelConfig& cfg) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw Error(ErrorKind::kDimension, "image must be [H, W, 3], got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1), stride = 4 * cfg.patch_size;
  if (h % stride != 0 || w % stride != 0) {
    throw Error(ErrorKind::kConfig, "image " + std::to_string(h) + "x" + std::to_string(w) +
                                        " is not divisible by the coarsest stride " + std::to_string(stride));
  }
  const std::size_t cs = cfg.backbone_dim;
  std::size_t lh = h / cfg.patch_size, lw = w / cfg.patch_size;
  FeaturePyramid pyr;
  Var patches = p.tape().constant(patchify(image, cfg.patch_size));
  Var level = reshape(relu(lin(p, "backbone.patch", patches)), {lh, lw, cs});
  pyr.levels.push_back(level);
  std::vector<std::pair<std::size_t, std::size_t>> shapes{{lh, lw}};
  for (std::size_t i = 1; i < 3; ++i) {
    Var merged = relu(lin(p, "backbone.merge" + std::to_string(i), space_to_depth(level)));
    lh /= 2;
    lw /= 2;
    level = reshape(merged, {lh, lw, cs << i});
    pyr.levels.push_back(level);
    shapes.emplace_back(lh, lw);
  }
  pyr.layout = LevelLayout::from_shapes(shapes);
  pyr.valid_ratios.assign(3, {1.0, 1.0});
  return pyr;
}

Tensor reference_points(const LevelLayout& layout, const ValidRatios& ratios) {
  Tensor ref({layout.total(), 2});
  for (std::size_t l = 0; l < layout.levels(); ++l) {
    const std::size_t h = layout.heights[l], w = layout.widths[l];
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t row = layout.offsets[l] + y * w + x;
        ref[2 * row] = (static_cast<double>(x) + 0.5) / static_cast<double>(w) * ratios[l][1];
        ref[2 * row + 1] = (static_cast<double>(y) + 0.5) / static_cast<double>(h) * ratios[l][0];
      }
    }
  }
  return ref;
}

Tensor sine_table(const LevelLayout& layout, const ValidRatios& ratios, std::size_t dim) {
  if (dim == 0 || dim % 4 != 0) {
    throw Error(ErrorKind::kConfig, "positional encoding width " + std::to_string(dim) + " is not divisible by 4");
  }
  const Tensor ref = reference_points(layout, ratios);
  const std::size_t half = dim / 2, pairs = half / 2;
  Tensor out({layout.total(), dim});
  for (std::size_t r = 0; r < layout.total(); ++r) {
    const double coord[2] = {ref[2 * r + 1], ref[2 * r]};  // y block first, then x
    for (std::size_t axis = 0; axis < 2; ++axis) {
      for (std::size_t k = 0; k < pairs; ++k) {
        const double freq = std::pow(10000.0, 2.0 * static_cast<double>(k) / static_cast<double>(half));
        const double a = coord[axis] * kTwoPi / freq;
        out(r, axis * half + 2 * k) = std::sin(a);
        out(r, axis * half + 2 * k + 1) = std::cos(a);
      }
    }
  }
  return out;
}

Var positional_encoding(Bound& p, const LevelLayout& layout, const ValidRatios& ratios, std::size_t dim) {
  std::vector<std::size_t> level_of_row;
  for (std::size_t l = 0; l < layout.levels(); ++l) {
    level_of_row.insert(level_of_row.end(), layout.heights[l] * layout.widths[l], l);
  }
  Var embed = gather_rows(p("enc.level_embed"), std::move(level_of_row));
  return add_const(embed, sine_table(layout, ratios, dim));
}

Var project_and_flatten(Bound& p, const FeaturePyramid& pyramid) {
  std::vector<Var> rows;
  for (std::size_t l = 0; l < pyramid.levels.size(); ++l) {
    const Shape& s = pyramid.levels[l].shape();
    Var flat = reshape(pyramid.levels[l], {s[0] * s[1], s[2]});
    rows.push_back(lin(p, "enc.input_proj" + std::to_string(l), flat));
  }
  return concat_rows(rows);
}

Var deformable_self_attention(Bound& p, const std::string& prefix, Var memory, Var pos, const LevelLayout& layout,
                              const ValidRatios& ratios, const ModelConfig& cfg, DeformableTrace* trace) {
  const std::size_t n = memory.value().rows(), heads = cfg.num_heads, levels = layout.levels();
  const std::size_t points = cfg.enc_points, per_row = heads * levels * points;
  Var query = add(memory, pos);
  Var offsets = lin(p, prefix + "offsets", query);
  Var weights = softmax(reshape(lin(p, prefix + "attn", query), {n, heads, levels * points}), 2);

  // location = reference (scaled by the sampled level's valid ratio) + offset
  // measured in that level's pixels.
  const Tensor ref = reference_points(layout, ValidRatios(levels, {1.0, 1.0}));
  Tensor base({n, per_row * 2}), step({n, per_row * 2});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t l = 0; l < levels; ++l) {
        for (std::size_t k = 0; k < points; ++k) {
          const std::size_t idx = 2 * (((h * levels) + l) * points + k);
          base(r, idx) = ref[2 * r] * ratios[l][1];
          base(r, idx + 1) = ref[2 * r + 1] * ratios[l][0];
          step(r, idx) = 1.0 / static_cast<double>(layout.widths[l]);
          step(r, idx + 1) = 1.0 / static_cast<double>(layout.heights[l]);
        }
      }
    }
  }
  Var locations = add_const(mul_const(offsets, step), base);
  if (trace) {
    trace->locations = locations.value();
    trace->weights = weights.value();
  }
  Var value = matmul(memory, p(prefix + "value"));
  Var sampled = deform_sample(value, layout, locations, reshape(weights, {n, per_row}), heads, points);
  return matmul(sampled, p(prefix + "output"));
}

Var encoder_layer(Bound& p, const std::string& prefix, Var memory, Var pos, const LevelLayout& layout,
                  const ValidRatios& ratios, const ModelConfig& cfg) {
  Var attn = deformable_self_attention(p, prefix, memory, pos, layout, ratios, cfg);
  Var x = norm(p, prefix + "norm1", add(memory, attn));
  Var ffn = lin(p, prefix + "ffn2", relu(lin(p, prefix + "ffn1", x)));
  return norm(p, prefix + "norm2", add(x, ffn));
}

EncodedMemory encode(Bound& p, const FeaturePyramid& pyramid, Var pos, const ModelConfig& cfg) {
  Var memory = project_and_flatten(p, pyramid);
  for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
    memory = encoder_layer(p, layer_prefix(i), memory, pos, pyramid.layout, pyramid.valid_ratios, cfg);
  }
  return {memory, pos, pyramid.layout, pyramid.valid_ratios};
}

}  // namespace fga
