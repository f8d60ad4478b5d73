// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/gradient_suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fgahoi/encoder.hpp"
#include "fgahoi/model.hpp"
#include "json.hpp"

namespace fga {

using json = nlohmann::json;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Contracts an op output with a fixed random tensor so every output
// coordinate feeds the checked scalar.
Var contract(Var out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul_const(out, random_tensor(out.shape(), rng)));
}

struct OpCase {
  const char* name;
  ScalarBuilder f;
  std::vector<Tensor> params;
  double eps = 1e-6;
};

std::vector<OpCase> op_cases() {
  Rng rng(101);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  const Tensor positive = random_tensor({3, 4}, rng, 0.5, 2.0);
  // Keep elementwise kinks more than 0.1 away from every input.
  Tensor apart = b;
  for (std::size_t i = 0; i < apart.numel(); ++i) {
    if (std::fabs(apart[i] - a[i]) < 0.1) apart[i] = a[i] + (apart[i] >= a[i] ? 0.1 : -0.1);
  }
  Tensor off_zero = a;
  for (auto& v : off_zero.data()) {
    if (std::fabs(v) < 0.1) v = v >= 0 ? 0.1 : -0.1;
  }
  const LevelLayout layout = LevelLayout::from_shapes({{3, 4}, {2, 2}});
  const std::size_t heads = 2, points = 2;
  const Box boxes_a[3] = {{0.5, 0.5, 0.4, 0.3}, {0.3, 0.6, 0.2, 0.5}, {0.2, 0.2, 0.2, 0.2}};
  const Box boxes_b[3] = {{0.55, 0.6, 0.32, 0.2}, {0.7, 0.4, 0.3, 0.2}, {0.8, 0.8, 0.1, 0.1}};
  Tensor ga({3, 4}), gb({3, 4});
  for (std::size_t r = 0; r < 3; ++r) {
    const double va[4] = {boxes_a[r].cx, boxes_a[r].cy, boxes_a[r].w, boxes_a[r].h};
    const double vb[4] = {boxes_b[r].cx, boxes_b[r].cy, boxes_b[r].w, boxes_b[r].h};
    for (std::size_t c = 0; c < 4; ++c) {
      ga(r, c) = va[c];
      gb(r, c) = vb[c];
    }
  }
  Tensor targets({3, 4});
  for (std::size_t i = 0; i < targets.numel(); ++i) targets[i] = i % 3 == 0 ? 1.0 : 0.0;
  const Tensor konst = random_tensor({3, 4}, rng);

  return {
      {"add", [](Tape&, std::span<const Var> v) { return contract(add(v[0], v[1]), 1); }, {a, b}},
      {"sub", [](Tape&, std::span<const Var> v) { return contract(sub(v[0], v[1]), 2); }, {a, b}},
      {"mul", [](Tape&, std::span<const Var> v) { return contract(mul(v[0], v[1]), 3); }, {a, b}},
      {"div", [](Tape&, std::span<const Var> v) { return contract(div(v[0], v[1]), 4); }, {a, positive}},
      {"maximum", [](Tape&, std::span<const Var> v) { return contract(maximum(v[0], v[1]), 5); }, {a, apart}},
      {"minimum", [](Tape&, std::span<const Var> v) { return contract(minimum(v[0], v[1]), 6); }, {a, apart}},
      {"scale", [](Tape&, std::span<const Var> v) { return contract(scale(v[0], -2.5), 7); }, {a}},
      {"add_scalar", [](Tape&, std::span<const Var> v) { return contract(add_scalar(v[0], 3.0), 8); }, {a}},
      {"add_const", [konst](Tape&, std::span<const Var> v) { return contract(add_const(v[0], konst), 9); }, {a}},
      {"mul_const", [konst](Tape&, std::span<const Var> v) { return contract(mul_const(v[0], konst), 10); }, {a}},
      {"relu", [](Tape&, std::span<const Var> v) { return contract(relu(v[0]), 11); }, {off_zero}},
      {"logistic", [](Tape&, std::span<const Var> v) { return contract(logistic(v[0]), 12); }, {a}},
      {"hard_sigmoid", [](Tape&, std::span<const Var> v) { return contract(hard_sigmoid(v[0]), 13); },
       {random_tensor({3, 4}, rng, -2.9, 2.9)}},
      {"log", [](Tape&, std::span<const Var> v) { return contract(log(v[0]), 14); }, {positive}},
      {"abs", [](Tape&, std::span<const Var> v) { return contract(abs(v[0]), 15); }, {off_zero}},
      {"matmul", [](Tape&, std::span<const Var> v) { return contract(matmul(v[0], v[1]), 16); },
       {a, random_tensor({4, 2}, rng)}},
      {"add_bias", [](Tape&, std::span<const Var> v) { return contract(add_bias(v[0], v[1]), 17); },
       {a, random_tensor({4}, rng)}},
      {"sum", [](Tape&, std::span<const Var> v) { return sum(mul(v[0], v[0])); }, {a}},
      {"mean", [](Tape&, std::span<const Var> v) { return scale(mean(mul(v[0], v[0])), 3.0); }, {a}},
      {"reshape", [](Tape&, std::span<const Var> v) { return contract(reshape(v[0], {2, 6}), 18); }, {a}},
      {"slice_cols", [](Tape&, std::span<const Var> v) { return contract(slice_cols(v[0], 1, 2), 19); }, {a}},
      {"slice_rows", [](Tape&, std::span<const Var> v) { return contract(slice_rows(v[0], 1, 2), 20); }, {a}},
      {"concat_cols",
       [](Tape&, std::span<const Var> v) {
         std::vector<Var> parts{v[0], v[1]};
         return contract(concat_cols(parts), 21);
       },
       {a, b}},
      {"concat_rows",
       [](Tape&, std::span<const Var> v) {
         std::vector<Var> parts{v[0], v[1]};
         return contract(concat_rows(parts), 22);
       },
       {a, b}},
      {"gather_rows", [](Tape&, std::span<const Var> v) { return contract(gather_rows(v[0], {2, 0, 2, 1}), 23); },
       {a}},
      {"expand_cols", [](Tape&, std::span<const Var> v) { return contract(expand_cols(v[0], 5), 24); },
       {random_tensor({3, 1}, rng)}},
      {"group_mean_rows", [](Tape&, std::span<const Var> v) { return contract(group_mean_rows(v[0], 2), 25); },
       {random_tensor({6, 3}, rng)}},
      {"softmax", [](Tape&, std::span<const Var> v) { return contract(softmax(reshape(v[0], {3, 2, 2}), 1), 26); },
       {a}},
      {"layer_norm", [](Tape&, std::span<const Var> v) { return contract(layer_norm(v[0], v[1], v[2]), 27); },
       {a, random_tensor({4}, rng), random_tensor({4}, rng)}},
      {"bilinear_sample", [](Tape&, std::span<const Var> v) { return contract(bilinear_sample(v[0], v[1]), 28); },
       {random_tensor({3, 4, 2}, rng), random_tensor({6, 2}, rng, -0.1, 1.1)}},
      {"attention_core",
       [](Tape&, std::span<const Var> v) { return contract(attention_core(v[0], v[1], v[2], 2, 2).out, 29); },
       {random_tensor({4, 4}, rng), random_tensor({6, 4}, rng), random_tensor({6, 4}, rng)}},
      {"multi_head_attention",
       [](Tape&, std::span<const Var> v) {
         return contract(multi_head_attention(v[0], v[1], v[2], {v[3], v[4], v[5], v[6]}, 2).out, 30);
       },
       {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5, 4}, rng), random_tensor({4, 4}, rng),
        random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), random_tensor({4, 4}, rng)}},
      {"deform_sample",
       [layout, heads, points](Tape&, std::span<const Var> v) {
         return contract(deform_sample(v[0], layout, v[1], v[2], heads, points), 31);
       },
       {random_tensor({layout.total(), 4}, rng), random_tensor({3, heads * 2 * points * 2}, rng, -0.1, 1.1),
        random_tensor({3, heads * 2 * points}, rng)}},
      {"giou_rows", [](Tape&, std::span<const Var> v) { return contract(giou_rows(v[0], v[1]), 32); }, {ga, gb}},
      {"sigmoid_focal_loss",
       [targets](Tape&, std::span<const Var> v) { return sigmoid_focal_loss(v[0], targets, 0.25, 2.0); },
       {random_tensor({3, 4}, rng, -2.0, 2.0)},
       1e-5},
      {"modified_focal_loss",
       [targets](Tape&, std::span<const Var> v) { return modified_focal_loss(v[0], targets); },
       {random_tensor({3, 4}, rng, -2.0, 2.0)},
       1e-5},
  };
}

}  // namespace

void spread_parameters(ParamStore& store, Rng& rng) {
  for (auto& [name, value] : store.tensors()) {
    const bool spread = name.find("offsets") != std::string::npos || name.find("attn.w") != std::string::npos ||
                        name.find("mlp2.w") != std::string::npos || name.find("3.") != std::string::npos ||
                        name.find("class.b") != std::string::npos;
    if (spread) {
      value = init::uniform(value.shape(), 0.4, rng);
    } else if (name.starts_with("backbone.") && name.ends_with(".b")) {
      // Off the ReLU kink of tokens whose inputs are all zero.
      value = init::uniform(value.shape(), 0.02, rng);
    }
  }
}

bool SuiteReport::passed() const { return !entries.empty() && max_rel_error() < kGradientTolerance; }

double SuiteReport::max_rel_error(bool ops_only) const {
  double worst = 0.0;
  for (const auto& e : entries) {
    if (!ops_only || e.is_op) worst = std::max(worst, e.result.max_rel_error);
  }
  return worst;
}

std::string SuiteReport::to_json() const {
  json list = json::array();
  for (const auto& e : entries) {
    list.push_back({{"name", e.name},
                    {"kind", e.is_op ? "op" : "module"},
                    {"max_rel_error", e.result.max_rel_error},
                    {"checked", e.result.checked},
                    {"skipped", e.result.skipped},
                    {"retried", e.result.retried},
                    {"worst", e.result.worst},
                    {"passed", e.result.max_rel_error < kGradientTolerance}});
  }
  json j{{"tolerance", kGradientTolerance},
         {"op_target", kOpGradientTarget},
         {"model_params", model_params},
         {"max_rel_error", max_rel_error()},
         {"max_op_rel_error", max_rel_error(true)},
         {"passed", passed()},
         {"entries", list}};
  return j.dump(2) + "\n";
}

std::string SuiteReport::to_text() const {
  std::string out;
  char buf[256];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%-26s %-6s %.3e  %s\n", e.name.c_str(), e.is_op ? "op" : "module",
                  e.result.max_rel_error, e.result.max_rel_error < kGradientTolerance ? "ok" : "FAIL");
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "max rel. error %.3e (ops %.3e), %s\n", max_rel_error(), max_rel_error(true),
                passed() ? "passed" : "FAILED");
  return out + buf;
}

SuiteReport run_gradient_suite(const RunConfig& cfg, bool corrupt) {
  cfg.validate();
  const ModelConfig& mc = cfg.model;
  SuiteReport report;
  Rng rng(cfg.require_seed());
  ParamStore store;
  add_model_params(store, mc, rng);
  report.model_params = store.total_size();
  if (report.model_params > kGradientSuiteParamCap) {
    throw Error(ErrorKind::kCapacity, "model has " + std::to_string(report.model_params) +
                                          " parameters; gradient checks are capped at " +
                                          std::to_string(kGradientSuiteParamCap) + " (use the tiny preset)");
  }

  for (const auto& c : op_cases()) {
    GradCheckOptions opts;
    opts.eps = c.eps;
    opts.corrupt = corrupt;
    report.entries.push_back({c.name, true, finite_diff_check(c.f, c.params, opts)});
  }

  spread_parameters(store, rng);
  Tensor image({mc.image_size, mc.image_size, 3});
  for (auto& v : image.data()) v = rng.uniform();
  std::vector<HoiAnnotation> gts;
  for (std::size_t g = 0; g < std::min<std::size_t>(2, mc.num_queries); ++g) {
    HoiAnnotation a{{0.3 + 0.2 * g, 0.4, 0.2, 0.5}, {0.6, 0.5 - 0.1 * g, 0.3, 0.2}, g % mc.num_objects,
                    std::vector<std::uint8_t>(mc.num_verbs, 0)};
    a.verbs[g % mc.num_verbs] = 1;
    gts.push_back(std::move(a));
  }
  GradCheckOptions module_opts;
  module_opts.eps = 1e-5;
  module_opts.retry_eps = {1e-4, 1e-6, 1e-7};
  module_opts.max_coords_per_tensor = 12;
  module_opts.seed = cfg.require_seed();
  module_opts.corrupt = corrupt;

  const std::size_t side = mc.image_size / mc.patch_size;
  const std::size_t tokens = side * side + (side / 2) * (side / 2) + (side / 4) * (side / 4);
  const Tensor memory_probe = random_tensor({tokens, mc.hidden_dim}, rng);
  report.entries.push_back({"encoder", false, check_params(
                                                  [&](Bound& p) {
                                                    FeaturePyramid pyr = build_pyramid(p, image, mc);
                                                    Var pos = positional_encoding(p, pyr.layout, pyr.valid_ratios,
                                                                                  mc.hidden_dim);
                                                    return sum(mul_const(encode(p, pyr, pos, mc).memory, memory_probe));
                                                  },
                                                  store, module_opts)});

  const Tensor hoi_probe = random_tensor({mc.num_queries, mc.hidden_dim}, rng);
  for (MergeMode mode : {MergeMode::kBase, MergeMode::kHsam, MergeMode::kFull}) {
    report.entries.push_back({std::string("decoder/") + merge_mode_name(mode), false,
                              check_params(
                                  [&](Bound& p) {
                                    FeaturePyramid pyr = build_pyramid(p, image, mc);
                                    Var pos = positional_encoding(p, pyr.layout, pyr.valid_ratios, mc.hidden_dim);
                                    EncodedMemory mem = encode(p, pyr, pos, mc);
                                    return sum(mul_const(decode(p, mem, init_queries(p), mc, mode).hoi, hoi_probe));
                                  },
                                  store, module_opts)});
  }

  for (MergeMode mode : {MergeMode::kBase, MergeMode::kHsam, MergeMode::kFull}) {
    Matching match;
    {
      Tape t;
      Bound p(t, store);
      match = hungarian_match(match_cost(forward(p, image, mc, mode).prediction, gts, cfg.loss.weights));
    }
    report.entries.push_back(
        {std::string("model+loss/") + merge_mode_name(mode), false,
         check_params([&](Bound& p) { return composite_loss(forward(p, image, mc, mode).prediction, gts, match, cfg.loss).total; },
                      store, module_opts)});
  }
  return report;
}

}  // namespace fga
