// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/head_loss.hpp"

#include <algorithm>
#include <cmath>

#include "layers.hpp"

namespace fga {

using layers::lin;

namespace {

constexpr double kPriorProbability = 0.01;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

Var box_mlp(Bound& p, const std::string& name, Var x) {
  Var h = relu(lin(p, name + "1", x));
  h = relu(lin(p, name + "2", h));
  return lin(p, name + "3", h);
}

Var logit(Var a) { return sub(log(a), log(add_scalar(scale(a, -1.0), 1.0))); }

Var col(Var boxes, std::size_t i) { return slice_cols(boxes, i, 1); }

Tensor box_rows(const std::vector<Box>& boxes) {
  Tensor t({boxes.size(), 4});
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    t(i, 0) = boxes[i].cx;
    t(i, 1) = boxes[i].cy;
    t(i, 2) = boxes[i].w;
    t(i, 3) = boxes[i].h;
  }
  return t;
}

double l1(const Box& a, const Box& b) {
  return std::fabs(a.cx - b.cx) + std::fabs(a.cy - b.cy) + std::fabs(a.w - b.w) + std::fabs(a.h - b.h);
}

// Fused focal term; alpha < 0 means no class weighting.
Var focal(Var logits, const Tensor& targets, double alpha, double gamma) {
  const Tensor& x = logits.value();
  if (targets.shape() != x.shape()) {
    throw Error(ErrorKind::kDimension,
                "focal loss: logits " + shape_str(x.shape()) + " vs targets " + shape_str(targets.shape()));
  }
  const std::size_t n = x.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = targets[i] > 0.5;
    const double z = pos ? x[i] : -x[i];
    const double at = alpha < 0 ? 1.0 : (pos ? alpha : 1.0 - alpha);
    total += at * std::pow(1.0 - sigmoid(z), gamma) * softplus(-z);
  }
  const double inv = n ? 1.0 / static_cast<double>(n) : 0.0;
  return logits.tape->push(Tensor::scalar(total * inv), {logits.id},
                           [targets, alpha, gamma, inv](Tape& t, std::size_t self) {
                             const std::size_t in = t.inputs(self)[0];
                             if (!t.requires_grad(in)) return;
                             const double g = t.upstream(self)[0] * inv;
                             const Tensor& x = t.value(in);
                             Tensor& gx = t.grad_buffer(in);
                             for (std::size_t i = 0; i < x.numel(); ++i) {
                               const bool pos = targets[i] > 0.5;
                               const double z = pos ? x[i] : -x[i];
                               const double at = alpha < 0 ? 1.0 : (pos ? alpha : 1.0 - alpha);
                               const double s = sigmoid(z), q = 1.0 - s;
                               const double dz = -at * std::pow(q, gamma) * (gamma * s * softplus(-z) + q);
                               gx[i] += g * (pos ? dz : -dz);
                             }
                           });
}

}  // namespace

void add_head_params(ParamStore& s, const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.hidden_dim;
  for (const std::string name : {"head.human", "head.object"}) {
    layers::add_linear(s, name + "1", d, d, rng);
    layers::add_linear(s, name + "2", d, d, rng);
    s.add(name + "3.w", init::zeros({d, 4}));
    s.add(name + "3.b", init::zeros({4}));
  }
  const double prior = -std::log((1.0 - kPriorProbability) / kPriorProbability);
  s.add("head.object_class.w", init::xavier(d, cfg.num_objects, rng));
  s.add("head.object_class.b", init::constant({cfg.num_objects}, prior));
  s.add("head.verb_class.w", init::xavier(d, cfg.num_verbs, rng));
  s.add("head.verb_class.b", init::constant({cfg.num_verbs}, prior));
}

HoiPrediction detection_head(Bound& p, Var hoi, Var anchors) {
  const std::size_t nq = hoi.value().rows();
  const std::vector<Var> parts{logit(anchors), p.tape().constant(Tensor({nq, 2}))};
  Var base = concat_cols(parts);
  auto box = [&](const std::string& name) { return logistic(add(box_mlp(p, name, hoi), base)); };
  return {box("head.human"), box("head.object"), lin(p, "head.object_class", hoi), lin(p, "head.verb_class", hoi)};
}

Var giou_rows(Var a, Var b) {
  auto corners = [](Var box, double sign, std::size_t axis) {
    return add(col(box, axis), scale(col(box, axis + 2), 0.5 * sign));
  };
  Var ax0 = corners(a, -1, 0), ay0 = corners(a, -1, 1), ax1 = corners(a, 1, 0), ay1 = corners(a, 1, 1);
  Var bx0 = corners(b, -1, 0), by0 = corners(b, -1, 1), bx1 = corners(b, 1, 0), by1 = corners(b, 1, 1);
  Var inter = mul(relu(sub(minimum(ax1, bx1), maximum(ax0, bx0))), relu(sub(minimum(ay1, by1), maximum(ay0, by0))));
  Var area_a = mul(col(a, 2), col(a, 3));
  Var area_b = mul(col(b, 2), col(b, 3));
  Var uni = sub(add(area_a, area_b), inter);
  Var enclosing = mul(sub(maximum(ax1, bx1), minimum(ax0, bx0)), sub(maximum(ay1, by1), minimum(ay0, by0)));
  return sub(div(inter, uni), div(sub(enclosing, uni), enclosing));
}

std::vector<Box> boxes_of(const Tensor& rows) {
  std::vector<Box> out(rows.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {rows(i, 0), rows(i, 1), rows(i, 2), rows(i, 3)};
  return out;
}

Tensor match_cost(const HoiPrediction& pred, const std::vector<HoiAnnotation>& gts, const LossWeights& w) {
  const std::size_t nq = pred.object_logits.value().rows();
  if (gts.size() > nq) {
    throw Error(ErrorKind::kCapacity, std::to_string(gts.size()) + " ground truths exceed " + std::to_string(nq) +
                                          " queries");
  }
  const std::vector<Box> hb = boxes_of(pred.human_boxes.value()), ob = boxes_of(pred.object_boxes.value());
  const Tensor& co = pred.object_logits.value();
  const Tensor& cv = pred.verb_logits.value();
  Tensor cost({nq, gts.size()});
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const HoiAnnotation& gt = gts[g];
    if (gt.object_class >= co.cols()) throw Error(ErrorKind::kData, "object class out of range");
    if (gt.verbs.size() != cv.cols()) throw Error(ErrorKind::kData, "verb vector length mismatch");
    for (std::size_t q = 0; q < nq; ++q) {
      double verb_p = 0.0, positives = 0.0;
      for (std::size_t v = 0; v < gt.verbs.size(); ++v) {
        if (!gt.verbs[v]) continue;
        verb_p += sigmoid(cv(q, v));
        positives += 1.0;
      }
      const double verb_cost = positives > 0 ? 1.0 - verb_p / positives : 0.0;
      double c = w.object * (1.0 - sigmoid(co(q, gt.object_class))) + w.verb * verb_cost;
      c += w.bbox * l1(hb[q], gt.human) + w.giou * (1.0 - giou(hb[q], gt.human));
      c += w.bbox * l1(ob[q], gt.object) + w.giou * (1.0 - giou(ob[q], gt.object));
      cost(q, g) = c;
    }
  }
  return cost;
}

Var sigmoid_focal_loss(Var logits, const Tensor& targets, double alpha, double gamma) {
  return focal(logits, targets, alpha, gamma);
}

Var modified_focal_loss(Var logits, const Tensor& targets, double gamma) { return focal(logits, targets, -1.0, gamma); }

LossTerms composite_loss(const HoiPrediction& pred, const std::vector<HoiAnnotation>& gts, const Matching& matching,
                         const LossConfig& cfg) {
  Tape& tape = *pred.object_logits.tape;
  const std::size_t nq = pred.object_logits.value().rows();
  Tensor obj_t(pred.object_logits.shape()), verb_t(pred.verb_logits.shape());
  std::vector<std::size_t> rows;
  std::vector<Box> th, to;
  for (const auto& [q, g] : matching.pairs) {
    if (q >= nq || g >= gts.size()) throw Error(ErrorKind::kContract, "matching index out of range");
    obj_t(q, gts[g].object_class) = 1.0;
    for (std::size_t v = 0; v < gts[g].verbs.size(); ++v) verb_t(q, v) = gts[g].verbs[v] ? 1.0 : 0.0;
    rows.push_back(q);
    th.push_back(gts[g].human);
    to.push_back(gts[g].object);
  }
  LossTerms out;
  // Element means rescaled to sums per ground truth, like the box terms.
  const double per_gt = 1.0 / static_cast<double>(std::max<std::size_t>(gts.size(), 1));
  Var lo = scale(sigmoid_focal_loss(pred.object_logits, obj_t, cfg.focal_alpha, cfg.focal_gamma),
                 static_cast<double>(obj_t.numel()) * per_gt);
  Var lv = scale(modified_focal_loss(pred.verb_logits, verb_t, cfg.focal_gamma),
                 static_cast<double>(verb_t.numel()) * per_gt);
  out.object = lo.value()[0];
  out.verb = lv.value()[0];
  Var total = add(scale(lo, cfg.weights.object), scale(lv, cfg.weights.verb));
  if (!rows.empty()) {
    const double inv = 1.0 / static_cast<double>(gts.size());
    Var bbox, gi;
    for (int k = 0; k < 2; ++k) {
      Var matched = gather_rows(k == 0 ? pred.human_boxes : pred.object_boxes, rows);
      Var target = tape.constant(box_rows(k == 0 ? th : to));
      Var b = scale(sum(abs(sub(matched, target))), inv);
      Var g = scale(sum(add_scalar(scale(giou_rows(matched, target), -1.0), 1.0)), inv);
      bbox = k == 0 ? b : add(bbox, b);
      gi = k == 0 ? g : add(gi, g);
    }
    out.bbox = bbox.value()[0];
    out.giou = gi.value()[0];
    total = add(total, add(scale(bbox, cfg.weights.bbox), scale(gi, cfg.weights.giou)));
  }
  out.total = total;
  return out;
}

}  // namespace fga
