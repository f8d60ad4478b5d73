// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fgahoi/gradcheck.hpp"
#include "fgahoi/head_loss.hpp"
#include "gtest/gtest.h"

namespace fga {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Box random_box(Rng& rng) {
  return {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4)};
}

Tensor rows_of(const std::vector<Box>& boxes) {
  Tensor t({boxes.size(), 4});
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    t(i, 0) = boxes[i].cx;
    t(i, 1) = boxes[i].cy;
    t(i, 2) = boxes[i].w;
    t(i, 3) = boxes[i].h;
  }
  return t;
}

HoiPrediction constant_prediction(Tape& t, const std::vector<Box>& hb, const std::vector<Box>& ob, Tensor obj,
                                  Tensor verb) {
  return {t.constant(rows_of(hb)), t.constant(rows_of(ob)), t.leaf(std::move(obj)), t.leaf(std::move(verb))};
}

// Independent scalar focal term.
double focal_term(double x, double target, double alpha, double gamma) {
  const double p = 1.0 / (1.0 + std::exp(-x));
  const double pt = target > 0.5 ? p : 1.0 - p;
  const double at = alpha < 0 ? 1.0 : (target > 0.5 ? alpha : 1.0 - alpha);
  return -at * std::pow(1.0 - pt, gamma) * std::log(pt);
}

TEST(DetectionHead, ZeroBoxOutputCentresOnAnchors) {
  ModelConfig cfg;
  ParamStore s;
  Rng rng(1);
  add_head_params(s, cfg, rng);
  Tape t;
  Bound p(t, s);
  const Tensor a = random_tensor({cfg.num_queries, 2}, rng, 0.02, 0.98);
  HoiPrediction pred = detection_head(p, t.constant(random_tensor({cfg.num_queries, cfg.hidden_dim}, rng)),
                                      t.constant(a));
  for (std::size_t q = 0; q < cfg.num_queries; ++q) {
    for (const Var& boxes : {pred.human_boxes, pred.object_boxes}) {
      EXPECT_NEAR(boxes.value()(q, 0), a(q, 0), 1e-9);
      EXPECT_NEAR(boxes.value()(q, 1), a(q, 1), 1e-9);
      EXPECT_EQ(boxes.value()(q, 2), 0.5);
      EXPECT_EQ(boxes.value()(q, 3), 0.5);
    }
  }
  EXPECT_EQ(pred.object_logits.shape(), (Shape{cfg.num_queries, cfg.num_objects}));
  EXPECT_EQ(pred.verb_logits.shape(), (Shape{cfg.num_queries, cfg.num_verbs}));
}

TEST(DetectionHead, BoxesStayInsideUnitInterval) {
  ModelConfig cfg;
  ParamStore s;
  Rng rng(2);
  add_head_params(s, cfg, rng);
  for (auto& [name, value] : s.tensors()) value = random_tensor(value.shape(), rng, -0.3, 0.3);
  Tape t;
  Bound p(t, s);
  HoiPrediction pred = detection_head(p, t.constant(random_tensor({cfg.num_queries, cfg.hidden_dim}, rng)),
                                      t.constant(random_tensor({cfg.num_queries, 2}, rng, 0.01, 0.99)));
  for (const Var& boxes : {pred.human_boxes, pred.object_boxes}) {
    for (double v : boxes.value().data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
  // The two heads are separate: human and object boxes differ.
  EXPECT_NE(pred.human_boxes.value().storage(), pred.object_boxes.value().storage());
}

TEST(Giou, ClosedForms) {
  const Box a{0.3, 0.4, 0.2, 0.1};
  EXPECT_EQ(giou(a, a), 1.0);
  const Box u = Box::from_corners(0, 0, 1, 1), v = Box::from_corners(2, 0, 3, 1);
  EXPECT_NEAR(giou(u, v), -1.0 / 3.0, 1e-12);
}

TEST(Giou, NeverAboveIouAndTapeVersionAgrees) {
  Rng rng(3);
  std::vector<Box> as, bs;
  for (int i = 0; i < 500; ++i) {
    as.push_back(random_box(rng));
    bs.push_back(random_box(rng));
    EXPECT_LE(giou(as.back(), bs.back()), iou(as.back(), bs.back()) + 1e-15);
    EXPECT_GT(giou(as.back(), bs.back()), -1.0);
  }
  Tape t;
  const Tensor g = giou_rows(t.constant(rows_of(as)), t.constant(rows_of(bs))).value();
  for (std::size_t i = 0; i < as.size(); ++i) EXPECT_NEAR(g[i], giou(as[i], bs[i]), 1e-12);
}

TEST(Giou, ZeroAreaIsContractError) {
  try {
    giou(Box{0.5, 0.5, 0.0, 0.2}, Box{0.5, 0.5, 0.1, 0.1});
    FAIL() << "expected contract error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kContract);
  }
}

TEST(Giou, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  std::vector<Box> as, bs;
  for (int i = 0; i < 6; ++i) {
    as.push_back(random_box(rng));
    bs.push_back(random_box(rng));
  }
  const Tensor b = rows_of(bs);
  auto f = [&](Tape& t, std::span<const Var> v) { return sum(giou_rows(v[0], t.constant(b))); };
  GradCheckOptions opts;
  EXPECT_LT(finite_diff_check(f, {rows_of(as)}, opts).max_rel_error, 1e-6);
}

TEST(MatchCost, HandComputedSingleCase) {
  Tape t;
  const Box gh{0.5, 0.5, 0.2, 0.2}, go{0.7, 0.6, 0.1, 0.3};
  HoiPrediction pred = constant_prediction(t, {{0.4, 0.5, 0.2, 0.2}}, {go}, Tensor({1, 3}), Tensor({1, 2}));
  HoiAnnotation gt{gh, go, 1, {0, 1}};
  const Tensor c = match_cost(pred, {gt}, LossWeights{1, 1, 2.5, 1});
  ASSERT_EQ(c.shape(), (Shape{1, 1}));
  // object 1 - 0.5, verb 1 - 0.5, human L1 0.1 and GIoU 1/3 (inter 0.02,
  // union 0.06, enclosing 0.06), object box exact.
  EXPECT_NEAR(c[0], 0.5 + 0.5 + 2.5 * 0.1 + (1.0 - 1.0 / 3.0), 1e-12);
}

TEST(MatchCost, SaturatedPerfectPredictionCostsNearlyNothing) {
  Tape t;
  const Box gh{0.4, 0.5, 0.2, 0.3}, go{0.6, 0.5, 0.1, 0.1};
  HoiPrediction pred = constant_prediction(t, {gh, {0.1, 0.1, 0.1, 0.1}}, {go, {0.9, 0.9, 0.1, 0.1}},
                                           Tensor({2, 3}, {-50, 50, -50, 0, 0, 0}), Tensor({2, 2}, {50, -50, 0, 0}));
  const Tensor c = match_cost(pred, {HoiAnnotation{gh, go, 1, {1, 0}}}, LossWeights{});
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_LT(c(0, 0), 1e-12);
  EXPECT_GT(c(1, 0), 1.0);
}

TEST(MatchCost, MoreTruthsThanQueriesIsCapacityError) {
  Tape t;
  const Box b{0.5, 0.5, 0.1, 0.1};
  HoiPrediction pred = constant_prediction(t, {b}, {b}, Tensor({1, 3}), Tensor({1, 2}));
  const HoiAnnotation gt{b, b, 0, {1, 0}};
  try {
    match_cost(pred, {gt, gt}, LossWeights{});
    FAIL() << "expected capacity error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCapacity);
  }
}

// Exhaustive minimum over injective maps ground truth -> prediction, summing
// in ground-truth order like the solver does.
double brute_force_min(const Tensor& c) {
  const std::size_t m = c.dim(0), n = c.dim(1);
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t g = 0; g < n; ++g) total += c(perm[g], g);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

TEST(Hungarian, DiagonalZeroGivesIdentity) {
  Tensor c({4, 4}, 1.0);
  for (std::size_t i = 0; i < 4; ++i) c(i, i) = 0.0;
  const Matching m = hungarian_match(c);
  EXPECT_EQ(m.cost, 0.0);
  for (const auto& [p, g] : m.pairs) EXPECT_EQ(p, g);
}

TEST(Hungarian, TwoByTwoHandCase) {
  const Matching m = hungarian_match(Tensor::matrix(2, 2, {1, 2, 2, 1}));
  EXPECT_EQ(m.cost, 2.0);
  ASSERT_EQ(m.pairs.size(), 2u);
  EXPECT_EQ(m.pairs[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(m.pairs[1], (std::pair<std::size_t, std::size_t>{1, 1}));
}

TEST(Hungarian, EqualsBruteForceOnSeededMatrices) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng.index(6);
    const std::size_t n = 1 + rng.index(m);
    Tensor c({m, n});
    // Half the trials draw from a coarse dyadic grid to force ties.
    for (auto& v : c.data()) v = trial % 2 ? rng.uniform(0, 10) : static_cast<double>(rng.index(8)) * 0.25;
    const Matching got = hungarian_match(c);
    ASSERT_EQ(got.pairs.size(), n);
    std::vector<bool> seen(m, false);
    for (const auto& [p, g] : got.pairs) {
      ASSERT_FALSE(seen[p]);
      seen[p] = true;
    }
    EXPECT_EQ(got.cost, brute_force_min(c)) << "trial " << trial;
  }
}

TEST(Hungarian, NonFiniteIsContractError) {
  Tensor c({2, 2}, 1.0);
  c[1] = std::numeric_limits<double>::infinity();
  try {
    hungarian_match(c);
    FAIL() << "expected contract error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kContract);
  }
}

TEST(Focal, ClosedForms) {
  Tape t;
  const double l = sigmoid_focal_loss(t.leaf(Tensor::scalar(0.0)), Tensor::scalar(1.0), 0.25, 2.0).value()[0];
  EXPECT_NEAR(l, 0.25 * 0.25 * std::log(2.0), 1e-12);
  EXPECT_NEAR(l, 0.04332, 1e-5);
  EXPECT_LT(sigmoid_focal_loss(t.leaf(Tensor::scalar(40.0)), Tensor::scalar(1.0), 0.25, 2.0).value()[0], 1e-30);
  const double m = modified_focal_loss(t.leaf(Tensor::scalar(0.0)), Tensor::scalar(1.0)).value()[0];
  EXPECT_NEAR(m, 0.25 * std::log(2.0), 1e-12);
  EXPECT_NEAR(m, 0.17329, 1e-5);
  EXPECT_LT(modified_focal_loss(t.leaf(Tensor::scalar(-40.0)), Tensor::scalar(0.0)).value()[0], 1e-30);
}

TEST(Focal, GammaZeroHalfAlphaIsHalfCrossEntropy) {
  Rng rng(6);
  const Tensor x = random_tensor({5, 3}, rng, -4, 4);
  Tensor y({5, 3});
  for (auto& v : y.data()) v = rng.index(2);
  Tape t;
  const double l = sigmoid_focal_loss(t.leaf(x), y, 0.5, 0.0).value()[0];
  double bce = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-x[i]));
    bce -= y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p);
  }
  EXPECT_NEAR(l, 0.5 * bce / 15.0, 1e-12);
}

TEST(Focal, ModifiedEqualsAlphaOneOnPositiveTargets) {
  Rng rng(7);
  const Tensor x = random_tensor({4, 3}, rng, -3, 3);
  Tape t;
  const Tensor ones({4, 3}, 1.0);
  EXPECT_NEAR(modified_focal_loss(t.leaf(x), ones).value()[0], sigmoid_focal_loss(t.leaf(x), ones, 1.0, 2.0).value()[0],
              1e-15);
  // With negatives present alpha = 1 zeroes their weight while the modified
  // form keeps it; the two are not the same function.
  Tensor mixed = ones;
  mixed[0] = 0.0;
  EXPECT_GT(modified_focal_loss(t.leaf(x), mixed).value()[0], sigmoid_focal_loss(t.leaf(x), mixed, 1.0, 2.0).value()[0]);
}

TEST(Focal, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  const Tensor x = random_tensor({6, 4}, rng, -3, 3);
  Tensor y({6, 4});
  for (auto& v : y.data()) v = rng.index(2);
  GradCheckOptions opts;
  opts.eps = 1e-5;
  auto f1 = [&](Tape&, std::span<const Var> v) { return sigmoid_focal_loss(v[0], y, 0.25, 2.0); };
  auto f2 = [&](Tape&, std::span<const Var> v) { return modified_focal_loss(v[0], y); };
  const GradCheckResult r1 = finite_diff_check(f1, {x}, opts), r2 = finite_diff_check(f2, {x}, opts);
  EXPECT_LT(r1.max_rel_error, 1e-6) << r1.worst;
  EXPECT_LT(r2.max_rel_error, 1e-6) << r2.worst;
}

TEST(CompositeLoss, PerfectBoxesHaveZeroBoxTerms) {
  Tape t;
  const Box gh{0.4, 0.5, 0.2, 0.3}, go{0.6, 0.5, 0.1, 0.1};
  HoiPrediction pred = constant_prediction(t, {gh, {0.2, 0.2, 0.1, 0.1}}, {go, {0.3, 0.3, 0.1, 0.1}},
                                           Tensor({2, 3}), Tensor({2, 2}));
  LossTerms l = composite_loss(pred, {HoiAnnotation{gh, go, 2, {1, 1}}}, Matching{{{0, 0}}, 0.0}, LossConfig{});
  EXPECT_EQ(l.bbox, 0.0);
  EXPECT_NEAR(l.giou, 0.0, 1e-15);
  EXPECT_GT(l.total.value()[0], 0.0);
}

TEST(CompositeLoss, NoTruthsIsClassificationOnly) {
  Tape t;
  Rng rng(9);
  const Box b{0.5, 0.5, 0.2, 0.2};
  HoiPrediction pred = constant_prediction(t, {b, b}, {b, b}, random_tensor({2, 3}, rng), random_tensor({2, 2}, rng));
  const LossConfig cfg;
  LossTerms l = composite_loss(pred, {}, Matching{}, cfg);
  EXPECT_EQ(l.bbox, 0.0);
  EXPECT_EQ(l.giou, 0.0);
  EXPECT_NEAR(l.total.value()[0], cfg.weights.object * l.object + cfg.weights.verb * l.verb, 1e-15);
}

TEST(CompositeLoss, TwoQueriesOneTruthTermByTerm) {
  Tape t;
  const std::vector<Box> hb{{0.3, 0.4, 0.2, 0.2}, {0.6, 0.6, 0.3, 0.2}};
  const std::vector<Box> ob{{0.5, 0.5, 0.1, 0.2}, {0.2, 0.7, 0.2, 0.1}};
  const Tensor co({2, 3}, {0.3, -1.2, 2.0, -0.5, 0.7, 0.1});
  const Tensor cv({2, 2}, {1.5, -0.4, -2.0, 0.9});
  HoiPrediction pred = constant_prediction(t, hb, ob, co, cv);
  const HoiAnnotation gt{{0.35, 0.45, 0.2, 0.25}, {0.5, 0.55, 0.15, 0.2}, 2, {1, 0}};
  const LossConfig cfg;
  LossTerms l = composite_loss(pred, {gt}, Matching{{{0, 0}}, 0.0}, cfg);

  const double to[2][3] = {{0, 0, 1}, {0, 0, 0}}, tv[2][2] = {{1, 0}, {0, 0}};
  double lo = 0.0, lv = 0.0;
  for (int q = 0; q < 2; ++q) {
    for (int k = 0; k < 3; ++k) lo += focal_term(co(q, k), to[q][k], 0.25, 2.0);
    for (int k = 0; k < 2; ++k) lv += focal_term(cv(q, k), tv[q][k], -1.0, 2.0);
  }
  const double lb = (std::fabs(0.3 - 0.35) + std::fabs(0.4 - 0.45) + 0.0 + std::fabs(0.2 - 0.25)) +
                    (0.0 + std::fabs(0.5 - 0.55) + std::fabs(0.1 - 0.15) + 0.0);
  // Human: [0.2,0.4]x[0.3,0.5] vs [0.25,0.45]x[0.325,0.575].
  const double ih = 0.15 * 0.175, uh = 0.04 + 0.05 - ih, eh = 0.25 * 0.275;
  // Object: [0.45,0.55]x[0.4,0.6] vs [0.425,0.575]x[0.45,0.65].
  const double io = 0.1 * 0.15, uo = 0.02 + 0.03 - io, eo = 0.15 * 0.25;
  const double lg = (1.0 - (ih / uh - (eh - uh) / eh)) + (1.0 - (io / uo - (eo - uo) / eo));
  EXPECT_NEAR(l.object, lo, 1e-12);
  EXPECT_NEAR(l.verb, lv, 1e-12);
  EXPECT_NEAR(l.bbox, lb, 1e-12);
  EXPECT_NEAR(l.giou, lg, 1e-12);
  EXPECT_NEAR(l.total.value()[0], lo + lv + 2.5 * lb + lg, 1e-9);
}

TEST(CompositeLoss, EveryTermIsPerTruth) {
  Tape t;
  Rng rng(12);
  std::vector<Box> hb, ob;
  for (int q = 0; q < 4; ++q) {
    hb.push_back(random_box(rng));
    ob.push_back(random_box(rng));
  }
  const Tensor co = random_tensor({4, 3}, rng), cv = random_tensor({4, 2}, rng);
  HoiPrediction pred = constant_prediction(t, hb, ob, co, cv);
  const HoiAnnotation a{random_box(rng), random_box(rng), 0, {1, 0}};
  const HoiAnnotation b{random_box(rng), random_box(rng), 1, {0, 1}};
  const LossConfig cfg;
  const LossTerms one_a = composite_loss(pred, {a}, Matching{{{0, 0}}, 0.0}, cfg);
  const LossTerms one_b = composite_loss(pred, {b}, Matching{{{1, 0}}, 0.0}, cfg);
  const LossTerms both = composite_loss(pred, {a, b}, Matching{{{0, 0}, {1, 1}}, 0.0}, cfg);
  EXPECT_NEAR(both.bbox, 0.5 * (one_a.bbox + one_b.bbox), 1e-12);
  EXPECT_NEAR(both.giou, 0.5 * (one_a.giou + one_b.giou), 1e-12);
  double lo = 0.0, lv = 0.0;
  for (std::size_t q = 0; q < 4; ++q) {
    for (std::size_t k = 0; k < 3; ++k) lo += focal_term(co(q, k), (q == 0 && k == 0) || (q == 1 && k == 1), 0.25, 2.0);
    for (std::size_t k = 0; k < 2; ++k) lv += focal_term(cv(q, k), (q == 0 && k == 0) || (q == 1 && k == 1), -1.0, 2.0);
  }
  EXPECT_NEAR(both.object, lo / 2.0, 1e-12);
  EXPECT_NEAR(both.verb, lv / 2.0, 1e-12);
}

TEST(CompositeLoss, ScalingWeightsScalesLossAndKeepsMatching) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    std::vector<Box> hb, ob;
    for (int q = 0; q < 5; ++q) {
      hb.push_back(random_box(rng));
      ob.push_back(random_box(rng));
    }
    HoiPrediction pred = constant_prediction(t, hb, ob, random_tensor({5, 3}, rng), random_tensor({5, 2}, rng));
    std::vector<HoiAnnotation> gts;
    for (int g = 0; g < 3; ++g) {
      gts.push_back({random_box(rng), random_box(rng), rng.index(3), {1, static_cast<std::uint8_t>(rng.index(2))}});
    }
    LossConfig base;
    LossConfig scaled = base;
    const double c = rng.uniform(0.1, 10.0);
    scaled.weights = {c * base.weights.object, c * base.weights.verb, c * base.weights.bbox, c * base.weights.giou};
    const Matching m1 = hungarian_match(match_cost(pred, gts, base.weights));
    const Matching m2 = hungarian_match(match_cost(pred, gts, scaled.weights));
    EXPECT_EQ(m1.pairs, m2.pairs);
    const double l1 = composite_loss(pred, gts, m1, base).total.value()[0];
    const double l2 = composite_loss(pred, gts, m2, scaled).total.value()[0];
    EXPECT_NEAR(l2, c * l1, 1e-12 * c * l1);
    LossTerms terms = composite_loss(pred, gts, m1, base);
    EXPECT_GE(terms.object, 0.0);
    EXPECT_GE(terms.verb, 0.0);
    EXPECT_GE(terms.bbox, 0.0);
    EXPECT_GE(terms.giou, 0.0);
  }
}

TEST(CompositeLoss, GradientThroughHeadMatchesFiniteDifferences) {
  ModelConfig cfg = RunConfig::tiny().model;
  ParamStore s;
  Rng rng(11);
  add_head_params(s, cfg, rng);
  // Move off the zero box layers and the class prior so every parameter carries a
  // gradient above the differencing noise.
  for (auto& [name, value] : s.tensors()) {
    if (name.find("3.") != std::string::npos || name.find("class.b") != std::string::npos) {
      value = random_tensor(value.shape(), rng, -0.5, 0.5);
    }
  }
  const Tensor h = random_tensor({cfg.num_queries, cfg.hidden_dim}, rng);
  const Tensor a = random_tensor({cfg.num_queries, 2}, rng, 0.2, 0.8);
  const std::vector<HoiAnnotation> gts{{random_box(rng), random_box(rng), 1, {0, 1, 1}},
                                       {random_box(rng), random_box(rng), 0, {1, 0, 0}}};
  Matching match;
  {
    Tape t;
    Bound p(t, s);
    match = hungarian_match(match_cost(detection_head(p, t.constant(h), t.constant(a)), gts, LossWeights{}));
  }
  auto f = [&](Bound& p) {
    Tape& t = p.tape();
    return composite_loss(detection_head(p, t.constant(h), t.constant(a)), gts, match, LossConfig{}).total;
  };
  GradCheckOptions opts;
  opts.eps = 1e-5;
  const GradCheckResult res = check_params(f, s, opts);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

}  // namespace
}  // namespace fga
