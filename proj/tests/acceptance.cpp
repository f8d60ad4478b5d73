// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Acceptance run. Prints one PASS/FAIL line per primary criterion and exits
// nonzero when any fails. Usage: acceptance <fgahoi-cli> <work-dir>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fgahoi/dataset.hpp"
#include "fgahoi/gradient_suite.hpp"
#include "fgahoi/model.hpp"
#include "json.hpp"

namespace fga {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// ---- Gradient suite ------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const SuiteReport r = run_gradient_suite(RunConfig::tiny(), false);
  const double secs = seconds_since(t0);
  std::size_t ops = 0;
  for (const auto& e : r.entries) ops += e.is_op;
  const double all = r.max_rel_error(), op = r.max_rel_error(true);
  const bool pass = r.passed() && all < 1e-4 && op < 1e-6 && secs < 120.0;
  return {pass, std::to_string(ops) + " ops + " + std::to_string(r.entries.size() - ops) +
                    " model stages; max rel. err " + fmt("%.2e", all) + ", ops " + fmt("%.2e", op) + "; " +
                    fmt("%.1f", secs) + " s"};
}

// ---- Shapes and normalization over random configurations -----------------

ModelConfig random_config(Rng& rng) {
  ModelConfig mc = RunConfig::tiny().model;
  mc.num_heads = 1 + rng.index(3);
  mc.hidden_dim = 4 * mc.num_heads * (1 + rng.index(3));
  mc.ffn_dim = 2 * mc.hidden_dim;
  mc.num_queries = 1 + rng.index(6);
  mc.dec_points = 1 + rng.index(3);
  mc.enc_points = 1 + rng.index(2);
  mc.dec_layers = 1 + rng.index(2);
  mc.image_size = 16 * (1 + rng.index(2));
  const std::vector<std::vector<std::size_t>> sizes{{1, 3, 5}, {1, 5, 7}, {3, 5, 7}};
  mc.sampling_sizes = sizes[rng.index(sizes.size())];
  mc.num_objects = 1 + rng.index(4);
  mc.num_verbs = 1 + rng.index(4);
  mc.validate();
  return mc;
}

// Values of one traced forward pass, copied off the tape.
struct Pass {
  std::vector<LayerTrace> layers;
  Tensor anchors, hoi, human_boxes, object_boxes, object_logits, verb_logits;
};

Pass capture(const ForwardOutput& o) {
  return {o.decoder.layers,
          o.decoder.anchors.value(),
          o.decoder.hoi.value(),
          o.prediction.human_boxes.value(),
          o.prediction.object_boxes.value(),
          o.prediction.object_logits.value(),
          o.prediction.verb_logits.value()};
}

struct Traced {
  ModelConfig mc;
  std::vector<Pass> outputs;  // one per image
};

Traced run_traced(const ModelConfig& mc, std::uint64_t seed, std::size_t batch, bool spread) {
  RunConfig rc = RunConfig::tiny();
  rc.model = mc;
  rc.seed = seed;
  Model m = create_model(rc);
  Rng rng(seed + 1);
  if (spread) spread_parameters(m.params, rng);
  Traced t{mc, {}};
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor image = random_tensor({mc.image_size, mc.image_size, 3}, rng, 0.0, 1.0);
    Tape tape;
    Bound p(tape, m.params);
    t.outputs.push_back(capture(forward(p, image, mc, MergeMode::kFull, true)));
  }
  return t;
}

std::string shape_text(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

Outcome shape_suite() {
  Rng rng(2026);
  std::size_t checked = 0;
  std::string bad;
  auto expect = [&](const Shape& got, const Shape& want, const std::string& what) {
    ++checked;
    if (got != want && bad.empty()) bad = what + " " + shape_text(got) + " != " + shape_text(want);
  };
  std::string configs;
  for (int trial = 0; trial < 3; ++trial) {
    const ModelConfig mc = random_config(rng);
    const std::size_t batch = 2 + rng.index(2);
    const Traced t = run_traced(mc, 100 + trial, batch, false);
    const std::size_t b = batch, nq = mc.num_queries, d = mc.hidden_dim, h = mc.num_heads, l = mc.num_levels,
                      a = mc.dec_points;
    for (std::size_t layer = 0; layer < mc.dec_layers; ++layer) {
      std::vector<LayerTrace> per_image;
      for (const auto& o : t.outputs) per_image.push_back(o.layers.at(layer));
      const BatchedTrace bt = batch_layer_traces(per_image);
      expect(bt.merged.shape(), {b, nq, l, d}, "X_m");
      expect(bt.stacked.shape(), {b, nq, 2, d}, "X");
      expect(bt.switches.shape(), {b, nq, 2, 2}, "Switch");
      expect(bt.anchors.shape(), {b, nq, h, l, a, 2}, "fine-grained anchors");
      expect(bt.weights.shape(), {b, nq, h, l, a}, "fine-grained weights");
    }
    for (const auto& o : t.outputs) {
      expect(o.anchors.shape(), {nq, 2}, "A");
      expect(o.hoi.shape(), {nq, d}, "H");
      expect(o.human_boxes.shape(), {nq, 4}, "b_h");
      expect(o.object_boxes.shape(), {nq, 4}, "b_o");
      expect(o.object_logits.shape(), {nq, mc.num_objects}, "c_o");
      expect(o.verb_logits.shape(), {nq, mc.num_verbs}, "c_v");
    }
    configs += (trial ? "; " : "") + std::string("B=") + std::to_string(b) + " Nq=" + std::to_string(nq) +
               " Cd=" + std::to_string(d) + " NH=" + std::to_string(h) + " NA=" + std::to_string(a);
  }
  return {bad.empty(), bad.empty() ? std::to_string(checked) + " shapes over 3 configs (" + configs + ")" : bad};
}

// Worst |sum - 1| over consecutive groups of `width` entries; negative
// entries count as a violation of 1.
double normalization_gap(const Tensor& w, std::size_t width) {
  double worst = 0.0;
  for (std::size_t g = 0; g < w.numel() / width; ++g) {
    double total = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      const double v = w[g * width + i];
      if (v < 0.0) return 1.0;
      total += v;
    }
    worst = std::max(worst, std::fabs(total - 1.0));
  }
  return worst;
}

Outcome normalization_suite() {
  Rng rng(77);
  double worst = 0.0;
  std::size_t groups = 0, switches = 0;
  bool switch_ok = true;
  std::vector<std::pair<ModelConfig, bool>> cases;
  for (int i = 0; i < 3; ++i) cases.push_back({random_config(rng), i == 2});
  cases.push_back({RunConfig::toy().model, false});
  cases.push_back({RunConfig::toy().model, true});
  std::uint64_t seed = 300;
  for (const auto& [mc, spread] : cases) {
    const Traced t = run_traced(mc, seed++, 2, spread);
    for (const auto& o : t.outputs) {
      for (const LayerTrace& lt : o.layers) {
        auto take = [&](const Tensor& w, std::size_t width) {
          worst = std::max(worst, normalization_gap(w, width));
          groups += w.numel() / width;
        };
        take(lt.self_attention.weights, lt.self_attention.weights.dim(3));
        for (const Tensor& w : lt.hsam.level_weights) take(w, w.dim(3));
        take(lt.hsam.scale_weights, lt.hsam.scale_weights.dim(3));
        take(lt.tam.weights, lt.tam.weights.dim(3));
        // Fine-grained weights: one distribution per head over levels x points.
        take(lt.weights, mc.num_levels * mc.dec_points);
        for (double s : lt.tam.switches.data()) {
          ++switches;
          switch_ok &= s >= 0.0 && s <= 1.0;
        }
      }
    }
  }
  const bool pass = worst <= 1e-6 && switch_ok;
  return {pass, std::to_string(groups) + " softmax groups, max |sum-1| " + fmt("%.1e", worst) + "; " +
                    std::to_string(switches) + " switch entries " + (switch_ok ? "in [0,1]" : "OUT OF [0,1]")};
}

// ---- Oracles ---------------------------------------------------------------

double brute_force_assignment(const Tensor& c) {
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

struct Pred {
  std::int64_t image;
  ScoredTriplet t;
};

double oracle_min_iou(const ScoredTriplet& p, const HoiAnnotation& g) {
  auto inter = [](const Box& a, const Box& b) {
    const double w = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
    const double h = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
    return w > 0 && h > 0 ? w * h : 0.0;
  };
  auto io = [&](const Box& a, const Box& b) { return inter(a, b) / (a.w * a.h + b.w * b.h - inter(a, b)); };
  return std::min(io(p.human, g.human), io(p.object, g.object));
}

// Replays the greedy assignment for the first k ranked predictions.
std::size_t tp_in_prefix(const std::vector<Pred>& ranked, std::size_t k,
                         const std::map<std::int64_t, std::vector<HoiAnnotation>>& gts) {
  std::map<std::int64_t, std::vector<int>> taken;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < k; ++i) {
    auto it = gts.find(ranked[i].image);
    if (it == gts.end()) continue;
    auto& used = taken[ranked[i].image];
    used.resize(it->second.size(), 0);
    int best = -1;
    for (std::size_t g = 0; g < it->second.size(); ++g) {
      const double m = oracle_min_iou(ranked[i].t, it->second[g]);
      if (!used[g] && m > 0.5 && (best < 0 || m > oracle_min_iou(ranked[i].t, it->second[best]))) {
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      used[best] = 1;
      ++tp;
    }
  }
  return tp;
}

// Sum over true-positive ranks of the best precision at that rank or later.
double oracle_ap(std::vector<Pred> ranked, const std::map<std::int64_t, std::vector<HoiAnnotation>>& gts,
                 std::size_t num_gt) {
  if (num_gt == 0) return 0.0;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Pred& a, const Pred& b) {
    if (a.t.score != b.t.score) return a.t.score > b.t.score;
    if (a.image != b.image) return a.image < b.image;
    return a.t.query < b.t.query;
  });
  const std::size_t n = ranked.size();
  std::vector<double> precision(n + 1, 0.0);
  std::vector<std::size_t> tp(n + 1, 0);
  for (std::size_t k = 1; k <= n; ++k) {
    tp[k] = tp_in_prefix(ranked, k, gts);
    precision[k] = static_cast<double>(tp[k]) / static_cast<double>(k);
  }
  double ap = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    if (tp[k] == tp[k - 1]) continue;
    double best = 0.0;
    for (std::size_t j = k; j <= n; ++j) best = std::max(best, precision[j]);
    ap += best / static_cast<double>(num_gt);
  }
  return ap;
}

Box random_box(Rng& rng) {
  return {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)};
}

Box jitter(const Box& b, Rng& rng, double amount) {
  return {b.cx + rng.uniform(-amount, amount) * b.w, b.cy + rng.uniform(-amount, amount) * b.h,
          b.w * (1 + rng.uniform(-amount, amount)), b.h * (1 + rng.uniform(-amount, amount))};
}

HoiAnnotation truth(const Box& h, const Box& o, std::size_t obj, std::size_t verb, std::size_t nv) {
  HoiAnnotation a{h, o, obj, std::vector<std::uint8_t>(nv, 0)};
  a.verbs[verb] = 1;
  return a;
}

Outcome oracle_suite() {
  // Hungarian against exhaustive permutations.
  Rng rng(5);
  std::size_t hungarian_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng.index(6);
    const std::size_t n = 1 + rng.index(m);
    Tensor c({m, n});
    // Half the trials use a coarse grid to force ties.
    for (auto& v : c.data()) v = trial % 2 ? rng.uniform(0, 10) : static_cast<double>(rng.index(8)) * 0.25;
    const Matching got = hungarian_match(c);
    std::vector<bool> seen(m, false);
    bool injective = got.pairs.size() == n;
    double cost = 0.0;
    for (const auto& [p, g] : got.pairs) {
      injective &= !seen[p];
      seen[p] = true;
      cost += c(p, g);
    }
    const double best = brute_force_assignment(c);
    if (!injective || got.cost != best || std::fabs(cost - best) > 1e-12) ++hungarian_bad;
  }

  // Evaluator: every assignment of up to 8 predictions onto up to 4 truths.
  double worst = 0.0;
  std::size_t exhaustive = 0;
  for (std::size_t ng = 0; ng <= 4; ++ng) {
    std::vector<HoiAnnotation> gts;
    for (std::size_t g = 0; g < ng; ++g) gts.push_back(truth(random_box(rng), random_box(rng), 0, 0, 1));
    const std::map<std::int64_t, std::vector<HoiAnnotation>> by_image{{0, gts}};
    for (std::size_t np = 0; np <= 8; ++np) {
      std::size_t total = 1;
      for (std::size_t i = 0; i < np; ++i) total *= ng + 1;
      for (std::size_t code = 0; code < total; ++code) {
        std::vector<ScoredTriplet> ts;
        std::vector<Pred> oracle;
        std::size_t c = code;
        for (std::size_t i = 0; i < np; ++i) {
          const std::size_t target = c % (ng + 1);
          c /= ng + 1;
          ScoredTriplet t{{0.05, 0.05, 0.02, 0.02}, {0.95, 0.95, 0.02, 0.02}, 0, 0, 1.0 - 0.1 * i, i};
          if (target < ng) {
            t.human = jitter(gts[target].human, rng, 0.05);
            t.object = jitter(gts[target].object, rng, 0.05);
          }
          ts.push_back(t);
          oracle.push_back({0, t});
        }
        const EvalReport r = evaluate_role_map({{0, ts}}, {{0, gts}}, {1, 1, {}, Setting::kDefault, false});
        const ClassResult& cr = r.classes[0];
        if (cr.evaluated != (ng > 0 || np > 0)) worst = std::max(worst, 1.0);
        if (cr.evaluated) worst = std::max(worst, std::fabs(cr.ap - oracle_ap(oracle, by_image, ng)));
        ++exhaustive;
      }
    }
  }

  // Evaluator: random multi-image, multi-class cases in both settings.
  const std::size_t no = 2, nv = 2;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ImageTruth> truths;
    std::vector<ImagePredictions> preds;
    const std::size_t images = 1 + rng.index(4);
    for (std::size_t im = 0; im < images; ++im) {
      ImageTruth t{static_cast<std::int64_t>(im), {}};
      const std::size_t ng = rng.index(4);
      for (std::size_t g = 0; g < ng; ++g) {
        HoiAnnotation a = truth(random_box(rng), random_box(rng), rng.index(no), rng.index(nv), nv);
        if (rng.index(3) == 0) std::fill(a.verbs.begin(), a.verbs.end(), 1);
        t.pairs.push_back(a);
      }
      ImagePredictions p{static_cast<std::int64_t>(im), {}};
      const std::size_t npred = rng.index(7);
      for (std::size_t k = 0; k < npred; ++k) {
        ScoredTriplet s{random_box(rng), random_box(rng), rng.index(no), rng.index(nv),
                        static_cast<double>(rng.index(5)) / 4.0, k};
        if (!t.pairs.empty() && rng.index(3)) {
          const auto& src = t.pairs[rng.index(t.pairs.size())];
          s.human = jitter(src.human, rng, 0.25);
          s.object = jitter(src.object, rng, 0.25);
          s.object_class = src.object_class;
        }
        p.triplets.push_back(s);
      }
      truths.push_back(t);
      preds.push_back(p);
    }
    for (Setting setting : {Setting::kDefault, Setting::kKnownObject}) {
      const EvalReport r = evaluate_role_map(preds, truths, {no, nv, {}, setting, false});
      for (std::size_t o = 0; o < no; ++o) {
        for (std::size_t v = 0; v < nv; ++v) {
          std::map<std::int64_t, std::vector<HoiAnnotation>> g;
          std::vector<Pred> ranked;
          std::size_t num_gt = 0;
          for (const auto& t : truths) {
            const bool has_object = std::any_of(t.pairs.begin(), t.pairs.end(),
                                                [&](const HoiAnnotation& a) { return a.object_class == o; });
            if (setting == Setting::kKnownObject && !has_object) continue;
            for (const auto& a : t.pairs) {
              if (a.object_class == o && a.verbs[v]) {
                g[t.image_id].push_back(a);
                ++num_gt;
              }
            }
            for (const auto& pi : preds) {
              if (pi.image_id != t.image_id) continue;
              for (const auto& s : pi.triplets) {
                if (s.object_class == o && s.verb_class == v) ranked.push_back({pi.image_id, s});
              }
            }
          }
          const ClassResult& cr = r.classes[o * nv + v];
          if (cr.evaluated != (num_gt > 0 || !ranked.empty())) worst = std::max(worst, 1.0);
          if (cr.evaluated) worst = std::max(worst, std::fabs(cr.ap - oracle_ap(ranked, g, num_gt)));
        }
      }
    }
  }
  const bool pass = hungarian_bad == 0 && worst <= 1e-9;
  return {pass, "Hungarian 1000/1000 " + std::string(hungarian_bad ? "MISMATCH" : "exact") + "; AP over " +
                    std::to_string(exhaustive) + " exhaustive + 200 random cases, max |diff| " + fmt("%.1e", worst)};
}

// ---- Bilinear sampling ----------------------------------------------------

// Zero-padded bilinear read with pixel centres at (i + 0.5) / size.
double oracle_bilinear(const Tensor& m, double x, double y, std::size_t c) {
  const auto h = static_cast<std::ptrdiff_t>(m.dim(0)), w = static_cast<std::ptrdiff_t>(m.dim(1));
  const std::size_t ch = m.dim(2);
  const double px = x * static_cast<double>(w) - 0.5, py = y * static_cast<double>(h) - 0.5;
  const double fx0 = std::floor(px), fy0 = std::floor(py);
  const double ax = px - fx0, ay = py - fy0;
  const auto x0 = static_cast<std::ptrdiff_t>(fx0), y0 = static_cast<std::ptrdiff_t>(fy0);
  double out = 0.0;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const std::ptrdiff_t xx = x0 + dx, yy = y0 + dy;
      if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
      const double wt = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
      out += wt * m[(static_cast<std::size_t>(yy) * static_cast<std::size_t>(w) + static_cast<std::size_t>(xx)) * ch + c];
    }
  }
  return out;
}

Tensor sample(const Tensor& map, const Tensor& points) {
  Tape t;
  return bilinear_sample(t.constant(map), t.constant(points)).value();
}

Outcome bilinear_suite() {
  Rng rng(9);
  double grid = 0.0, linear = 0.0, padding = 0.0, oracle = 0.0;
  for (const auto& [h, w, c] : {std::tuple{6u, 4u, 3u}, {1u, 1u, 2u}, {5u, 9u, 1u}}) {
    const Tensor m = random_tensor({h, w, c}, rng);
    // Every pixel centre reads that pixel.
    Tensor p({h * w, 2});
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        p[2 * (y * w + x)] = (x + 0.5) / w;
        p[2 * (y * w + x) + 1] = (y + 0.5) / h;
      }
    }
    const Tensor at = sample(m, p);
    for (std::size_t i = 0; i < m.numel(); ++i) grid = std::max(grid, std::fabs(at[i] - m[i]));

    // Linear in the map.
    const Tensor m2 = random_tensor({h, w, c}, rng);
    Tensor mix(m.shape());
    const double alpha = 0.7, beta = -1.3;
    for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = alpha * m[i] + beta * m2[i];
    const Tensor q = random_tensor({64, 2}, rng, -0.3, 1.3);
    const Tensor s1 = sample(m, q), s2 = sample(m2, q), sm = sample(mix, q);
    for (std::size_t i = 0; i < sm.numel(); ++i) linear = std::max(linear, std::fabs(sm[i] - (alpha * s1[i] + beta * s2[i])));

    // Against the independent read, inside and outside the map.
    for (std::size_t i = 0; i < q.dim(0); ++i) {
      for (std::size_t k = 0; k < c; ++k) {
        oracle = std::max(oracle, std::fabs(s1[i * c + k] - oracle_bilinear(m, q[2 * i], q[2 * i + 1], k)));
      }
    }

    // More than one pixel outside reads nothing; half a pixel past an edge
    // centre reads half of that edge pixel.
    Tensor far({4, 2}, {-1.5 / w, 0.5, 1.0 + 1.5 / w, 0.5, 0.5, -1.5 / h, 3.0, 3.0});
    const Tensor outside = sample(m, far);
    for (double v : outside.data()) padding = std::max(padding, std::fabs(v));
    Tensor edge({1, 2}, {0.0, 0.5 / h});
    const Tensor e = sample(m, edge);
    for (std::size_t k = 0; k < c; ++k) padding = std::max(padding, std::fabs(e[k] - 0.5 * m[k]));
  }
  const bool pass = grid <= 1e-12 && linear <= 1e-10 && padding <= 1e-12 && oracle <= 1e-12;
  return {pass, "grid " + fmt("%.1e", grid) + ", linearity " + fmt("%.1e", linear) + ", zero padding " +
                    fmt("%.1e", padding) + ", oracle " + fmt("%.1e", oracle)};
}

// ---- Closed forms -----------------------------------------------------------

Outcome closed_form_suite() {
  std::vector<std::string> failures;
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  Tape t;
  need(hard_sigmoid(t.constant(Tensor::scalar(0.0))).value()[0] == 0.5, "hard_sigmoid(0)");
  const Box u = Box::from_corners(0, 0, 1, 1), v = Box::from_corners(2, 0, 3, 1);
  need(std::fabs(giou(u, v) + 1.0 / 3.0) <= 1e-12, "GIoU disjoint unit squares");
  const Tensor ru = Tensor::matrix(1, 4, {u.cx, u.cy, u.w, u.h}), rv = Tensor::matrix(1, 4, {v.cx, v.cy, v.w, v.h});
  need(std::fabs(giou_rows(t.constant(ru), t.constant(rv)).value()[0] + 1.0 / 3.0) <= 1e-12, "GIoU rows");
  const PixelBox b{3, 4, 10, 6};
  need(compute_ar({b, b}) == 1.0, "AR coincident");
  need(compute_ar({{0, 0, 2, 2}, {2, 2, 2, 2}}) == 0.0625, "AR 0.0625");
  need(compute_lr({b, b}) == 2.0, "LR coincident");
  const double focal = sigmoid_focal_loss(t.leaf(Tensor::scalar(0.0)), Tensor::scalar(1.0), 0.25, 2.0).value()[0];
  need(std::fabs(focal - 0.25 * 0.25 * std::log(2.0)) <= 1e-6 && std::fabs(focal - 0.04332) <= 1e-5, "focal 0.04332");
  const double saturated = sigmoid_focal_loss(t.leaf(Tensor::scalar(40.0)), Tensor::scalar(1.0), 0.25, 2.0).value()[0];
  need(saturated <= 1e-6, "focal saturated");
  const double modified = modified_focal_loss(t.leaf(Tensor::scalar(0.0)), Tensor::scalar(1.0)).value()[0];
  need(std::fabs(modified - 0.25 * std::log(2.0)) <= 1e-6 && std::fabs(modified - 0.17329) <= 1e-5,
       "modified focal 0.17329");
  need(modified_focal_loss(t.leaf(Tensor::scalar(-40.0)), Tensor::scalar(0.0)).value()[0] <= 1e-6,
       "modified focal negative limit");
  Rng rng(8);
  const Tensor x = random_tensor({5, 3}, rng, -4, 4);
  Tensor y({5, 3});
  for (auto& e : y.data()) e = static_cast<double>(rng.index(2));
  double bce = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-x[i]));
    bce -= y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p);
  }
  need(std::fabs(sigmoid_focal_loss(t.leaf(x), y, 0.5, 0.0).value()[0] - 0.5 * bce / 15.0) <= 1e-6,
       "focal gamma 0 = half cross-entropy");
  const Tensor ones({5, 3}, 1.0);
  need(std::fabs(modified_focal_loss(t.leaf(x), ones).value()[0] -
                 sigmoid_focal_loss(t.leaf(x), ones, 1.0, 2.0).value()[0]) <= 1e-6,
       "modified = alpha 1 on positives");
  std::string detail = failures.empty() ? "12 closed forms hold" : "failed:";
  for (const auto& f : failures) detail += " " + f + ";";
  return {failures.empty(), detail};
}

// ---- Degenerate equivalences ----------------------------------------------

void fill(ParamStore& s, const std::string& name, double v) {
  for (auto& e : s.at(name).data()) e = v;
}

Outcome degenerate_suite() {
  RunConfig rc = RunConfig::toy();
  rc.seed = 11;
  const Model base = create_model(rc);
  const ModelConfig& mc = rc.model;
  Rng rng(12);
  const Tensor image = random_tensor({mc.image_size, mc.image_size, 3}, rng, 0.0, 1.0);

  auto run = [&](const std::function<void(ParamStore&)>& edit) {
    ParamStore s = base.params;
    Rng spread(13);
    spread_parameters(s, spread);
    edit(s);
    Tape t;
    Bound p(t, s);
    return capture(forward(p, image, mc, MergeMode::kFull, true));
  };

  // Zero offsets put every fine-grained anchor on its initial anchor.
  const Pass a = run([&](ParamStore& s) {
    for (std::size_t l = 0; l < mc.dec_layers; ++l) {
      fill(s, "dec.layer" + std::to_string(l) + ".offsets.w", 0.0);
      fill(s, "dec.layer" + std::to_string(l) + ".offsets.b", 0.0);
    }
  });
  double anchor_gap = 0.0;
  const Tensor& init = a.anchors;
  for (const LayerTrace& lt : a.layers) {
    const std::size_t per_query = lt.anchors.numel() / (2 * mc.num_queries);
    for (std::size_t q = 0; q < mc.num_queries; ++q) {
      for (std::size_t j = 0; j < per_query; ++j) {
        for (std::size_t d = 0; d < 2; ++d) {
          anchor_gap = std::max(anchor_gap, std::fabs(lt.anchors[(q * per_query + j) * 2 + d] - init(q, d)));
        }
      }
    }
  }

  // Switch identically zero leaves the updated content unchanged.
  const Pass b = run([&](ParamStore& s) {
    for (std::size_t l = 0; l < mc.dec_layers; ++l) {
      fill(s, "dec.layer" + std::to_string(l) + ".tam.mlp2.w", 0.0);
      fill(s, "dec.layer" + std::to_string(l) + ".tam.mlp2.b", -10.0);
    }
  });
  double switch_gap = 0.0;
  bool all_zero = true;
  for (const LayerTrace& lt : b.layers) {
    for (double s : lt.tam.switches.data()) all_zero &= s == 0.0;
    for (std::size_t i = 0; i < lt.fused.numel(); ++i) {
      switch_gap = std::max(switch_gap, std::fabs(lt.fused[i] - lt.content_u[i]));
    }
  }

  // Zero box-head output centres every box on its anchor.
  const Pass c = run([&](ParamStore& s) {
    for (const char* n : {"head.human3.w", "head.human3.b", "head.object3.w", "head.object3.b"}) fill(s, n, 0.0);
  });
  double box_gap = 0.0;
  for (const Tensor* boxes : {&c.human_boxes, &c.object_boxes}) {
    for (std::size_t q = 0; q < mc.num_queries; ++q) {
      for (std::size_t d = 0; d < 2; ++d) box_gap = std::max(box_gap, std::fabs((*boxes)(q, d) - c.anchors(q, d)));
    }
  }
  const bool pass = anchor_gap <= 1e-9 && all_zero && switch_gap <= 1e-9 && box_gap <= 1e-9;
  return {pass, "anchors " + fmt("%.1e", anchor_gap) + ", U-C_u " + fmt("%.1e", switch_gap) +
                    (all_zero ? "" : " (switch not zero)") + ", box centres " + fmt("%.1e", box_gap)};
}

// ---- Command-line runs ----------------------------------------------------

struct Cli {
  std::string exe;
  fs::path log;

  int run(const std::string& args) const {
    const std::string cmd = "'" + exe + "' " + args + " >> '" + log.string() + "' 2>&1";
    const int rc = std::system(cmd.c_str());
    return rc;
  }
};

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  return json::parse(in);
}

void require(int rc, const std::string& what) {
  if (rc != 0) throw std::runtime_error(what + " exited with " + std::to_string(rc));
}

Outcome training_suite(const Cli& cli, const fs::path& work) {
  const fs::path dir = work / "training";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path corpus = dir / "corpus";
  require(cli.run("synth --seed 7 --out " + q(corpus)), "synth");

  // The untrained checkpoint is the initialization every training run starts from.
  RunConfig rc = RunConfig::toy();
  rc.seed = 7;
  save_checkpoint((dir / "untrained.ckpt").string(), create_model(rc));

  auto eval = [&](const fs::path& ckpt, const std::string& name) {
    require(cli.run("--threads 1 eval --checkpoint " + q(ckpt) + " --annotations " + q(corpus / "test.json") +
                    " --setting default --out " + q(dir / ("eval_" + name))),
            "eval " + name);
    return read_json(dir / ("eval_" + name) / "eval_default.json")["mAP"]["full"].get<double>();
  };
  struct Run {
    double initial, final_loss, map, secs;
  };
  auto train = [&](const std::string& strategy) {
    const auto t0 = Clock::now();
    require(cli.run("--threads 1 train --seed 7 --data " + q(corpus) + " --strategy " + strategy + " --out " +
                    q(dir / strategy)),
            "train " + strategy);
    const double secs = seconds_since(t0);
    const json s = read_json(dir / strategy / "train_summary.json");
    const std::string last = s["checkpoints"].back().get<std::string>();
    return Run{s["initial_loss"].get<double>(), s["final_loss"].get<double>(), eval(dir / strategy / last, strategy),
               secs};
  };
  const double untrained = eval(dir / "untrained.ckpt", "untrained");
  const Run sw = train("stagewise");
  const Run e2e = train("end2end");

  auto line = [&](const char* name, const Run& r) {
    std::printf("  %-10s loss %.4f -> %.4f (%.1f%% lower)  held-out Default mAP %.4f  %.0f s\n", name, r.initial,
                r.final_loss, 100.0 * (1.0 - r.final_loss / r.initial), r.map, r.secs);
  };
  std::printf("  untrained  held-out Default mAP %.4f\n", untrained);
  line("stagewise", sw);
  line("end2end", e2e);
  std::fflush(stdout);

  const double reduction = 1.0 - sw.final_loss / sw.initial;
  const bool pass = reduction >= 0.5 && sw.map > untrained && sw.map >= 5.0 * untrained && sw.secs < 1200.0;
  return {pass, "stage-wise loss -" + fmt("%.1f", 100.0 * reduction) + "%, mAP " + fmt("%.4f", sw.map) +
                    " vs untrained " + fmt("%.4f", untrained) + ", " + fmt("%.0f", sw.secs) +
                    " s; end-to-end mAP " + fmt("%.4f", e2e.map)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return files;
}

void run_every_command(const Cli& cli, const fs::path& root, int threads) {
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cfg = "--preset tiny --seed 3 --set train_scenes=8 --set test_scenes=4 --set stage_epochs=2,1,1";
  const std::string th = "--threads " + std::to_string(threads) + " ";
  const fs::path corpus = root / "corpus";
  require(cli.run("synth " + cfg + " --out " + q(corpus)), "synth");
  require(cli.run(th + "train " + cfg + " --data " + q(corpus) + " --strategy stagewise --out " + q(root / "sw")),
          "train stagewise");
  require(cli.run(th + "train " + cfg + " --data " + q(corpus) + " --strategy end2end --out " + q(root / "e2e")),
          "train end2end");
  const fs::path ckpt = root / "sw" / "stage3.ckpt";
  require(cli.run(th + "eval --checkpoint " + q(ckpt) + " --annotations " + q(corpus / "test.json") +
                  " --setting default --out " + q(root / "eval_default")),
          "eval default");
  require(cli.run(th + "eval --checkpoint " + q(ckpt) + " --annotations " + q(corpus / "test.json") +
                  " --setting known --rare-from " + q(corpus / "train.json") + " --out " + q(root / "eval_known")),
          "eval known");
  require(cli.run("metrics --annotations " + q(corpus / "train.json") + " --metric ar --per-instance --out " +
                  q(root / "metrics")),
          "metrics ar");
  require(cli.run("metrics --annotations " + q(corpus / "train.json") + " --metric lr --out " + q(root / "metrics")),
          "metrics lr");
  require(cli.run("split --annotations " + q(corpus / "train.json") + " --select lr:0-4 --min-instances 0 --out " +
                  q(root / "split")),
          "split");
  fs::path image;
  for (const auto& e : fs::directory_iterator(corpus / "images")) {
    if (image.empty() || e.path() < image) image = e.path();
  }
  require(cli.run("dump-anchors --checkpoint " + q(ckpt) + " --image " + q(image) + " --out " +
                  q(root / "anchors.json")),
          "dump-anchors");
  require(cli.run("gradcheck --json --out " + q(root / "gradcheck") + " > /dev/null"), "gradcheck");
}

Outcome determinism_suite(const Cli& cli, const fs::path& work) {
  const fs::path a = work / "determinism" / "a", b = work / "determinism" / "b";
  run_every_command(cli, a, 1);
  run_every_command(cli, b, 3);
  const auto ta = tree(a), tb = tree(b);
  std::size_t same = 0;
  std::string diff;
  for (const auto& [name, bytes] : ta) {
    auto it = tb.find(name);
    if (it == tb.end()) {
      if (diff.empty()) diff = name + " missing from the re-run";
    } else if (it->second != bytes) {
      if (diff.empty()) diff = name + " differs";
    } else {
      ++same;
    }
  }
  if (diff.empty() && ta.size() != tb.size()) diff = "re-run wrote extra files";
  return {diff.empty() && same > 0,
          diff.empty() ? std::to_string(same) + " files from 10 commands bit-identical (threads 1 vs 3)" : diff};
}

}  // namespace
}  // namespace fga

int main(int argc, char** argv) {
  using namespace fga;
  if (argc < 3) {
    std::fprintf(stderr, "usage: acceptance <fgahoi-cli> <work-dir>\n");
    return 2;
  }
  const fs::path work = fs::absolute(argv[2]);
  fs::create_directories(work);
  const Cli cli{fs::absolute(argv[1]).string(), work / "commands.log"};
  fs::remove(cli.log);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"shape suite", shape_suite},
      {"normalization suite", normalization_suite},
      {"oracle suites", oracle_suite},
      {"bilinear suite", bilinear_suite},
      {"closed-form values", closed_form_suite},
      {"degenerate equivalences", degenerate_suite},
      {"desk-scale training", [&] { return training_suite(cli, work); }},
      {"determinism", [&] { return determinism_suite(cli, work); }},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[PRIMARY] %s: %s (%s)\n", name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu of %zu primary criteria passed\n", criteria.size() - failed, criteria.size());
  return failed ? 1 : 0;
}
