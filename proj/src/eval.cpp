// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fga {

using nlohmann::json;

namespace {

constexpr double kPairIou = 0.5;

double min_iou(const ScoredTriplet& a, const Box& h, const Box& o) { return std::min(iou(a.human, h), iou(a.object, o)); }

Box row_box(const Tensor& t, std::size_t r) { return {t(r, 0), t(r, 1), t(r, 2), t(r, 3)}; }

}  // namespace

std::vector<ScoredTriplet> compose_triplets(const QueryScores& q, std::size_t top_k, double delta) {
  const std::size_t nq = q.object_probs.rows();
  const std::size_t nv = q.verb_probs.cols();
  std::vector<ScoredTriplet> all;
  std::vector<double> obj_conf;
  for (std::size_t i = 0; i < nq; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < q.object_probs.cols(); ++k) {
      if (q.object_probs(i, k) > q.object_probs(i, best)) best = k;
    }
    const double co = q.object_probs(i, best);
    for (std::size_t v = 0; v < nv; ++v) {
      all.push_back({row_box(q.human_boxes, i), row_box(q.object_boxes, i), best, v, q.verb_probs(i, v) * co, i});
      obj_conf.push_back(co);
    }
  }
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (obj_conf[a] != obj_conf[b]) return obj_conf[a] > obj_conf[b];
    return all[a].score > all[b].score;
  });
  if (order.size() > top_k) order.resize(top_k);
  std::vector<ScoredTriplet> kept;
  for (auto i : order) kept.push_back(all[i]);
  std::stable_sort(kept.begin(), kept.end(), [](const ScoredTriplet& a, const ScoredTriplet& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.query != b.query) return a.query < b.query;
    return a.verb_class < b.verb_class;
  });
  std::vector<ScoredTriplet> out;
  for (const auto& t : kept) {
    bool duplicate = false;
    for (const auto& u : out) {
      if (u.object_class == t.object_class && u.verb_class == t.verb_class && min_iou(t, u.human, u.object) > delta) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) out.push_back(t);
  }
  return out;
}

bool pair_is_tp(const ScoredTriplet& pred, const HoiAnnotation& gt) { return min_iou(pred, gt.human, gt.object) > kPairIou; }

double ap_from_ranked(const std::vector<bool>& tp, std::size_t num_gt, bool eleven_point) {
  if (num_gt == 0) return 0.0;
  std::vector<double> prec, rec;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    hits += tp[i];
    prec.push_back(static_cast<double>(hits) / static_cast<double>(i + 1));
    rec.push_back(static_cast<double>(hits) / static_cast<double>(num_gt));
  }
  if (eleven_point) {
    double total = 0.0;
    for (int t = 0; t <= 10; ++t) {
      double best = 0.0;
      for (std::size_t i = 0; i < prec.size(); ++i) {
        if (rec[i] >= t / 10.0 - 1e-12) best = std::max(best, prec[i]);
      }
      total += best;
    }
    return total / 11.0;
  }
  // Precision envelope from the right, then sum over recall steps.
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0, last = 0.0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    if (rec[i] > last) {
      ap += (rec[i] - last) * prec[i];
      last = rec[i];
    }
  }
  return ap;
}

Setting parse_setting(const std::string& name) {
  if (name == "default") return Setting::kDefault;
  if (name == "known" || name == "known-object") return Setting::kKnownObject;
  throw Error(ErrorKind::kConfig, "unknown setting '" + name + "' (expected default or known)");
}

const char* setting_name(Setting s) { return s == Setting::kDefault ? "default" : "known-object"; }

std::vector<bool> rare_classes(const std::vector<ImageTruth>& train, std::size_t num_objects, std::size_t num_verbs,
                               std::size_t threshold) {
  std::vector<std::size_t> counts(num_objects * num_verbs, 0);
  for (const auto& im : train) {
    for (const auto& p : im.pairs) {
      if (p.object_class >= num_objects || p.verbs.size() != num_verbs) {
        throw Error(ErrorKind::kData, "training truth class out of range in image " + std::to_string(im.image_id));
      }
      for (std::size_t v = 0; v < num_verbs; ++v) counts[p.object_class * num_verbs + v] += p.verbs[v] != 0;
    }
  }
  std::vector<bool> rare(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) rare[i] = counts[i] < threshold;
  return rare;
}

EvalReport evaluate_role_map(const std::vector<ImagePredictions>& preds, const std::vector<ImageTruth>& truths,
                             const EvalOptions& opt) {
  const std::size_t no = opt.num_objects, nv = opt.num_verbs;
  if (no == 0 || nv == 0) throw Error(ErrorKind::kConfig, "evaluation needs positive class counts");
  if (!opt.rare.empty() && opt.rare.size() != no * nv) throw Error(ErrorKind::kConfig, "rare mask has wrong length");

  std::map<std::int64_t, const ImageTruth*> gt_of;
  for (const auto& im : truths) {
    if (!gt_of.emplace(im.image_id, &im).second) {
      throw Error(ErrorKind::kData, "duplicate truth image " + std::to_string(im.image_id));
    }
    for (const auto& p : im.pairs) {
      if (p.object_class >= no || p.verbs.size() != nv) {
        throw Error(ErrorKind::kData, "truth class out of range in image " + std::to_string(im.image_id));
      }
    }
  }
  std::set<std::int64_t> all_images;
  for (const auto& im : truths) all_images.insert(im.image_id);
  for (const auto& im : preds) {
    all_images.insert(im.image_id);
    for (const auto& t : im.triplets) {
      if (t.object_class >= no || t.verb_class >= nv) {
        throw Error(ErrorKind::kData, "predicted class out of range in image " + std::to_string(im.image_id));
      }
    }
  }

  // Images that contain each object category, for the known-object setting.
  std::vector<std::set<std::int64_t>> with_object(no);
  for (const auto& im : truths) {
    for (const auto& p : im.pairs) with_object[p.object_class].insert(im.image_id);
  }

  struct Ranked {
    double score;
    std::int64_t image;
    std::size_t query;
    const ScoredTriplet* t;
  };

  EvalReport report;
  report.setting = opt.setting;
  for (std::size_t o = 0; o < no; ++o) {
    const std::set<std::int64_t>& images = opt.setting == Setting::kDefault ? all_images : with_object[o];
    for (std::size_t v = 0; v < nv; ++v) {
      ClassResult cr;
      cr.object = o;
      cr.verb = v;
      cr.rare = !opt.rare.empty() && opt.rare[o * nv + v];
      cr.num_images = images.size();
      std::map<std::int64_t, std::vector<const HoiAnnotation*>> gts;
      for (auto id : images) {
        auto it = gt_of.find(id);
        if (it == gt_of.end()) continue;
        for (const auto& p : it->second->pairs) {
          if (p.object_class == o && p.verbs[v]) gts[id].push_back(&p);
        }
        cr.num_gt += gts[id].size();
      }
      std::vector<Ranked> ranked;
      for (const auto& im : preds) {
        if (!images.count(im.image_id)) continue;
        for (const auto& t : im.triplets) {
          if (t.object_class == o && t.verb_class == v) ranked.push_back({t.score, im.image_id, t.query, &t});
        }
      }
      std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        return a.query < b.query;
      });
      cr.num_pred = ranked.size();
      if (cr.num_gt == 0 && ranked.empty()) {
        report.classes.push_back(cr);
        continue;
      }
      cr.evaluated = true;
      std::map<std::int64_t, std::vector<bool>> used;
      for (const auto& [id, list] : gts) used[id].assign(list.size(), false);
      std::vector<bool> flags;
      for (const auto& r : ranked) {
        bool hit = false;
        auto it = gts.find(r.image);
        if (it != gts.end()) {
          std::size_t best = it->second.size();
          double best_iou = -1.0;
          for (std::size_t g = 0; g < it->second.size(); ++g) {
            if (used[r.image][g] || !pair_is_tp(*r.t, *it->second[g])) continue;
            const double m = min_iou(*r.t, it->second[g]->human, it->second[g]->object);
            if (m > best_iou) best_iou = m, best = g;
          }
          if (best < it->second.size()) {
            used[r.image][best] = true;
            hit = true;
          }
        }
        flags.push_back(hit);
      }
      cr.ap = ap_from_ranked(flags, cr.num_gt, opt.eleven_point);
      report.classes.push_back(cr);
    }
  }
  for (const auto& c : report.classes) {
    if (!c.evaluated) continue;
    report.full += c.ap;
    ++report.num_full;
    if (c.rare) {
      report.rare += c.ap;
      ++report.num_rare;
    } else {
      report.non_rare += c.ap;
      ++report.num_non_rare;
    }
  }
  if (report.num_full) report.full /= static_cast<double>(report.num_full);
  if (report.num_rare) report.rare /= static_cast<double>(report.num_rare);
  if (report.num_non_rare) report.non_rare /= static_cast<double>(report.num_non_rare);
  return report;
}

std::string EvalReport::to_json() const {
  json classes_j = json::array();
  for (const auto& c : classes) {
    classes_j.push_back({{"object", c.object},
                         {"verb", c.verb},
                         {"ap", c.ap},
                         {"num_gt", c.num_gt},
                         {"num_pred", c.num_pred},
                         {"num_images", c.num_images},
                         {"rare", c.rare},
                         {"evaluated", c.evaluated}});
  }
  json j{{"setting", setting_name(setting)},
         {"mAP", {{"full", full}, {"rare", rare}, {"non_rare", non_rare}}},
         {"num_classes", {{"full", num_full}, {"rare", num_rare}, {"non_rare", num_non_rare}}},
         {"classes", classes_j}};
  return j.dump(2) + "\n";
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  char line[160];
  os << "setting: " << setting_name(setting) << "\n";
  os << "object  verb  set       num_gt  num_pred  AP\n";
  for (const auto& c : classes) {
    if (!c.evaluated) {
      std::snprintf(line, sizeof line, "%6zu  %4zu  %-8s  %6zu  %8zu  -\n", c.object, c.verb, c.rare ? "rare" : "non-rare",
                    c.num_gt, c.num_pred);
    } else {
      std::snprintf(line, sizeof line, "%6zu  %4zu  %-8s  %6zu  %8zu  %.4f\n", c.object, c.verb,
                    c.rare ? "rare" : "non-rare", c.num_gt, c.num_pred, c.ap);
    }
    os << line;
  }
  std::snprintf(line, sizeof line, "mAP full %.4f (%zu)  rare %.4f (%zu)  non-rare %.4f (%zu)\n", full, num_full, rare,
                num_rare, non_rare, num_non_rare);
  os << line;
  return os.str();
}

std::string predictions_to_json(const std::vector<ImagePredictions>& preds) {
  auto box = [](const Box& b) { return json::array({b.cx, b.cy, b.w, b.h}); };
  json out = json::array();
  for (const auto& im : preds) {
    json ts = json::array();
    for (const auto& t : im.triplets) {
      ts.push_back({{"hbox", box(t.human)},
                    {"obox", box(t.object)},
                    {"object", t.object_class},
                    {"verb", t.verb_class},
                    {"score", t.score},
                    {"query", t.query}});
    }
    out.push_back({{"image_id", im.image_id}, {"triplets", ts}});
  }
  return out.dump(1) + "\n";
}

std::vector<ImagePredictions> parse_predictions(const std::string& text) {
  std::vector<ImagePredictions> out;
  try {
    const json doc = json::parse(text);
    auto box = [](const json& j) {
      if (!j.is_array() || j.size() != 4) throw std::invalid_argument("box must be [cx, cy, w, h]");
      return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    };
    for (const json& im : doc) {
      ImagePredictions p;
      p.image_id = im.at("image_id").get<std::int64_t>();
      std::size_t q = 0;
      for (const json& t : im.at("triplets")) {
        ScoredTriplet s{box(t.at("hbox")), box(t.at("obox")), t.at("object").get<std::size_t>(),
                        t.at("verb").get<std::size_t>(), t.at("score").get<double>(), q++};
        if (t.contains("query")) s.query = t["query"].get<std::size_t>();
        p.triplets.push_back(s);
      }
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("prediction JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorKind::kParse, std::string("prediction JSON: ") + e.what());
  }
  return out;
}

}  // namespace fga
