// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fga {

using nlohmann::json;

double PixelBox::diagonal() const { return std::sqrt(w * w + h * h); }

PixelBox PairGeometry::hoi() const {
  const double x0 = std::min(human.x, object.x), y0 = std::min(human.y, object.y);
  const double x1 = std::max(human.x + human.w, object.x + object.w);
  const double y1 = std::max(human.y + human.h, object.y + object.h);
  return {x0, y0, x1 - x0, y1 - y0};
}

double compute_ar(const PairGeometry& g) {
  if (!(g.human.area() > 0.0) || !(g.object.area() > 0.0)) {
    throw Error(ErrorKind::kContract, "compute_ar: zero-area box");
  }
  const double hoi = g.hoi().area();
  return g.human.area() * g.object.area() / (hoi * hoi);
}

double compute_lr(const PairGeometry& g) {
  const double l = g.hoi().diagonal();
  if (!(l > 0.0)) throw Error(ErrorKind::kContract, "compute_lr: zero-size enclosing box");
  return (g.human.diagonal() + g.object.diagonal()) / l;
}

Metric parse_metric(const std::string& name) {
  if (name == "ar" || name == "AR") return Metric::kAr;
  if (name == "lr" || name == "LR") return Metric::kLr;
  throw Error(ErrorKind::kConfig, "unknown metric '" + name + "' (expected ar or lr)");
}

const char* metric_name(Metric m) { return m == Metric::kAr ? "ar" : "lr"; }

std::vector<double> default_edges(Metric m) {
  const double top = m == Metric::kAr ? 1.0 : 2.0;
  std::vector<double> e(11);
  for (std::size_t i = 0; i <= 10; ++i) e[i] = top * static_cast<double>(i) / 10.0;
  return e;
}

std::vector<double> parse_edges(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::kConfig, "bad edge value '" + item + "'");
    }
  }
  return out;
}

namespace {

void check_edges(const std::vector<double>& edges) {
  if (edges.size() != 11) {
    throw Error(ErrorKind::kConfig, "need 11 interval edges, got " + std::to_string(edges.size()));
  }
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (!std::isfinite(edges[i])) throw Error(ErrorKind::kConfig, "interval edges must be finite");
    if (i && !(edges[i] > edges[i - 1])) throw Error(ErrorKind::kConfig, "interval edges must be strictly increasing");
  }
}

}  // namespace

std::size_t bin_index(double v, const std::vector<double>& edges) {
  const auto it = std::upper_bound(edges.begin() + 1, edges.end() - 1, v);
  return static_cast<std::size_t>(it - (edges.begin() + 1));
}

DifficultyHistogram bin_intervals(const std::vector<double>& values, const std::vector<double>& edges, Metric metric) {
  check_edges(edges);
  DifficultyHistogram h{metric, edges, std::vector<std::size_t>(10, 0)};
  for (double v : values) ++h.counts[bin_index(v, edges)];
  return h;
}

std::string DifficultyHistogram::to_json() const {
  json j;
  j["metric"] = metric_name(metric);
  j["edges"] = edges;
  j["counts"] = counts;
  std::size_t total = 0;
  for (auto c : counts) total += c;
  j["total"] = total;
  return j.dump(2) + "\n";
}

std::string DifficultyHistogram::to_csv() const {
  std::ostringstream os;
  os << "bin,count\n";
  for (std::size_t i = 0; i < counts.size(); ++i) os << i << ',' << counts[i] << '\n';
  return os.str();
}

std::size_t AnnotationSet::num_pairs() const {
  std::size_t n = 0;
  for (const auto& im : images) n += im.pairs.size();
  return n;
}

void AnnotationSet::validate() const {
  if (num_objects == 0 || num_verbs == 0) throw Error(ErrorKind::kParse, "meta.num_o and meta.num_v must be positive");
  std::set<std::int64_t> ids;
  constexpr double kTol = 1e-9;
  for (const auto& im : images) {
    const std::string where = "image " + std::to_string(im.id);
    if (!ids.insert(im.id).second) throw Error(ErrorKind::kParse, where + ": duplicate id");
    if (im.width == 0 || im.height == 0) throw Error(ErrorKind::kParse, where + ": zero width or height");
    for (std::size_t k = 0; k < im.pairs.size(); ++k) {
      const PairRecord& p = im.pairs[k];
      const std::string at = where + ", pair " + std::to_string(k);
      for (const PixelBox* b : {&p.human, &p.object}) {
        if (!std::isfinite(b->x) || !std::isfinite(b->y) || !(b->w > 0.0) || !(b->h > 0.0) || !std::isfinite(b->w) ||
            !std::isfinite(b->h)) {
          throw Error(ErrorKind::kParse, at + ": box needs finite position and positive size");
        }
        if (b->x < -kTol || b->y < -kTol || b->x + b->w > static_cast<double>(im.width) + kTol ||
            b->y + b->h > static_cast<double>(im.height) + kTol) {
          throw Error(ErrorKind::kParse, at + ": box outside image bounds");
        }
      }
      if (p.object_class >= num_objects) throw Error(ErrorKind::kParse, at + ": object class out of range");
      if (p.verbs.size() != num_verbs) throw Error(ErrorKind::kParse, at + ": verb vector length != num_v");
      bool any = false;
      for (auto v : p.verbs) {
        if (v > 1) throw Error(ErrorKind::kParse, at + ": verb entries must be 0 or 1");
        any = any || v;
      }
      if (!any) throw Error(ErrorKind::kParse, at + ": verb vector has no set bit");
    }
  }
}

namespace {

PixelBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("box must be [x, y, w, h]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json box_to_json(const PixelBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

}  // namespace

AnnotationSet parse_annotations(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("annotation JSON: ") + e.what());
  }
  AnnotationSet set;
  try {
    const json& meta = doc.at("meta");
    set.num_objects = meta.at("num_o").get<std::size_t>();
    set.num_verbs = meta.at("num_v").get<std::size_t>();
    if (meta.contains("class_names")) set.class_names = meta["class_names"].get<std::vector<std::string>>();
  } catch (const std::exception& e) {
    throw Error(ErrorKind::kParse, std::string("annotation meta: ") + e.what());
  }
  const json& images = doc.contains("images") ? doc["images"] : json::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const json& im = images[i];
    ImageRecord rec;
    std::string where = "image #" + std::to_string(i);
    try {
      rec.id = im.at("id").get<std::int64_t>();
      where = "image " + std::to_string(rec.id);
      rec.width = im.at("width").get<std::size_t>();
      rec.height = im.at("height").get<std::size_t>();
      if (im.contains("file")) rec.file = im["file"].get<std::string>();
      for (const json& p : im.at("pairs")) {
        PairRecord pr;
        pr.human = box_from_json(p.at("hbox"));
        pr.object = box_from_json(p.at("obox"));
        pr.object_class = p.at("object").get<std::size_t>();
        for (const json& v : p.at("verbs")) pr.verbs.push_back(static_cast<std::uint8_t>(v.get<int>() != 0 ? 1 : 0));
        for (const json& v : p.at("verbs")) {
          if (v.get<int>() != 0 && v.get<int>() != 1) throw std::invalid_argument("verb entries must be 0 or 1");
        }
        rec.pairs.push_back(std::move(pr));
      }
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kParse, where + ": " + e.what());
    }
    set.images.push_back(std::move(rec));
  }
  set.validate();
  return set;
}

std::string annotations_to_json(const AnnotationSet& set) {
  json images = json::array();
  for (const auto& im : set.images) {
    json pairs = json::array();
    for (const auto& p : im.pairs) {
      json verbs = json::array();
      for (auto v : p.verbs) verbs.push_back(static_cast<int>(v));
      pairs.push_back({{"hbox", box_to_json(p.human)},
                       {"obox", box_to_json(p.object)},
                       {"object", p.object_class},
                       {"verbs", verbs}});
    }
    json j{{"id", im.id}, {"width", im.width}, {"height", im.height}, {"pairs", pairs}};
    if (!im.file.empty()) j["file"] = im.file;
    images.push_back(std::move(j));
  }
  json meta{{"num_o", set.num_objects}, {"num_v", set.num_verbs}};
  if (!set.class_names.empty()) meta["class_names"] = set.class_names;
  return json{{"images", images}, {"meta", meta}}.dump(1) + "\n";
}

AnnotationSet load_annotations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_annotations(ss.str());
}

void save_annotations(const std::string& path, const AnnotationSet& set) {
  set.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << annotations_to_json(set);
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path);
}

std::vector<HoiAnnotation> normalized_pairs(const ImageRecord& image) {
  const double w = static_cast<double>(image.width), h = static_cast<double>(image.height);
  auto norm = [&](const PixelBox& b) { return Box{(b.x + 0.5 * b.w) / w, (b.y + 0.5 * b.h) / h, b.w / w, b.h / h}; };
  std::vector<HoiAnnotation> out;
  for (const auto& p : image.pairs) out.push_back({norm(p.human), norm(p.object), p.object_class, p.verbs});
  return out;
}

std::vector<double> metric_values(const AnnotationSet& set, Metric m) {
  std::vector<double> out;
  for (const auto& im : set.images) {
    for (const auto& p : im.pairs) out.push_back(m == Metric::kAr ? compute_ar(p.geometry()) : compute_lr(p.geometry()));
  }
  return out;
}

SplitSelector parse_selector(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw Error(ErrorKind::kConfig, "selector must look like ar:0 or lr:0-6");
  SplitSelector s;
  s.metric = parse_metric(text.substr(0, colon));
  std::stringstream ss(text.substr(colon + 1));
  std::string item;
  std::set<std::size_t> bins;
  auto number = [&](const std::string& t) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != t.size() || v > 9) throw Error(ErrorKind::kConfig, "bad interval '" + t + "'");
    return static_cast<std::size_t>(v);
  };
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      bins.insert(number(item));
    } else {
      const std::size_t a = number(item.substr(0, dash)), b = number(item.substr(dash + 1));
      if (a > b) throw Error(ErrorKind::kConfig, "bad interval range '" + item + "'");
      for (std::size_t i = a; i <= b; ++i) bins.insert(i);
    }
  }
  s.intervals.assign(bins.begin(), bins.end());
  return s;
}

std::string Split::to_json() const {
  json train_ids = json::array(), test_ids = json::array(), drop = json::array();
  for (const auto& im : train.images) train_ids.push_back(im.id);
  for (const auto& im : test.images) test_ids.push_back(im.id);
  for (const auto& [o, v] : dropped) drop.push_back({{"object", o}, {"verb", v}});
  return json{{"train", train_ids}, {"test", test_ids}, {"dropped_classes", drop}}.dump(2) + "\n";
}

Split generate_split(const AnnotationSet& set, const SplitSelector& selector) {
  if (selector.intervals.empty()) throw Error(ErrorKind::kConfig, "split selector names no test intervals");
  const std::vector<double> edges = selector.edges.empty() ? default_edges(selector.metric) : selector.edges;
  check_edges(edges);
  const std::set<std::size_t> chosen(selector.intervals.begin(), selector.intervals.end());
  for (auto b : chosen) {
    if (b > 9) throw Error(ErrorKind::kConfig, "interval index out of range");
  }

  std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
  for (const auto& im : set.images) {
    for (const auto& p : im.pairs) {
      for (std::size_t v = 0; v < p.verbs.size(); ++v) {
        if (p.verbs[v]) ++counts[{p.object_class, v}];
      }
    }
  }
  Split out;
  for (const auto& [cls, n] : counts) {
    if (n < selector.min_instances) out.dropped.push_back(cls);
  }
  const std::set<std::pair<std::size_t, std::size_t>> dropped(out.dropped.begin(), out.dropped.end());

  out.train.num_objects = out.test.num_objects = set.num_objects;
  out.train.num_verbs = out.test.num_verbs = set.num_verbs;
  out.train.class_names = out.test.class_names = set.class_names;
  for (const auto& im : set.images) {
    ImageRecord kept = im;
    kept.pairs.clear();
    for (PairRecord p : im.pairs) {
      bool any = false;
      for (std::size_t v = 0; v < p.verbs.size(); ++v) {
        if (p.verbs[v] && dropped.count({p.object_class, v})) p.verbs[v] = 0;
        any = any || p.verbs[v];
      }
      if (any) kept.pairs.push_back(std::move(p));
    }
    if (kept.pairs.empty()) continue;
    bool hard = true;
    for (const auto& p : kept.pairs) {
      const double m = selector.metric == Metric::kAr ? compute_ar(p.geometry()) : compute_lr(p.geometry());
      hard = hard && chosen.count(bin_index(m, edges));
    }
    (hard ? out.test : out.train).images.push_back(std::move(kept));
  }
  return out;
}

}  // namespace fga
