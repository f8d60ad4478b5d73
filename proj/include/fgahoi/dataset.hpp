// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Annotation files, pair difficulty metrics, difficulty-stratified splits and
// the synthetic scene generator.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgahoi/boxes.hpp"
#include "fgahoi/config.hpp"
#include "fgahoi/rng.hpp"
#include "fgahoi/tensor.hpp"

namespace fga {

/// Absolute-pixel box, top-left corner plus size.
struct PixelBox {
  double x = 0.0, y = 0.0, w = 0.0, h = 0.0;

  double area() const { return w * h; }
  double diagonal() const;
  bool operator==(const PixelBox&) const = default;
};

struct PairGeometry {
  PixelBox human;
  PixelBox object;

  /// Tight axis-aligned box enclosing both.
  PixelBox hoi() const;
};

/// (Area_h * Area_o) / Area_hoi^2, in (0, 1].
double compute_ar(const PairGeometry& g);
/// (L_h + L_o) / L_hoi with L the box diagonal, in (0, 2].
double compute_lr(const PairGeometry& g);

enum class Metric { kAr, kLr };

Metric parse_metric(const std::string& name);
const char* metric_name(Metric m);
/// Ten uniform intervals: [0, 1] for AR, [0, 2] for LR.
std::vector<double> default_edges(Metric m);
/// Parses "e0,e1,...,e10".
std::vector<double> parse_edges(const std::string& text);

struct DifficultyHistogram {
  Metric metric = Metric::kAr;
  std::vector<double> edges;         // 11, strictly increasing
  std::vector<std::size_t> counts;   // 10

  std::string to_json() const;
  /// "bin,count" header plus ten rows.
  std::string to_csv() const;
};

/// Bin of `v` under half-open intervals with a closed last bin; values
/// outside the range clamp into the end bins.
std::size_t bin_index(double v, const std::vector<double>& edges);
DifficultyHistogram bin_intervals(const std::vector<double>& values, const std::vector<double>& edges, Metric metric);

struct PairRecord {
  PixelBox human;
  PixelBox object;
  std::size_t object_class = 0;
  std::vector<std::uint8_t> verbs;  // multi-hot, num_verbs long

  PairGeometry geometry() const { return {human, object}; }
};

struct ImageRecord {
  std::int64_t id = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::string file;  // relative to the annotation file; may be empty
  std::vector<PairRecord> pairs;
};

struct AnnotationSet {
  std::vector<ImageRecord> images;
  std::size_t num_objects = 0;
  std::size_t num_verbs = 0;
  std::vector<std::string> class_names;

  /// Throws kParse naming the offending image.
  void validate() const;
  std::size_t num_pairs() const;
};

AnnotationSet parse_annotations(const std::string& json_text);
std::string annotations_to_json(const AnnotationSet& set);
AnnotationSet load_annotations(const std::string& path);
void save_annotations(const std::string& path, const AnnotationSet& set);

/// Pairs in normalized (cx, cy, w, h) form.
std::vector<HoiAnnotation> normalized_pairs(const ImageRecord& image);

/// Per-pair metric values in file order.
std::vector<double> metric_values(const AnnotationSet& set, Metric m);

struct SplitSelector {
  Metric metric = Metric::kAr;
  std::vector<std::size_t> intervals;  // test-side bins
  std::vector<double> edges;           // empty: default_edges(metric)
  std::size_t min_instances = 10;      // per (object, verb) class, 0 keeps all
};

/// "ar:0" or "lr:0-6" or "ar:0,2".
SplitSelector parse_selector(const std::string& text);

struct Split {
  AnnotationSet train;
  AnnotationSet test;
  std::vector<std::pair<std::size_t, std::size_t>> dropped;  // (object, verb)

  std::string to_json() const;
};

/// Images whose every pair falls in the selected intervals form the test side.
/// Classes below the instance minimum are removed from both sides first.
Split generate_split(const AnnotationSet& set, const SplitSelector& selector);

struct SceneSpec {
  std::size_t image_size = 64;
  std::size_t num_objects = 3;
  std::size_t num_verbs = 3;
  std::size_t pairs = 1;
  double ar_min = 0.0, ar_max = 1.0;
  double lr_min = 0.0, lr_max = 2.0;
  std::size_t max_retries = 200000;

  static SceneSpec from(const RunConfig& cfg);
};

struct Scene {
  Tensor image;  // [H, W, 3] in [0, 1]
  ImageRecord record;
};

/// Humans are light grey blocks, objects are blocks coloured by class. The
/// verb fixes the side of the human the object sits on; verbs 4..7 also
/// stripe the human.
Scene synth_scene(Rng& rng, const SceneSpec& spec, std::int64_t id = 0);

/// Binary 8-bit RGB (P6). Images round-trip through 8-bit quantization.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);
/// Rounds every pixel to the 8-bit grid, as write/read would.
Tensor quantize8(const Tensor& image);

/// Writes train.json, test.json and images/ under `dir`.
void write_synthetic_corpus(const std::string& dir, const RunConfig& cfg, std::uint64_t seed);

}  // namespace fga
