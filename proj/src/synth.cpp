// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "fgahoi/dataset.hpp"

namespace fga {

namespace {

constexpr std::array<std::array<double, 3>, 8> kPalette{{
    {0.95, 0.15, 0.10},
    {0.10, 0.85, 0.20},
    {0.15, 0.25, 0.95},
    {0.95, 0.90, 0.10},
    {0.90, 0.15, 0.85},
    {0.10, 0.85, 0.90},
    {0.95, 0.55, 0.05},
    {0.50, 0.10, 0.60},
}};

constexpr double kHuman = 0.8;

long randint(Rng& rng, long lo, long hi) { return lo + static_cast<long>(rng.index(static_cast<std::size_t>(hi - lo + 1))); }

void fill(Tensor& img, const PixelBox& b, const std::array<double, 3>& rgb, bool stripes) {
  const std::size_t width = img.dim(1);
  for (std::size_t y = static_cast<std::size_t>(b.y); y < static_cast<std::size_t>(b.y + b.h); ++y) {
    for (std::size_t x = static_cast<std::size_t>(b.x); x < static_cast<std::size_t>(b.x + b.w); ++x) {
      const double k = stripes && (y / 2) % 2 ? 0.45 : 1.0;
      for (std::size_t c = 0; c < 3; ++c) img[(y * width + x) * 3 + c] = rgb[c] * k;
    }
  }
}

struct Placed {
  PixelBox human, object;
};

// One candidate pair with integer pixel boxes; nullopt when it does not fit.
std::optional<Placed> propose(Rng& rng, long size, std::size_t verb) {
  const double s = static_cast<double>(size);
  const long hw = randint(rng, std::lround(0.18 * s), std::lround(0.40 * s));
  const long hh = randint(rng, std::lround(0.25 * s), std::lround(0.55 * s));
  const long ow = std::max(2L, std::lround(static_cast<double>(hw) * rng.uniform(0.3, 1.0)));
  const long oh = std::max(2L, std::lround(static_cast<double>(hh) * rng.uniform(0.3, 1.0)));
  // Centre offset along the verb's side, in units of the touching distance;
  // below 1 the boxes overlap.
  const double u = rng.uniform(0.0, 3.5);
  const double perp = rng.uniform(-0.25, 0.25);
  double dx = 0, dy = 0;
  const double reach_x = 0.5 * static_cast<double>(hw + ow), reach_y = 0.5 * static_cast<double>(hh + oh);
  switch (verb % 4) {
    case 0: dx = -u * reach_x, dy = perp * hh; break;
    case 1: dx = u * reach_x, dy = perp * hh; break;
    case 2: dy = -u * reach_y, dx = perp * hw; break;
    default: dy = u * reach_y, dx = perp * hw; break;
  }
  // Human at the origin (top-left), object relative to it.
  const long ox = std::lround(0.5 * static_cast<double>(hw - ow) + dx);
  const long oy = std::lround(0.5 * static_cast<double>(hh - oh) + dy);
  const long x0 = std::min(0L, ox), y0 = std::min(0L, oy);
  const long x1 = std::max(hw, ox + ow), y1 = std::max(hh, oy + oh);
  if (x1 - x0 > size || y1 - y0 > size) return std::nullopt;
  const long tx = randint(rng, 0, size - (x1 - x0)) - x0;
  const long ty = randint(rng, 0, size - (y1 - y0)) - y0;
  auto box = [](long x, long y, long w, long h) {
    return PixelBox{static_cast<double>(x), static_cast<double>(y), static_cast<double>(w), static_cast<double>(h)};
  };
  return Placed{box(tx, ty, hw, hh), box(tx + ox, ty + oy, ow, oh)};
}

}  // namespace

SceneSpec SceneSpec::from(const RunConfig& cfg) {
  SceneSpec s;
  s.image_size = cfg.model.image_size;
  s.num_objects = cfg.model.num_objects;
  s.num_verbs = cfg.model.num_verbs;
  s.pairs = cfg.synth.pairs_per_scene;
  s.ar_min = cfg.synth.ar_min;
  s.ar_max = cfg.synth.ar_max;
  s.lr_min = cfg.synth.lr_min;
  s.lr_max = cfg.synth.lr_max;
  s.max_retries = cfg.synth.max_retries;
  return s;
}

Scene synth_scene(Rng& rng, const SceneSpec& spec, std::int64_t id) {
  if (spec.num_objects == 0 || spec.num_objects > kPalette.size() || spec.num_verbs == 0 || spec.num_verbs > 8) {
    throw Error(ErrorKind::kConfig, "synthetic scenes support 1..8 object classes and 1..8 verbs");
  }
  if (spec.image_size < 8) throw Error(ErrorKind::kConfig, "synthetic image size must be at least 8");
  if (spec.ar_min > spec.ar_max || spec.lr_min > spec.lr_max) {
    throw Error(ErrorKind::kConfig, "synthetic AR/LR range is empty");
  }
  const std::size_t n = spec.image_size;
  Scene scene;
  scene.image = Tensor({n, n, 3});
  for (auto& v : scene.image.data()) v = rng.uniform(0.0, 0.15);
  scene.record.id = id;
  scene.record.width = scene.record.height = n;

  for (std::size_t k = 0; k < spec.pairs; ++k) {
    const std::size_t verb = rng.index(spec.num_verbs);
    const std::size_t cls = rng.index(spec.num_objects);
    std::optional<Placed> found;
    for (std::size_t attempt = 0; attempt < spec.max_retries && !found; ++attempt) {
      std::optional<Placed> c = propose(rng, static_cast<long>(n), verb);
      if (!c) continue;
      const PairGeometry g{c->human, c->object};
      const double ar = compute_ar(g), lr = compute_lr(g);
      if (ar >= spec.ar_min && ar <= spec.ar_max && lr >= spec.lr_min && lr <= spec.lr_max) found = c;
    }
    if (!found) {
      throw Error(ErrorKind::kGeneration, "no pair within AR [" + std::to_string(spec.ar_min) + ", " +
                                              std::to_string(spec.ar_max) + "] and LR [" + std::to_string(spec.lr_min) +
                                              ", " + std::to_string(spec.lr_max) + "] after " +
                                              std::to_string(spec.max_retries) + " attempts");
    }
    fill(scene.image, found->human, {kHuman, kHuman, kHuman}, verb >= 4);
    fill(scene.image, found->object, kPalette[cls], false);
    PairRecord rec{found->human, found->object, cls, std::vector<std::uint8_t>(spec.num_verbs, 0)};
    rec.verbs[verb] = 1;
    scene.record.pairs.push_back(std::move(rec));
  }
  return scene;
}

Tensor quantize8(const Tensor& image) {
  Tensor out = image;
  for (auto& v : out.data()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw Error(ErrorKind::kDimension, "PPM image must be [H, W, 3]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::string bytes(image.numel(), '\0');
  for (std::size_t i = 0; i < image.numel(); ++i) {
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w == 0 || h == 0 || maxval != 255) throw Error(ErrorKind::kParse, path + ": not an 8-bit P6 image");
  in.get();
  std::string bytes(w * h * 3, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw Error(ErrorKind::kParse, path + ": truncated pixel data");
  Tensor img({h, w, 3});
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  return img;
}

void write_synthetic_corpus(const std::string& dir, const RunConfig& cfg, std::uint64_t seed) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir + ": " + ec.message());
  const SceneSpec spec = SceneSpec::from(cfg);
  Rng rng(seed);
  std::int64_t next_id = 0;
  for (const auto& [name, count] : {std::pair{"train", cfg.synth.train_scenes}, {"test", cfg.synth.test_scenes}}) {
    AnnotationSet set;
    set.num_objects = spec.num_objects;
    set.num_verbs = spec.num_verbs;
    for (std::size_t i = 0; i < count; ++i) {
      Scene s = synth_scene(rng, spec, next_id++);
      char file[32];
      std::snprintf(file, sizeof file, "images/%06lld.ppm", static_cast<long long>(s.record.id));
      s.record.file = file;
      write_ppm((fs::path(dir) / file).string(), s.image);
      set.images.push_back(std::move(s.record));
    }
    save_annotations((fs::path(dir) / (std::string(name) + ".json")).string(), set);
  }
}

}  // namespace fga
