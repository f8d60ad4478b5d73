// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fgahoi/tensor.hpp"

namespace fga {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw Error(ErrorKind::kConfig, key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorKind::kConfig, key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(ErrorKind::kConfig, key + ": expected true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  if (out.empty()) throw Error(ErrorKind::kConfig, key + ": empty list");
  return out;
}

std::string fmt_double(double d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define FGA_SIZE(key, path)                                                                                   \
  {                                                                                                           \
    key, Field {                                                                                              \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.path = parse_uint(k, v); },           \
          [](const RunConfig& c) { return std::to_string(c.path); }                                           \
    }                                                                                                         \
  }
#define FGA_REAL(key, path)                                                                                   \
  {                                                                                                           \
    key, Field {                                                                                              \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.path = parse_double(k, v); },         \
          [](const RunConfig& c) { return fmt_double(c.path); }                                               \
    }                                                                                                         \
  }
#define FGA_LIST(key, path)                                                                                   \
  {                                                                                                           \
    key, Field {                                                                                              \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.path = parse_list(k, v); },           \
          [](const RunConfig& c) { return fmt_list(c.path); }                                                 \
    }                                                                                                         \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      FGA_SIZE("image_size", model.image_size),
      FGA_SIZE("patch_size", model.patch_size),
      FGA_SIZE("backbone_dim", model.backbone_dim),
      FGA_SIZE("hidden_dim", model.hidden_dim),
      FGA_SIZE("num_heads", model.num_heads),
      FGA_SIZE("num_levels", model.num_levels),
      FGA_SIZE("enc_points", model.enc_points),
      FGA_SIZE("dec_points", model.dec_points),
      FGA_SIZE("enc_layers", model.enc_layers),
      FGA_SIZE("dec_layers", model.dec_layers),
      FGA_SIZE("ffn_dim", model.ffn_dim),
      FGA_SIZE("num_queries", model.num_queries),
      FGA_LIST("sampling_sizes", model.sampling_sizes),
      FGA_SIZE("num_objects", model.num_objects),
      FGA_SIZE("num_verbs", model.num_verbs),
      FGA_REAL("lambda_obj", loss.weights.object),
      FGA_REAL("lambda_verb", loss.weights.verb),
      FGA_REAL("lambda_bbox", loss.weights.bbox),
      FGA_REAL("lambda_giou", loss.weights.giou),
      FGA_REAL("focal_alpha", loss.focal_alpha),
      FGA_REAL("focal_gamma", loss.focal_gamma),
      FGA_REAL("lr", optim.lr),
      FGA_REAL("momentum", optim.momentum),
      FGA_REAL("weight_decay", optim.weight_decay),
      FGA_REAL("clip_norm", optim.clip_norm),
      FGA_SIZE("batch_size", optim.batch_size),
      FGA_LIST("stage_epochs", optim.stage_epochs),
      FGA_REAL("first_stage_drop", optim.first_stage_drop),
      FGA_REAL("later_stage_drop", optim.later_stage_drop),
      FGA_REAL("lr_drop_factor", optim.lr_drop_factor),
      FGA_SIZE("train_scenes", synth.train_scenes),
      FGA_SIZE("test_scenes", synth.test_scenes),
      FGA_SIZE("pairs_per_scene", synth.pairs_per_scene),
      FGA_REAL("ar_min", synth.ar_min),
      FGA_REAL("ar_max", synth.ar_max),
      FGA_REAL("lr_min", synth.lr_min),
      FGA_REAL("lr_max", synth.lr_max),
      FGA_SIZE("max_retries", synth.max_retries),
      FGA_SIZE("top_k", eval.top_k),
      FGA_REAL("nms_delta", eval.nms_delta),
      FGA_SIZE("rare_threshold", eval.rare_threshold),
      {"eleven_point",
       Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.eval.eleven_point = parse_bool(k, v); },
             [](const RunConfig& c) { return std::string(c.eval.eleven_point ? "true" : "false"); }}},
      {"seed", Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_uint(k, v); },
                     [](const RunConfig& c) { return c.seed ? std::to_string(*c.seed) : std::string(); }}},
  };
  return table;
}

#undef FGA_SIZE
#undef FGA_REAL
#undef FGA_LIST

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kConfig, m); };
  if (num_levels != 3) fail("num_levels must be 3 (strides patch, 2*patch, 4*patch)");
  if (patch_size == 0 || image_size == 0 || image_size % (4 * patch_size) != 0) {
    fail("image_size " + std::to_string(image_size) + " must be a positive multiple of 4*patch_size (" +
         std::to_string(4 * patch_size) + ")");
  }
  if (hidden_dim == 0 || hidden_dim % 4 != 0) fail("hidden_dim must be a positive multiple of 4");
  if (num_heads == 0 || hidden_dim % num_heads != 0) fail("hidden_dim must be divisible by num_heads");
  if (backbone_dim == 0 || ffn_dim == 0) fail("backbone_dim and ffn_dim must be positive");
  if (num_queries == 0) fail("num_queries must be positive");
  if (enc_points == 0 || dec_points == 0) fail("sampling point counts must be positive");
  if (num_objects == 0 || num_verbs == 0) fail("class counts must be positive");
  if (sampling_sizes.size() != num_levels) fail("sampling_sizes needs one entry per level");
  for (std::size_t i = 0; i < sampling_sizes.size(); ++i) {
    if (sampling_sizes[i] % 2 == 0) fail("sampling size " + std::to_string(sampling_sizes[i]) + " is even");
    if (i && sampling_sizes[i] < sampling_sizes[i - 1]) fail("sampling sizes must be ascending");
  }
}

RunConfig RunConfig::toy() { return RunConfig{}; }

RunConfig RunConfig::tiny() {
  RunConfig c;
  c.model.image_size = 16;
  c.model.patch_size = 4;
  c.model.backbone_dim = 4;
  c.model.hidden_dim = 16;
  c.model.num_heads = 2;
  c.model.enc_points = 2;
  c.model.dec_points = 2;
  c.model.enc_layers = 1;
  c.model.dec_layers = 2;
  c.model.ffn_dim = 32;
  c.model.num_queries = 4;
  // Carries a seed so a bare gradient check is reproducible without flags.
  c.seed = 1;
  return c;
}

RunConfig RunConfig::large() {
  RunConfig c;
  c.model.image_size = 512;
  c.model.patch_size = 8;
  c.model.backbone_dim = 96;
  c.model.hidden_dim = 256;
  c.model.num_heads = 8;
  c.model.enc_points = 4;
  c.model.dec_points = 4;
  c.model.enc_layers = 6;
  c.model.dec_layers = 6;
  c.model.ffn_dim = 1024;
  c.model.num_queries = 300;
  c.model.num_objects = 80;
  c.model.num_verbs = 117;
  c.optim.stage_epochs = {150, 40, 40};
  return c;
}

RunConfig RunConfig::preset(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "tiny") return tiny();
  if (name == "large") return large();
  throw Error(ErrorKind::kConfig, "unknown preset '" + name + "' (expected toy, tiny or large)");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw Error(ErrorKind::kConfig, "unknown config key '" + key + "'");
  it->second.set(*this, key, trim(value));
}

std::string RunConfig::get(const std::string& key) const {
  auto it = fields().find(key);
  if (it == fields().end()) throw Error(ErrorKind::kConfig, "unknown config key '" + key + "'");
  return it->second.get(*this);
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : fields()) out.push_back(k);
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, f] : fields()) {
    const std::string v = f.get(*this);
    if (v.empty()) continue;
    out += k + "=" + v + "\n";
  }
  return out;
}

RunConfig RunConfig::parse_text(const std::string& text, RunConfig base) {
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kConfig, "config line " + std::to_string(lineno) + ": expected key=value");
    }
    base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

RunConfig RunConfig::load(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), std::move(base));
}

void RunConfig::validate() const {
  model.validate();
  if (optim.batch_size == 0) throw Error(ErrorKind::kConfig, "batch_size must be positive");
  if (optim.stage_epochs.empty() || optim.stage_epochs.size() > 3) {
    throw Error(ErrorKind::kConfig, "stage_epochs needs 1 to 3 entries");
  }
  if (loss.focal_gamma < 0) throw Error(ErrorKind::kConfig, "focal_gamma must be non-negative");
  if (eval.nms_delta < 0 || eval.nms_delta > 1) throw Error(ErrorKind::kConfig, "nms_delta must lie in [0, 1]");
}

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw Error(ErrorKind::kConfig, "a seed is required (set seed=<n> or pass --seed)");
  return *seed;
}

}  // namespace fga
