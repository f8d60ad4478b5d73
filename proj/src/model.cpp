// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fgahoi/encoder.hpp"

namespace fga {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void add_model_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  add_encoder_params(store, cfg, rng);
  add_decoder_params(store, cfg, rng);
  add_head_params(store, cfg, rng);
}

Model create_model(const RunConfig& config, MergeMode mode) {
  config.validate();
  Model m{config, {}, mode};
  Rng rng(config.require_seed());
  add_model_params(m.params, config.model, rng);
  return m;
}

ForwardOutput forward(Bound& p, const Tensor& image, const ModelConfig& cfg, MergeMode mode, bool keep_traces) {
  if (image.rank() != 3 || image.dim(0) != cfg.image_size || image.dim(1) != cfg.image_size || image.dim(2) != 3) {
    throw Error(ErrorKind::kDimension, "image must be [" + std::to_string(cfg.image_size) + ", " +
                                           std::to_string(cfg.image_size) + ", 3], got " + shape_str(image.shape()));
  }
  const FeaturePyramid pyramid = build_pyramid(p, image, cfg);
  const Var pos = positional_encoding(p, pyramid.layout, pyramid.valid_ratios, cfg.hidden_dim);
  const EncodedMemory memory = encode(p, pyramid, pos, cfg);
  DecoderOutput dec = decode(p, memory, init_queries(p), cfg, mode, keep_traces);
  HoiPrediction pred = detection_head(p, dec.hoi, dec.anchors);
  return {pred, std::move(dec)};
}

LossTerms image_loss(Bound& p, const Tensor& image, const std::vector<HoiAnnotation>& gts, const RunConfig& cfg,
                     MergeMode mode) {
  const ForwardOutput out = forward(p, image, cfg.model, mode);
  const Matching m = hungarian_match(match_cost(out.prediction, gts, cfg.loss.weights));
  return composite_loss(out.prediction, gts, m, cfg.loss);
}

QueryScores query_scores(const HoiPrediction& pred) {
  auto squash = [](Tensor t) {
    for (auto& v : t.data()) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return t;
  };
  return {pred.human_boxes.value(), pred.object_boxes.value(), squash(pred.object_logits.value()),
          squash(pred.verb_logits.value())};
}

std::vector<ScoredTriplet> infer(const Model& model, const Tensor& image) {
  Tape tape;
  Bound p(tape, model.params);
  const ForwardOutput out = forward(p, image, model.config.model, model.mode);
  return compose_triplets(query_scores(out.prediction), model.config.eval.top_k, model.config.eval.nms_delta);
}

MergeMode parse_merge_mode(const std::string& name) {
  for (MergeMode m : {MergeMode::kBase, MergeMode::kHsam, MergeMode::kFull}) {
    if (name == merge_mode_name(m)) return m;
  }
  throw Error(ErrorKind::kConfig, "unknown merge mode '" + name + "' (expected base, hsam or full)");
}

namespace {

constexpr char kMagic[4] = {'F', 'G', 'A', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error(ErrorKind::kParse, "truncated checkpoint");
  return v;
}

std::string get_string(std::istream& in, std::uint64_t limit = 1u << 24) {
  const std::uint64_t n = get_u64(in);
  if (n > limit) throw Error(ErrorKind::kParse, "corrupt checkpoint string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw Error(ErrorKind::kParse, "truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  put_string(out, model.config.to_text());
  put_string(out, merge_mode_name(model.mode));
  put_u64(out, model.params.tensors().size());
  for (const auto& [name, t] : model.params.tensors()) {
    put_string(out, name);
    put_u64(out, t.rank());
    for (auto d : t.shape()) put_u64(out, d);
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  char magic[4] = {};
  std::uint32_t version = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorKind::kParse, path + ": not a checkpoint");
  if (version != kVersion) throw Error(ErrorKind::kParse, path + ": unsupported checkpoint version");
  Model m;
  m.config = RunConfig::parse_text(get_string(in));
  m.mode = parse_merge_mode(get_string(in));
  const std::uint64_t count = get_u64(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = get_string(in, 4096);
    const std::uint64_t rank = get_u64(in);
    if (rank > 8) throw Error(ErrorKind::kParse, "corrupt checkpoint rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = get_u64(in);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw Error(ErrorKind::kParse, "truncated checkpoint tensor " + name);
    m.params.add(name, std::move(t));
  }
  // The stored tensors must be exactly what the stored config builds.
  ParamStore expected;
  Rng rng(0);
  add_model_params(expected, m.config.model, rng);
  if (expected.tensors().size() != m.params.tensors().size()) {
    throw Error(ErrorKind::kConfig, path + ": parameter set does not match its config");
  }
  for (const auto& [name, t] : expected.tensors()) {
    if (!m.params.contains(name) || m.params.at(name).shape() != t.shape()) {
      throw Error(ErrorKind::kConfig, path + ": parameter " + name + " does not match its config");
    }
  }
  return m;
}

}  // namespace fga
