// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fga {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir + ": " + ec.message());
}

std::string write_file(const std::string& dir, const std::string& name, const std::string& text) {
  const std::string path = (fs::path(dir) / name).string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path);
  return path;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

CommandResult cmd_gradcheck(const RunConfig& cfg, bool corrupt, bool as_json, const std::string& out_dir,
                            bool* passed) {
  const SuiteReport report = run_gradient_suite(cfg, corrupt);
  CommandResult r;
  r.summary = as_json ? report.to_json() : report.to_text();
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    r.files.push_back(write_file(out_dir, "gradcheck.json", report.to_json()));
  }
  if (passed) *passed = report.passed();
  return r;
}

CommandResult cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
  write_synthetic_corpus(out_dir, cfg, cfg.require_seed());
  CommandResult r;
  r.files = {(fs::path(out_dir) / "train.json").string(), (fs::path(out_dir) / "test.json").string()};
  r.summary = "wrote " + std::to_string(cfg.synth.train_scenes) + " train and " +
              std::to_string(cfg.synth.test_scenes) + " test scenes to " + out_dir + "\n";
  return r;
}

CommandResult cmd_train(const RunConfig& cfg, const std::string& data_dir, Strategy strategy,
                        const std::string& out_dir, std::size_t threads, TrainSummary* summary) {
  const std::string annotations = (fs::path(data_dir) / "train.json").string();
  if (!fs::exists(annotations)) throw Error(ErrorKind::kIo, "no train.json in " + data_dir);
  const std::vector<Sample> data = load_samples(annotations, cfg.model);
  Model model = create_model(cfg, MergeMode::kFull);
  TrainSummary s;
  s.initial_loss = evaluate_loss(model, data, threads).total;
  TrainOptions opts;
  opts.strategy = strategy;
  opts.out_dir = out_dir;
  opts.threads = threads;
  const TrainResult tr = train(model, data, opts);
  model.mode = MergeMode::kFull;
  s.final_loss = evaluate_loss(model, data, threads).total;
  s.epochs = tr.log.size();
  for (const auto& e : tr.log) {
    if (!std::isfinite(e.loss.total)) throw Error(ErrorKind::kNumeric, "non-finite loss in epoch " + std::to_string(e.epoch));
  }

  CommandResult r;
  r.files.push_back((fs::path(out_dir) / "train_log.csv").string());
  r.files.insert(r.files.end(), tr.checkpoints.begin(), tr.checkpoints.end());
  json names = json::array();
  for (const auto& c : tr.checkpoints) names.push_back(fs::path(c).filename().string());
  const json j{{"strategy", strategy_name(strategy)},
               {"epochs", s.epochs},
               {"images", data.size()},
               {"initial_loss", s.initial_loss},
               {"final_loss", s.final_loss},
               {"reduction", 1.0 - s.final_loss / s.initial_loss},
               {"checkpoints", names}};
  r.files.push_back(write_file(out_dir, "train_summary.json", j.dump(2) + "\n"));
  r.summary = std::string(strategy_name(strategy)) + ": " + std::to_string(s.epochs) + " epochs, loss " +
              fixed(s.initial_loss) + " -> " + fixed(s.final_loss) + ", checkpoints in " + out_dir + "\n";
  if (summary) *summary = s;
  return r;
}

CommandResult cmd_eval(const std::string& checkpoint, const std::string& annotations, Setting setting,
                       const std::string& rare_from, const std::string& out_dir, std::size_t threads,
                       EvalReport* report_out) {
  const Model model = load_checkpoint(checkpoint);
  const ModelConfig& mc = model.config.model;
  const std::vector<Sample> data = load_samples(annotations, mc);
  EvalOptions opts{mc.num_objects, mc.num_verbs, {}, setting, model.config.eval.eleven_point};
  if (!rare_from.empty()) {
    const AnnotationSet train = load_annotations(rare_from);
    if (train.num_objects != mc.num_objects || train.num_verbs != mc.num_verbs) {
      throw Error(ErrorKind::kConfig, rare_from + ": class counts do not match the checkpoint");
    }
    std::vector<ImageTruth> truths;
    for (const auto& im : train.images) truths.push_back({im.id, normalized_pairs(im)});
    opts.rare = rare_classes(truths, mc.num_objects, mc.num_verbs, model.config.eval.rare_threshold);
  }
  const std::vector<ImagePredictions> preds = predict(model, data, threads);
  const EvalReport report = evaluate_role_map(preds, truths_of(data), opts);

  ensure_dir(out_dir);
  const std::string stem = std::string("eval_") + setting_name(setting);
  CommandResult r;
  r.files.push_back(write_file(out_dir, stem + ".json", report.to_json()));
  r.files.push_back(write_file(out_dir, stem + ".txt", report.to_text()));
  r.files.push_back(write_file(out_dir, "predictions.json", predictions_to_json(preds)));
  r.summary = std::string(setting_name(setting)) + ": full " + fixed(report.full) + "  rare " + fixed(report.rare) +
              "  non-rare " + fixed(report.non_rare) + "\n";
  if (report_out) *report_out = report;
  return r;
}

CommandResult cmd_metrics(const std::string& annotations, Metric metric, const std::string& edges,
                          const std::string& out_dir, bool per_instance) {
  const AnnotationSet set = load_annotations(annotations);
  const std::vector<double> e = edges.empty() ? default_edges(metric) : parse_edges(edges);
  const std::vector<double> values = metric_values(set, metric);
  const DifficultyHistogram hist = bin_intervals(values, e, metric);

  ensure_dir(out_dir);
  const std::string stem = metric_name(metric);
  CommandResult r;
  r.files.push_back(write_file(out_dir, stem + "_histogram.json", hist.to_json()));
  r.files.push_back(write_file(out_dir, stem + "_histogram.csv", hist.to_csv()));
  if (per_instance) {
    std::string csv = "image_id,pair,value,bin\n";
    std::size_t k = 0;
    char buf[128];
    for (const auto& im : set.images) {
      for (std::size_t p = 0; p < im.pairs.size(); ++p, ++k) {
        std::snprintf(buf, sizeof buf, "%lld,%zu,%.17g,%zu\n", static_cast<long long>(im.id), p, values[k],
                      bin_index(values[k], e));
        csv += buf;
      }
    }
    r.files.push_back(write_file(out_dir, stem + "_instances.csv", csv));
  }
  r.summary = std::string(stem) + ": " + std::to_string(values.size()) + " pairs in 10 intervals, written to " +
              out_dir + "\n";
  return r;
}

CommandResult cmd_split(const std::string& annotations, const SplitSelector& selector, const std::string& out_dir) {
  Split split = generate_split(load_annotations(annotations), selector);
  ensure_dir(out_dir);
  // Image paths stay valid from the new location.
  const fs::path from = fs::absolute(fs::path(annotations).parent_path());
  const fs::path to = fs::absolute(fs::path(out_dir));
  for (AnnotationSet* side : {&split.train, &split.test}) {
    for (auto& im : side->images) {
      if (!im.file.empty()) im.file = (from / im.file).lexically_normal().lexically_relative(to).generic_string();
    }
  }
  CommandResult r;
  r.files.push_back(write_file(out_dir, "train.json", annotations_to_json(split.train)));
  r.files.push_back(write_file(out_dir, "test.json", annotations_to_json(split.test)));
  r.files.push_back(write_file(out_dir, "split.json", split.to_json()));
  r.summary = "train " + std::to_string(split.train.images.size()) + " images / " +
              std::to_string(split.train.num_pairs()) + " pairs, test " + std::to_string(split.test.images.size()) +
              " images / " + std::to_string(split.test.num_pairs()) + " pairs, " +
              std::to_string(split.dropped.size()) + " classes dropped\n";
  return r;
}

std::string anchors_to_json(const DecoderOutput& out) {
  const Tensor& initial = out.anchors.value();
  json records = json::array();
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    const LayerTrace& t = out.layers[l];
    const std::size_t nq = t.weights.dim(0), heads = t.weights.dim(1), levels = t.weights.dim(2),
                      points = t.weights.dim(3);
    for (std::size_t q = 0; q < nq; ++q) {
      json pts = json::array();
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t lv = 0; lv < levels; ++lv) {
          for (std::size_t k = 0; k < points; ++k) {
            const std::size_t w = ((q * heads + h) * levels + lv) * points + k;
            pts.push_back({{"head", h},
                           {"level", lv},
                           {"point", k},
                           {"x", t.anchors[2 * w]},
                           {"y", t.anchors[2 * w + 1]},
                           {"weight", t.weights[w]}});
          }
        }
      }
      records.push_back({{"layer", l},
                         {"query", q},
                         {"anchor", {initial(q, 0), initial(q, 1)}},
                         {"points", pts}});
    }
  }
  return json{{"layers", out.layers.size()}, {"queries", initial.dim(0)}, {"records", records}}.dump(1) + "\n";
}

CommandResult cmd_dump_anchors(const std::string& checkpoint, const std::string& image, const std::string& out_path) {
  const Model model = load_checkpoint(checkpoint);
  const Tensor pixels = read_ppm(image);
  Tape tape;
  Bound p(tape, model.params);
  const ForwardOutput out = forward(p, pixels, model.config.model, model.mode, true);
  CommandResult r;
  const std::string text = anchors_to_json(out.decoder);
  const fs::path path(out_path);
  if (path.has_parent_path()) ensure_dir(path.parent_path().string());
  r.files.push_back(write_file(path.has_parent_path() ? path.parent_path().string() : ".", path.filename().string(), text));
  r.summary = "wrote " + std::to_string(out.decoder.layers.size() * model.config.model.num_queries) +
              " anchor records to " + out_path + "\n";
  return r;
}

}  // namespace fga
