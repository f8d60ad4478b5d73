// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

namespace fga {

namespace fs = std::filesystem;

std::vector<Sample> load_samples(const std::string& annotation_path, const ModelConfig& cfg) {
  const AnnotationSet set = load_annotations(annotation_path);
  if (set.num_objects != cfg.num_objects || set.num_verbs != cfg.num_verbs) {
    throw Error(ErrorKind::kConfig, annotation_path + ": " + std::to_string(set.num_objects) + " objects / " +
                                        std::to_string(set.num_verbs) + " verbs, model expects " +
                                        std::to_string(cfg.num_objects) + " / " + std::to_string(cfg.num_verbs));
  }
  const fs::path base = fs::path(annotation_path).parent_path();
  std::vector<Sample> out;
  for (const auto& im : set.images) {
    if (im.file.empty()) throw Error(ErrorKind::kData, "image " + std::to_string(im.id) + " names no file");
    Sample s{im.id, read_ppm((base / im.file).string()), normalized_pairs(im)};
    if (s.image.dim(0) != cfg.image_size || s.image.dim(1) != cfg.image_size) {
      throw Error(ErrorKind::kConfig, "image " + std::to_string(im.id) + " is not " + std::to_string(cfg.image_size) +
                                          "x" + std::to_string(cfg.image_size));
    }
    if (s.gts.size() > cfg.num_queries) {
      throw Error(ErrorKind::kCapacity, "image " + std::to_string(im.id) + " has more pairs than queries");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ImageTruth> truths_of(const std::vector<Sample>& samples) {
  std::vector<ImageTruth> out;
  for (const auto& s : samples) out.push_back({s.id, s.gts});
  return out;
}

std::size_t threads_from_env() {
  const char* v = std::getenv("FGA_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw Error(ErrorKind::kConfig, std::string("FGA_THREADS must be a positive integer, got ") + v);
  return static_cast<std::size_t>(n);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Strategy parse_strategy(const std::string& name) {
  if (name == "stagewise") return Strategy::kStagewise;
  if (name == "end2end") return Strategy::kEndToEnd;
  throw Error(ErrorKind::kConfig, "unknown strategy '" + name + "' (expected stagewise or end2end)");
}

const char* strategy_name(Strategy s) { return s == Strategy::kStagewise ? "stagewise" : "end2end"; }

namespace {

struct SampleResult {
  LossSummary loss;
  std::map<std::string, Tensor> grads;
};

SampleResult run_sample(const Model& model, const Sample& s, MergeMode mode, bool want_grads) {
  Tape tape;
  Bound p(tape, model.params);
  LossTerms l = image_loss(p, s.image, s.gts, model.config, mode);
  SampleResult r;
  r.loss = {l.total.value()[0], l.object, l.verb, l.bbox, l.giou};
  if (!std::isfinite(r.loss.total)) {
    throw Error(ErrorKind::kNumeric, "non-finite loss on image " + std::to_string(s.id));
  }
  if (want_grads) {
    tape.backward(l.total);
    r.grads = p.gradients();
  }
  return r;
}

void add_into(LossSummary& a, const LossSummary& b, double w) {
  a.total += w * b.total;
  a.object += w * b.object;
  a.verb += w * b.verb;
  a.bbox += w * b.bbox;
  a.giou += w * b.giou;
}

struct Stage {
  MergeMode mode;
  std::size_t epochs;
  double drop_fraction;
};

class MomentumSgd {
 public:
  explicit MomentumSgd(const OptimConfig& c) : cfg_(c) {}

  void reset() { velocity_.clear(); }

  void step(ParamStore& params, std::map<std::string, Tensor>& grads, double lr) {
    for (auto& [name, g] : grads) {
      const Tensor& w = params.at(name);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += cfg_.weight_decay * w[i];
    }
    double norm2 = 0.0;
    for (const auto& [name, g] : grads) {
      for (double v : g.data()) norm2 += v * v;
    }
    const double norm = std::sqrt(norm2);
    const double clip = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    for (auto& [name, g] : grads) {
      Tensor& v = velocity_.try_emplace(name, g.shape()).first->second;
      Tensor& w = params.at(name);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        v[i] = cfg_.momentum * v[i] + clip * g[i];
        w[i] -= lr * v[i];
      }
    }
  }

 private:
  OptimConfig cfg_;
  std::map<std::string, Tensor> velocity_;
};

}  // namespace

std::string log_csv_header() { return "epoch,total,L_o,L_v,L_b,L_giou,stage,mode,lr\n"; }

std::string log_csv_row(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%s,%.17g\n", e.epoch, e.loss.total,
                e.loss.object, e.loss.verb, e.loss.bbox, e.loss.giou, e.stage, merge_mode_name(e.mode), e.lr);
  return buf;
}

TrainResult train(Model& model, const std::vector<Sample>& data, const TrainOptions& options) {
  if (data.empty()) throw Error(ErrorKind::kData, "no training images");
  const RunConfig& cfg = model.config;
  cfg.validate();
  const OptimConfig& oc = cfg.optim;

  std::vector<Stage> stages;
  if (options.strategy == Strategy::kStagewise) {
    const MergeMode modes[3] = {MergeMode::kBase, MergeMode::kHsam, MergeMode::kFull};
    for (std::size_t i = 0; i < oc.stage_epochs.size(); ++i) {
      stages.push_back({modes[i], oc.stage_epochs[i], i == 0 ? oc.first_stage_drop : oc.later_stage_drop});
    }
  } else {
    std::size_t total = 0;
    for (auto e : oc.stage_epochs) total += e;
    stages.push_back({MergeMode::kFull, total, oc.first_stage_drop});
  }

  std::ofstream csv;
  if (!options.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) throw Error(ErrorKind::kIo, "cannot create " + options.out_dir + ": " + ec.message());
    csv.open(fs::path(options.out_dir) / "train_log.csv", std::ios::binary);
    if (!csv) throw Error(ErrorKind::kIo, "cannot write log in " + options.out_dir);
    csv << log_csv_header();
  }

  Rng order_rng(cfg.require_seed() ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  MomentumSgd opt(oc);
  TrainResult result;
  std::size_t epoch_no = 0;
  for (std::size_t si = 0; si < stages.size(); ++si) {
    const Stage& st = stages[si];
    model.mode = st.mode;
    opt.reset();
    const std::size_t drop_at = static_cast<std::size_t>(std::llround(st.drop_fraction * static_cast<double>(st.epochs)));
    for (std::size_t e = 0; e < st.epochs; ++e) {
      const double lr = e < drop_at ? oc.lr : oc.lr * oc.lr_drop_factor;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.index(i)]);
      EpochLog log{++epoch_no, si + 1, st.mode, lr, {}};
      for (std::size_t b0 = 0; b0 < order.size(); b0 += oc.batch_size) {
        const std::size_t bn = std::min(oc.batch_size, order.size() - b0);
        std::vector<SampleResult> res(bn);
        parallel_for(bn, options.threads,
                     [&](std::size_t k) { res[k] = run_sample(model, data[order[b0 + k]], st.mode, true); });
        std::map<std::string, Tensor> grads = std::move(res[0].grads);
        for (std::size_t k = 1; k < bn; ++k) {
          for (auto& [name, g] : grads) {
            const Tensor& o = res[k].grads.at(name);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += o[i];
          }
        }
        const double inv = 1.0 / static_cast<double>(bn);
        for (auto& [name, g] : grads) {
          for (auto& v : g.data()) v *= inv;
        }
        for (const auto& r : res) add_into(log.loss, r.loss, 1.0 / static_cast<double>(data.size()));
        opt.step(model.params, grads, lr);
      }
      if (csv.is_open()) csv << log_csv_row(log) << std::flush;
      if (options.on_epoch) options.on_epoch(log);
      result.log.push_back(log);
    }
    if (!options.out_dir.empty()) {
      const std::string name = options.strategy == Strategy::kStagewise ? "stage" + std::to_string(si + 1) + ".ckpt"
                                                                        : std::string("end2end.ckpt");
      const std::string path = (fs::path(options.out_dir) / name).string();
      save_checkpoint(path, model);
      result.checkpoints.push_back(path);
    }
  }
  return result;
}

LossSummary evaluate_loss(const Model& model, const std::vector<Sample>& data, std::size_t threads) {
  std::vector<LossSummary> per(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { per[i] = run_sample(model, data[i], model.mode, false).loss; });
  LossSummary mean;
  for (const auto& l : per) add_into(mean, l, 1.0 / static_cast<double>(data.size()));
  return mean;
}

std::vector<ImagePredictions> predict(const Model& model, const std::vector<Sample>& data, std::size_t threads) {
  std::vector<ImagePredictions> out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { out[i] = {data[i].id, infer(model, data[i].image)}; });
  return out;
}

}  // namespace fga
