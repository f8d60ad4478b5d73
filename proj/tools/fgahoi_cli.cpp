// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Talks to the library only through the C API.

#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fgahoi/fgahoi.h"

namespace {

// Thrown on a failed library call; carries the status for the exit code.
struct Failure {
  fga_status status;
  std::string message;
};

void check(fga_status s) {
  if (s != FGA_OK) throw Failure{s, fga_last_error()};
}

struct ConfigDeleter {
  void operator()(fga_config* c) const { fga_config_free(c); }
};
using ConfigPtr = std::unique_ptr<fga_config, ConfigDeleter>;

struct StringDeleter {
  void operator()(char* s) const { fga_string_free(s); }
};
using OwnedString = std::unique_ptr<char, StringDeleter>;

void print(char* summary) {
  OwnedString owned(summary);
  if (owned) std::fputs(owned.get(), stdout);
}

// Options shared by commands that build a configuration.
struct ConfigOptions {
  std::string preset = "toy";
  std::string file;
  std::vector<std::string> sets;
  std::string seed;

  void attach(CLI::App* app, const std::string& default_preset) {
    preset = default_preset;
    app->add_option("--preset", preset, "Configuration preset: toy, tiny or large")->capture_default_str();
    app->add_option("--config", file, "File of key=value lines applied over the preset");
    app->add_option("--set", sets, "Override one key, as key=value (repeatable)");
    app->add_option("--seed", seed, "Random seed");
  }

  ConfigPtr build() const {
    fga_config* raw = nullptr;
    check(fga_config_new(preset.c_str(), &raw));
    ConfigPtr cfg(raw);
    if (!file.empty()) check(fga_config_load_file(cfg.get(), file.c_str()));
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Failure{FGA_ERR_ARGUMENT, "--set expects key=value, got '" + kv + "'"};
      check(fga_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    if (!seed.empty()) check(fga_config_set(cfg.get(), "seed", seed.c_str()));
    check(fga_config_validate(cfg.get()));
    return cfg;
  }
};

const char* or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

void one_line(std::string& s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fine-grained-anchor human-object interaction detection"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(fga_version()));
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads; 0 reads FGA_THREADS")->capture_default_str();

  // gradcheck
  ConfigOptions gc_cfg;
  bool gc_corrupt = false, gc_json = false;
  std::string gc_out;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and model stage");
  gc_cfg.attach(gradcheck, "tiny");
  gradcheck->add_flag("--corrupt-gradient", gc_corrupt, "Perturb one analytic gradient per entry");
  gradcheck->add_flag("--json", gc_json, "Print the report as JSON");
  gradcheck->add_option("--out", gc_out, "Directory for gradcheck.json");

  // synth
  ConfigOptions sy_cfg;
  std::string sy_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic interaction corpus");
  sy_cfg.attach(synth, "toy");
  synth->add_option("--out", sy_out, "Output directory")->required();

  // train
  ConfigOptions tr_cfg;
  std::string tr_data, tr_out, tr_strategy = "stagewise";
  auto* train = app.add_subcommand("train", "Train a fresh model");
  tr_cfg.attach(train, "toy");
  train->add_option("--data", tr_data, "Directory holding train.json")->required();
  train->add_option("--out", tr_out, "Output directory")->required();
  train->add_option("--strategy", tr_strategy, "stagewise or end2end")->capture_default_str();

  // eval
  std::string ev_ckpt, ev_ann, ev_setting = "default", ev_rare, ev_out;
  auto* eval = app.add_subcommand("eval", "Role mean average precision of a checkpoint");
  eval->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
  eval->add_option("--annotations", ev_ann, "Annotation file to evaluate on")->required();
  eval->add_option("--setting", ev_setting, "default or known")->capture_default_str();
  eval->add_option("--rare-from", ev_rare, "Training annotations that define the rare classes");
  eval->add_option("--out", ev_out, "Output directory")->required();

  // metrics
  std::string me_ann, me_metric, me_edges, me_out;
  bool me_per_instance = false;
  auto* metrics = app.add_subcommand("metrics", "Dataset difficulty histogram");
  metrics->add_option("--annotations", me_ann, "Annotation file")->required();
  metrics->add_option("--metric", me_metric, "ar or lr")->required();
  metrics->add_option("--edges", me_edges, "Eleven comma-separated interval edges");
  metrics->add_option("--out", me_out, "Output directory")->required();
  metrics->add_flag("--per-instance", me_per_instance, "Also write one row per pair");

  // split
  std::string sp_ann, sp_select, sp_edges, sp_out;
  std::size_t sp_min = 10;
  auto* split = app.add_subcommand("split", "Train/test split by difficulty interval");
  split->add_option("--annotations", sp_ann, "Annotation file")->required();
  split->add_option("--select", sp_select, "Test intervals, as metric:bins such as ar:0 or lr:0-6")->required();
  split->add_option("--edges", sp_edges, "Eleven comma-separated interval edges");
  split->add_option("--min-instances", sp_min, "Drop classes with fewer pairs")->capture_default_str();
  split->add_option("--out", sp_out, "Output directory")->required();

  // dump-anchors
  std::string da_ckpt, da_image, da_out;
  auto* dump = app.add_subcommand("dump-anchors", "Fine-grained anchors of every decoder layer for one image");
  dump->add_option("--checkpoint", da_ckpt, "Model checkpoint")->required();
  dump->add_option("--image", da_image, "PPM image")->required();
  dump->add_option("--out", da_out, "Output JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    one_line(msg);
    std::fprintf(stderr, "error: argument: %s\n", msg.c_str());
    return FGA_ERR_ARGUMENT;
  }

  try {
    char* summary = nullptr;
    if (*gradcheck) {
      const ConfigPtr cfg = gc_cfg.build();
      int passed = 0;
      check(fga_gradcheck(cfg.get(), gc_corrupt, gc_json, or_null(gc_out), &passed, &summary));
      print(summary);
      if (!passed) {
        std::fprintf(stderr, "error: numeric: gradient check failed\n");
        return FGA_ERR_NUMERIC;
      }
    } else if (*synth) {
      const ConfigPtr cfg = sy_cfg.build();
      check(fga_synth(cfg.get(), sy_out.c_str(), &summary));
      print(summary);
    } else if (*train) {
      const ConfigPtr cfg = tr_cfg.build();
      check(fga_train(cfg.get(), tr_data.c_str(), tr_strategy.c_str(), tr_out.c_str(), threads, nullptr, nullptr,
                      &summary));
      print(summary);
    } else if (*eval) {
      check(fga_eval(ev_ckpt.c_str(), ev_ann.c_str(), ev_setting.c_str(), or_null(ev_rare), ev_out.c_str(), threads,
                     nullptr, &summary));
      print(summary);
    } else if (*metrics) {
      check(fga_metrics(me_ann.c_str(), me_metric.c_str(), or_null(me_edges), me_out.c_str(), me_per_instance,
                        &summary));
      print(summary);
    } else if (*split) {
      check(fga_split(sp_ann.c_str(), sp_select.c_str(), or_null(sp_edges), sp_min, sp_out.c_str(), &summary));
      print(summary);
    } else if (*dump) {
      check(fga_dump_anchors(da_ckpt.c_str(), da_image.c_str(), da_out.c_str(), &summary));
      print(summary);
    }
  } catch (Failure& f) {
    one_line(f.message);
    std::fprintf(stderr, "error: %s: %s\n", fga_status_name(f.status), f.message.c_str());
    return static_cast<int>(f.status);
  }
  return 0;
}
