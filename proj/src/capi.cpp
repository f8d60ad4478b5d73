// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "fgahoi/commands.hpp"
#include "fgahoi/fgahoi.h"

struct fga_config {
  fga::RunConfig value;
};

struct fga_model {
  fga::Model value;
};

namespace {

thread_local std::string last_error;

class ArgumentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fga_status status_of(fga::ErrorKind kind) {
  switch (kind) {
    case fga::ErrorKind::kDimension: return FGA_ERR_DIMENSION;
    case fga::ErrorKind::kConfig: return FGA_ERR_CONFIG;
    case fga::ErrorKind::kContract: return FGA_ERR_CONTRACT;
    case fga::ErrorKind::kNumeric: return FGA_ERR_NUMERIC;
    case fga::ErrorKind::kCapacity: return FGA_ERR_CAPACITY;
    case fga::ErrorKind::kData: return FGA_ERR_DATA;
    case fga::ErrorKind::kParse: return FGA_ERR_PARSE;
    case fga::ErrorKind::kIo: return FGA_ERR_IO;
    case fga::ErrorKind::kGeneration: return FGA_ERR_GENERATION;
  }
  return FGA_ERR_INTERNAL;
}

template <typename F>
fga_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return FGA_OK;
  } catch (const fga::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const ArgumentError& e) {
    last_error = e.what();
    return FGA_ERR_ARGUMENT;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return FGA_ERR_CAPACITY;
  } catch (const std::exception& e) {
    last_error = e.what();
    return FGA_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown failure";
    return FGA_ERR_INTERNAL;
  }
}

template <typename T>
T& deref(T* p, const char* what) {
  if (!p) throw ArgumentError(std::string(what) + " is null");
  return *p;
}

std::string str(const char* s, const char* what) {
  if (!s) throw ArgumentError(std::string(what) + " is null");
  return s;
}

std::string opt_str(const char* s) { return s ? s : ""; }

char* copy_out(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put_summary(char** summary, const fga::CommandResult& r) {
  if (summary) *summary = copy_out(r.summary);
}

std::size_t thread_count(std::size_t threads) { return threads ? threads : fga::threads_from_env(); }

}  // namespace

extern "C" {

const char* fga_version(void) { return "1.0.0"; }

const char* fga_status_name(fga_status status) {
  switch (status) {
    case FGA_OK: return "ok";
    case FGA_ERR_ARGUMENT: return "argument";
    case FGA_ERR_INTERNAL: return "internal";
    default: break;
  }
  if (status >= FGA_ERR_DIMENSION && status <= FGA_ERR_GENERATION) {
    return fga::error_kind_name(static_cast<fga::ErrorKind>(status - 1));
  }
  return "unknown";
}

const char* fga_last_error(void) { return last_error.c_str(); }

void fga_string_free(char* s) { std::free(s); }

fga_status fga_config_new(const char* preset, fga_config** out) {
  return guarded([&] {
    auto& slot = deref(out, "out");
    slot = nullptr;
    slot = new fga_config{fga::RunConfig::preset(str(preset, "preset"))};
  });
}

fga_status fga_config_load_file(fga_config* config, const char* path) {
  return guarded([&] {
    auto& c = deref(config, "config");
    c.value = fga::RunConfig::load(str(path, "path"), c.value);
  });
}

fga_status fga_config_set(fga_config* config, const char* key, const char* value) {
  return guarded([&] { deref(config, "config").value.set(str(key, "key"), str(value, "value")); });
}

fga_status fga_config_get(const fga_config* config, const char* key, char** value) {
  return guarded([&] { deref(value, "value") = copy_out(deref(config, "config").value.get(str(key, "key"))); });
}

fga_status fga_config_to_text(const fga_config* config, char** text) {
  return guarded([&] { deref(text, "text") = copy_out(deref(config, "config").value.to_text()); });
}

fga_status fga_config_validate(const fga_config* config) {
  return guarded([&] { deref(config, "config").value.validate(); });
}

void fga_config_free(fga_config* config) { delete config; }

fga_status fga_model_create(const fga_config* config, const char* mode, fga_model** out) {
  return guarded([&] {
    auto& slot = deref(out, "out");
    slot = nullptr;
    const fga::MergeMode m = fga::parse_merge_mode(str(mode, "mode"));
    slot = new fga_model{fga::create_model(deref(config, "config").value, m)};
  });
}

fga_status fga_model_load(const char* path, fga_model** out) {
  return guarded([&] {
    auto& slot = deref(out, "out");
    slot = nullptr;
    slot = new fga_model{fga::load_checkpoint(str(path, "path"))};
  });
}

fga_status fga_model_save(const fga_model* model, const char* path) {
  return guarded([&] { fga::save_checkpoint(str(path, "path"), deref(model, "model").value); });
}

fga_status fga_model_num_params(const fga_model* model, size_t* count) {
  return guarded([&] { deref(count, "count") = deref(model, "model").value.params.total_size(); });
}

fga_status fga_model_config(const fga_model* model, fga_config** out) {
  return guarded([&] {
    auto& slot = deref(out, "out");
    slot = nullptr;
    slot = new fga_config{deref(model, "model").value.config};
  });
}

void fga_model_free(fga_model* model) { delete model; }

fga_status fga_gradcheck(const fga_config* config, int corrupt, int json, const char* out_dir, int* passed,
                         char** summary) {
  return guarded([&] {
    bool ok = false;
    const auto r = fga::cmd_gradcheck(deref(config, "config").value, corrupt != 0, json != 0, opt_str(out_dir), &ok);
    deref(passed, "passed") = ok ? 1 : 0;
    put_summary(summary, r);
  });
}

fga_status fga_synth(const fga_config* config, const char* out_dir, char** summary) {
  return guarded([&] { put_summary(summary, fga::cmd_synth(deref(config, "config").value, str(out_dir, "out_dir"))); });
}

fga_status fga_train(const fga_config* config, const char* data_dir, const char* strategy, const char* out_dir,
                     size_t threads, double* initial_loss, double* final_loss, char** summary) {
  return guarded([&] {
    fga::TrainSummary s;
    const auto r = fga::cmd_train(deref(config, "config").value, str(data_dir, "data_dir"),
                                  fga::parse_strategy(str(strategy, "strategy")), str(out_dir, "out_dir"),
                                  thread_count(threads), &s);
    if (initial_loss) *initial_loss = s.initial_loss;
    if (final_loss) *final_loss = s.final_loss;
    put_summary(summary, r);
  });
}

fga_status fga_eval(const char* checkpoint, const char* annotations, const char* setting, const char* rare_from,
                    const char* out_dir, size_t threads, double* full_map, char** summary) {
  return guarded([&] {
    fga::EvalReport report;
    const auto r = fga::cmd_eval(str(checkpoint, "checkpoint"), str(annotations, "annotations"),
                                 fga::parse_setting(str(setting, "setting")), opt_str(rare_from),
                                 str(out_dir, "out_dir"), thread_count(threads), &report);
    if (full_map) *full_map = report.full;
    put_summary(summary, r);
  });
}

fga_status fga_metrics(const char* annotations, const char* metric, const char* edges, const char* out_dir,
                       int per_instance, char** summary) {
  return guarded([&] {
    put_summary(summary, fga::cmd_metrics(str(annotations, "annotations"), fga::parse_metric(str(metric, "metric")),
                                          opt_str(edges), str(out_dir, "out_dir"), per_instance != 0));
  });
}

fga_status fga_split(const char* annotations, const char* selector, const char* edges, size_t min_instances,
                     const char* out_dir, char** summary) {
  return guarded([&] {
    fga::SplitSelector sel = fga::parse_selector(str(selector, "selector"));
    if (edges) sel.edges = fga::parse_edges(edges);
    sel.min_instances = min_instances;
    put_summary(summary, fga::cmd_split(str(annotations, "annotations"), sel, str(out_dir, "out_dir")));
  });
}

fga_status fga_dump_anchors(const char* checkpoint, const char* image, const char* out_path, char** summary) {
  return guarded([&] {
    put_summary(summary, fga::cmd_dump_anchors(str(checkpoint, "checkpoint"), str(image, "image"),
                                               str(out_path, "out_path")));
  });
}

}  // extern "C"
