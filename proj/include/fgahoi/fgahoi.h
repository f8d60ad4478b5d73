/* Copyright 2026 The fgahoi Authors. All Rights Reserved. */
/* SPDX-License-Identifier: Apache-2.0 */

/* C interface to the fgahoi library. Every call returns an fga_status; on
 * failure fga_last_error() describes the cause for the calling thread.
 * Strings returned through char** are owned by the caller and released with
 * fga_string_free. */

#ifndef FGAHOI_FGAHOI_H_
#define FGAHOI_FGAHOI_H_

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define FGA_API __attribute__((visibility("default")))
#else
#define FGA_API
#endif

typedef enum fga_status {
  FGA_OK = 0,
  FGA_ERR_DIMENSION = 1,
  FGA_ERR_CONFIG = 2,
  FGA_ERR_CONTRACT = 3,
  FGA_ERR_NUMERIC = 4,
  FGA_ERR_CAPACITY = 5,
  FGA_ERR_DATA = 6,
  FGA_ERR_PARSE = 7,
  FGA_ERR_IO = 8,
  FGA_ERR_GENERATION = 9,
  FGA_ERR_ARGUMENT = 10, /* null handle or pointer, unknown enum name */
  FGA_ERR_INTERNAL = 11
} fga_status;

typedef struct fga_config fga_config;
typedef struct fga_model fga_model;

FGA_API const char* fga_version(void);
/* Short lowercase name such as "config" or "io". */
FGA_API const char* fga_status_name(fga_status status);
/* Message of the last failed call on this thread; "" after a success. */
FGA_API const char* fga_last_error(void);
FGA_API void fga_string_free(char* s);

/* Configuration: a preset ("toy", "tiny", "large") with key=value overrides. */
FGA_API fga_status fga_config_new(const char* preset, fga_config** out);
/* Applies the key=value lines of a file on top of `config`. */
FGA_API fga_status fga_config_load_file(fga_config* config, const char* path);
FGA_API fga_status fga_config_set(fga_config* config, const char* key, const char* value);
FGA_API fga_status fga_config_get(const fga_config* config, const char* key, char** value);
FGA_API fga_status fga_config_to_text(const fga_config* config, char** text);
FGA_API fga_status fga_config_validate(const fga_config* config);
FGA_API void fga_config_free(fga_config* config);

/* Models. `mode` is "base", "hsam" or "full". */
FGA_API fga_status fga_model_create(const fga_config* config, const char* mode, fga_model** out);
FGA_API fga_status fga_model_load(const char* path, fga_model** out);
FGA_API fga_status fga_model_save(const fga_model* model, const char* path);
FGA_API fga_status fga_model_num_params(const fga_model* model, size_t* count);
FGA_API fga_status fga_model_config(const fga_model* model, fga_config** out);
FGA_API void fga_model_free(fga_model* model);

/* Commands. Each writes files under its output location and returns a short
 * human-readable summary (may be NULL when not wanted). `threads` of 0
 * reads FGA_THREADS. */

/* Finite-difference suite over every op and model stage. *passed is 1 when
 * every entry is below the tolerance. `corrupt` perturbs one analytic
 * gradient per entry. `json` selects the summary format; out_dir may be NULL. */
FGA_API fga_status fga_gradcheck(const fga_config* config, int corrupt, int json, const char* out_dir, int* passed,
                                 char** summary);

FGA_API fga_status fga_synth(const fga_config* config, const char* out_dir, char** summary);

/* `strategy` is "stagewise" or "end2end"; data_dir holds train.json.
 * initial_loss and final_loss may be NULL. */
FGA_API fga_status fga_train(const fga_config* config, const char* data_dir, const char* strategy,
                             const char* out_dir, size_t threads, double* initial_loss, double* final_loss,
                             char** summary);

/* `setting` is "default" or "known"; rare_from (a training annotation file)
 * may be NULL. full_map may be NULL. */
FGA_API fga_status fga_eval(const char* checkpoint, const char* annotations, const char* setting,
                            const char* rare_from, const char* out_dir, size_t threads, double* full_map,
                            char** summary);

/* `metric` is "ar" or "lr"; edges is "e0,...,e10" or NULL for the defaults. */
FGA_API fga_status fga_metrics(const char* annotations, const char* metric, const char* edges, const char* out_dir,
                               int per_instance, char** summary);

/* `selector` is "<metric>:<bins>" such as "ar:0" or "lr:0-6"; edges may be
 * NULL; classes with fewer than min_instances pairs are dropped first. */
FGA_API fga_status fga_split(const char* annotations, const char* selector, const char* edges, size_t min_instances,
                             const char* out_dir, char** summary);

FGA_API fga_status fga_dump_anchors(const char* checkpoint, const char* image, const char* out_path, char** summary);

#ifdef __cplusplus
}
#endif

#endif /* FGAHOI_FGAHOI_H_ */
