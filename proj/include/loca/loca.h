// Copyright 2026 The LOCA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/* C interface to the LOCA library. Every call returns a loca_status; on
 * failure loca_last_error() holds a message for the calling thread until
 * its next failing call. Strings handed out by the library are released
 * with loca_string_free. */

#ifndef LOCA_LOCA_H_
#define LOCA_LOCA_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LOCA_API __declspec(dllexport)
#else
#define LOCA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum loca_status {
  LOCA_OK = 0,
  LOCA_ERR_DIMENSION = 1,
  LOCA_ERR_PARAMETER = 2,
  LOCA_ERR_RANGE = 3,
  LOCA_ERR_CONTRACT = 4,
  LOCA_ERR_STATE = 5,
  LOCA_ERR_CONFIG = 6,
  LOCA_ERR_IO = 7,
  LOCA_ERR_DEGENERATE_INPUT = 8,
  LOCA_ERR_NUMERIC = 9,
  LOCA_ERR_UNDEFINED = 10,
  LOCA_ERR_INVALID_ARGUMENT = 11, /* null handle or pointer */
  LOCA_ERR_INTERNAL = 12          /* anything else, e.g. out of memory */
} loca_status;

typedef struct loca_config loca_config;

/* Receives each metrics line (one JSON object, no newline). */
typedef void (*loca_record_fn)(const char* json_line, void* user);

LOCA_API const char* loca_version(void);
LOCA_API const char* loca_status_name(loca_status status);
LOCA_API const char* loca_last_error(void);
LOCA_API void loca_string_free(char* s);

/* Worker threads for data-parallel loops; results do not depend on it. */
LOCA_API loca_status loca_set_threads(size_t n);
LOCA_API size_t loca_threads(void);

/* A config collects file and flag entries; flags win over files whatever
 * the call order. loca_config_resolve applies preset, file and flags and
 * validates. Getters and jobs resolve on demand. */
LOCA_API loca_status loca_config_new(loca_config** out);
LOCA_API void loca_config_free(loca_config* cfg);
LOCA_API loca_status loca_config_add_file(loca_config* cfg, const char* path);
LOCA_API loca_status loca_config_set(loca_config* cfg, const char* key, const char* value);
LOCA_API loca_status loca_config_resolve(loca_config* cfg);
LOCA_API loca_status loca_config_get(loca_config* cfg, const char* key, char** value);
/* `key = value  # source` lines for every key. */
LOCA_API loca_status loca_config_dump(loca_config* cfg, char** text);

/* Pretrains into out_dir (config.txt, metrics.jsonl, checkpoints,
 * report.json). resume may be NULL. report receives report.json's text
 * and may be NULL. */
LOCA_API loca_status loca_pretrain(loca_config* cfg, const char* out_dir, const char* resume,
                                   int force, loca_record_fn on_record, void* user,
                                   char** report);

/* Held-out position accuracy and prediction entropy as JSON. */
LOCA_API loca_status loca_evaluate(loca_config* cfg, const char* checkpoint, int force,
                                   char** json);

/* Linear segmentation probe on frozen features as JSON. A NULL or empty
 * checkpoint probes the random initialisation. */
LOCA_API loca_status loca_probe(loca_config* cfg, const char* checkpoint, int force, char** json);

/* Writes a PNG panel of held-out sample `index`. checkpoint may be NULL. */
LOCA_API loca_status loca_inspect(loca_config* cfg, const char* checkpoint, size_t index,
                                  const char* out_png, int force);

#ifdef __cplusplus
}
#endif

#endif /* LOCA_LOCA_H_ */
