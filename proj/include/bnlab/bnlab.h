// Copyright 2026 The bnlab Authors
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

#ifndef BNLAB_BNLAB_H
#define BNLAB_BNLAB_H

#include <stddef.h>

#if defined(_WIN32)
#if defined(BNLAB_BUILDING_SHARED)
#define BNLAB_API __declspec(dllexport)
#else
#define BNLAB_API __declspec(dllimport)
#endif
#else
#define BNLAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bnlab_status {
  BNLAB_OK = 0,
  BNLAB_ERR_INVALID_ARGUMENT = 1,
  BNLAB_ERR_SHAPE = 2,
  BNLAB_ERR_NON_FINITE = 3,
  BNLAB_ERR_PRECONDITION = 4,
  BNLAB_ERR_CONFIG = 5,
  BNLAB_ERR_IO = 6,
  BNLAB_ERR_DIVERGED = 7,
  BNLAB_ERR_INTERNAL = 8
} bnlab_status;

/* Process exit codes used by the command line tool. */
enum {
  BNLAB_EXIT_OK = 0,
  BNLAB_EXIT_CONFIG = 1,
  BNLAB_EXIT_DIVERGED = 2,
  BNLAB_EXIT_VERIFY_FAILED = 3
};

typedef struct bnlab_config bnlab_config;

BNLAB_API const char* bnlab_version(void);

/* Message for the most recent failure on the calling thread; "" if none. */
BNLAB_API const char* bnlab_last_error(void);

BNLAB_API bnlab_status bnlab_config_create(bnlab_config** out);
BNLAB_API bnlab_status bnlab_config_from_json(const char* text, bnlab_config** out);
/* Accepts a plain config or a run manifest. */
BNLAB_API bnlab_status bnlab_config_from_file(const char* path, bnlab_config** out);
BNLAB_API void bnlab_config_destroy(bnlab_config* config);

BNLAB_API bnlab_status bnlab_config_set(bnlab_config* config, const char* key, const char* value);
/* "key=value" */
BNLAB_API bnlab_status bnlab_config_set_assignment(bnlab_config* config, const char* assignment);

/* Writes the resolved config as JSON. *needed receives the full length
   including the terminator; buffer may be NULL when capacity is 0. */
BNLAB_API bnlab_status bnlab_config_resolved_json(const bnlab_config* config, char* buffer,
                                                  size_t capacity, size_t* needed);

/* Names accepted by bnlab_run, in order. index past the end returns NULL. */
BNLAB_API const char* bnlab_command_name(size_t index);

/* Runs one command. out_dir NULL means the config's "out" value. On
   BNLAB_OK, *exit_code holds the BNLAB_EXIT_* outcome of the run. */
BNLAB_API bnlab_status bnlab_run(const char* command, const bnlab_config* config, const char* out_dir,
                                 int* exit_code);

#ifdef __cplusplus
}
#endif

#endif
