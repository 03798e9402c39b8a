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

#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "bnlab/bnlab.h"

static int failures = 0;

#define EXPECT(cond)                                             \
  do {                                                           \
    if (!(cond)) {                                               \
      fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                \
    }                                                            \
  } while (0)

static long file_size(const char* path) {
  FILE* f = fopen(path, "rb");
  long n = -1;
  if (f == NULL) return -1;
  if (fseek(f, 0, SEEK_END) == 0) n = ftell(f);
  fclose(f);
  return n;
}

int main(int argc, char** argv) {
  const char* dir = argc > 1 ? argv[1] : "capi_out";
  char path[4096];
  bnlab_config* cfg = NULL;
  bnlab_config* bad = NULL;
  size_t needed = 0;
  char* text;
  int exit_code = -1;
  size_t i;

  EXPECT(strlen(bnlab_version()) > 0);
  EXPECT(strcmp(bnlab_last_error(), "") == 0);
  for (i = 0; bnlab_command_name(i) != NULL; ++i) {
  }
  EXPECT(i == 5);
  EXPECT(strcmp(bnlab_command_name(0), "train") == 0);

  EXPECT(bnlab_config_from_json("{\"train\": {\"nope\": 1}}", &bad) == BNLAB_ERR_CONFIG);
  EXPECT(bad == NULL);
  EXPECT(strstr(bnlab_last_error(), "nope") != NULL);
  EXPECT(bnlab_config_create(NULL) == BNLAB_ERR_INVALID_ARGUMENT);
  EXPECT(bnlab_config_from_file("/nonexistent/bnlab.json", &bad) != BNLAB_OK);

  EXPECT(bnlab_config_create(&cfg) == BNLAB_OK);
  EXPECT(bnlab_config_set(cfg, "model.depth", "3") == BNLAB_OK);
  EXPECT(bnlab_config_set(cfg, "model.dim", "3") == BNLAB_OK);
  EXPECT(bnlab_config_set_assignment(cfg, "model.samples=16") == BNLAB_OK);
  EXPECT(bnlab_config_set_assignment(cfg, "train.steps=4") == BNLAB_OK);
  EXPECT(bnlab_config_set(cfg, "train.wat", "4") == BNLAB_ERR_CONFIG);
  EXPECT(bnlab_config_set_assignment(cfg, "no_equals_sign") == BNLAB_ERR_CONFIG);

  EXPECT(bnlab_config_resolved_json(cfg, NULL, 0, &needed) == BNLAB_OK);
  EXPECT(needed > 1);
  text = (char*)malloc(needed);
  EXPECT(bnlab_config_resolved_json(cfg, text, needed - 1, &needed) == BNLAB_ERR_INVALID_ARGUMENT);
  EXPECT(bnlab_config_resolved_json(cfg, text, needed, &needed) == BNLAB_OK);
  EXPECT(strlen(text) + 1 == needed);
  EXPECT(strstr(text, "\"samples\": 16") != NULL);
  free(text);

  EXPECT(bnlab_run("dance", cfg, dir, &exit_code) == BNLAB_ERR_CONFIG);
  EXPECT(bnlab_run("train", cfg, dir, &exit_code) == BNLAB_OK);
  EXPECT(exit_code == BNLAB_EXIT_OK);
  snprintf(path, sizeof path, "%s/loss.csv", dir);
  EXPECT(file_size(path) > 0);
  snprintf(path, sizeof path, "%s/manifest.json", dir);
  EXPECT(file_size(path) > 0);

  EXPECT(bnlab_config_from_file(path, &bad) == BNLAB_OK);
  EXPECT(bad != NULL);
  bnlab_config_destroy(bad);

  EXPECT(bnlab_config_set(cfg, "train.lr", "50") == BNLAB_OK);
  EXPECT(bnlab_run("train", cfg, dir, &exit_code) == BNLAB_OK);
  EXPECT(exit_code == BNLAB_EXIT_DIVERGED);

  bnlab_config_destroy(cfg);
  bnlab_config_destroy(NULL);
  if (failures == 0) printf("capi: ok\n");
  return failures == 0 ? 0 : 1;
}
