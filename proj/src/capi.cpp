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

#include "bnlab/bnlab.h"

#include <cstring>
#include <new>
#include <string>

#include "bnlab/experiments.hpp"

struct bnlab_config {
  bnlab::ExperimentConfig config;
};

namespace {

thread_local std::string last_error;

bnlab_status status_of(bnlab::ErrorCode code) {
  switch (code) {
    case bnlab::ErrorCode::kInvalidArgument: return BNLAB_ERR_INVALID_ARGUMENT;
    case bnlab::ErrorCode::kShapeMismatch: return BNLAB_ERR_SHAPE;
    case bnlab::ErrorCode::kNonFinite: return BNLAB_ERR_NON_FINITE;
    case bnlab::ErrorCode::kPrecondition: return BNLAB_ERR_PRECONDITION;
    case bnlab::ErrorCode::kConfig: return BNLAB_ERR_CONFIG;
    case bnlab::ErrorCode::kIo: return BNLAB_ERR_IO;
    case bnlab::ErrorCode::kDiverged: return BNLAB_ERR_DIVERGED;
  }
  return BNLAB_ERR_INTERNAL;
}

template <typename F>
bnlab_status guarded(F&& f) {
  last_error.clear();
  try {
    f();
    return BNLAB_OK;
  } catch (const bnlab::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown error";
  }
  return BNLAB_ERR_INTERNAL;
}

bnlab_status null_argument(const char* name) {
  last_error = std::string(name) + " must not be NULL";
  return BNLAB_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* bnlab_version(void) { return BNLAB_VERSION; }

const char* bnlab_last_error(void) { return last_error.c_str(); }

bnlab_status bnlab_config_create(bnlab_config** out) {
  if (out == nullptr) return null_argument("out");
  *out = nullptr;
  return guarded([&] { *out = new bnlab_config{}; });
}

bnlab_status bnlab_config_from_json(const char* text, bnlab_config** out) {
  if (out == nullptr) return null_argument("out");
  *out = nullptr;
  if (text == nullptr) return null_argument("text");
  return guarded([&] { *out = new bnlab_config{bnlab::ExperimentConfig::from_json(text)}; });
}

bnlab_status bnlab_config_from_file(const char* path, bnlab_config** out) {
  if (out == nullptr) return null_argument("out");
  *out = nullptr;
  if (path == nullptr) return null_argument("path");
  return guarded([&] { *out = new bnlab_config{bnlab::ExperimentConfig::from_file(path)}; });
}

void bnlab_config_destroy(bnlab_config* config) { delete config; }

bnlab_status bnlab_config_set(bnlab_config* config, const char* key, const char* value) {
  if (config == nullptr) return null_argument("config");
  if (key == nullptr) return null_argument("key");
  if (value == nullptr) return null_argument("value");
  return guarded([&] { config->config.set(key, value); });
}

bnlab_status bnlab_config_set_assignment(bnlab_config* config, const char* assignment) {
  if (config == nullptr) return null_argument("config");
  if (assignment == nullptr) return null_argument("assignment");
  return guarded([&] { config->config.set_assignment(assignment); });
}

bnlab_status bnlab_config_resolved_json(const bnlab_config* config, char* buffer, size_t capacity,
                                        size_t* needed) {
  if (config == nullptr) return null_argument("config");
  if (buffer == nullptr && capacity > 0) return null_argument("buffer");
  return guarded([&] {
    const std::string text = config->config.resolved_json();
    if (needed != nullptr) *needed = text.size() + 1;
    if (capacity == 0) return;
    if (capacity < text.size() + 1)
      bnlab::fail(bnlab::ErrorCode::kInvalidArgument,
                  "buffer too small: need " + std::to_string(text.size() + 1) + " bytes");
    std::memcpy(buffer, text.c_str(), text.size() + 1);
  });
}

const char* bnlab_command_name(size_t index) {
  static const std::vector<std::string> names = bnlab::command_names();
  return index < names.size() ? names[index].c_str() : nullptr;
}

bnlab_status bnlab_run(const char* command, const bnlab_config* config, const char* out_dir,
                       int* exit_code) {
  if (command == nullptr) return null_argument("command");
  if (config == nullptr) return null_argument("config");
  if (exit_code == nullptr) return null_argument("exit_code");
  return guarded([&] {
    const std::string dir = out_dir != nullptr ? std::string(out_dir) : config->config.resolve().out;
    const bnlab::RunResult r = bnlab::run_command(command, config->config, dir);
    *exit_code = r.exit_code;
    if (!r.message.empty()) last_error = r.message;
  });
}

}  // extern "C"
