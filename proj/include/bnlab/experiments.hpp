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

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "bnlab/instrumentation.hpp"
#include "bnlab/networks.hpp"
#include "bnlab/theory.hpp"
#include "bnlab/training.hpp"

namespace bnlab {

inline constexpr int kManifestSchema = 1;

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitDiverged = 2,
  kExitVerifyFailed = 3,
};

enum class ModelKind { kDln, kMlp };

struct ModelSettings {
  ModelKind kind = ModelKind::kDln;
  DlnOptions dln;
  MlpOptions mlp;
  NormKind norm() const { return kind == ModelKind::kDln ? dln.norm : mlp.norm; }
};

struct InstrumentSettings {
  std::size_t ics_every = 50;
  std::size_t probe_every = 50;
  std::vector<double> probe_multipliers;
  std::size_t moments_every = 100;
  std::size_t moments_layer = 0;
  std::size_t moments_units = 5;
};

struct CompareSettings {
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
};

// Fully resolved settings: every "auto" value replaced by its per-model default.
struct Settings {
  std::uint64_t seed = 0;
  std::string out;
  ModelSettings model;
  TrainConfig train;
  bool divergence_expected = false;
  InstrumentSettings instrument;
  VerifyOptions verify;
  CompareSettings compare;
};

// JSON configuration with sections model, train, instrument, verify and
// compare plus top-level seed and out. Unknown keys and wrong types are
// rejected with ErrorCode::kConfig. A run manifest is accepted as well; its
// resolved config is used.
class ExperimentConfig {
 public:
  ExperimentConfig();
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig from_file(const std::filesystem::path& path);

  // key is "section.name" or a top-level name; value is parsed as JSON when
  // possible and taken as a string otherwise.
  void set(const std::string& key, const std::string& value);
  void set_assignment(const std::string& assignment);  // "key=value"

  Settings resolve() const;
  std::string resolved_json() const;  // pretty-printed, every default expanded

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
  std::shared_ptr<Impl> mutable_impl();
};

struct RunResult {
  int exit_code = kExitOk;
  std::vector<std::string> artifacts;
  std::string message;
};

// Runs train | ics | probe | verify | compare and writes the CSV/JSON
// artifacts plus manifest.json into out_dir (created if needed).
RunResult run_command(const std::string& command, const ExperimentConfig& config,
                      const std::filesystem::path& out_dir);

std::vector<std::string> command_names();

// One compare-battery member: a normalization and a training mode.
struct Variant {
  std::string name;
  NormKind norm = NormKind::kNone;
  TrainMode mode = TrainMode::kSimultaneous;
};
// Accepts vanilla, adjusted, reduced_lr, any norm name, or "norm:mode".
Variant parse_variant(const std::string& name);

// %.17g formatting; empty string for NaN.
std::string format_double(double v);

}  // namespace bnlab
