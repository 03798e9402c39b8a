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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bnlab/networks.hpp"

namespace bnlab {

enum class TrainMode {
  kSimultaneous,  // all groups updated from one gradient
  kAdjusted,      // groups updated one by one, input to output, with fresh gradients
  kReducedLr,     // simultaneous with lr divided by the number of groups
};

std::string train_mode_name(TrainMode mode);
std::optional<TrainMode> parse_train_mode(const std::string& name);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t steps = 1000;
  std::size_t batch_size = 0;  // 0 = full batch
  TrainMode mode = TrainMode::kSimultaneous;
  std::uint64_t seed = 0;      // mini-batch shuffling
  std::size_t snapshot_every = 0;  // 0 = no gradient snapshots
  bool bundle_norm_with_dense = true;
  double divergence_threshold = 1e12;

  void validate() const;
};

// Per-group flattened gradients at one step.
struct GradientSnapshot {
  std::size_t step = 0;
  std::vector<std::vector<double>> groups;
};

struct StepResult {
  double loss = 0.0;
  GradientSnapshot snapshot;  // populated by step_simultaneous only
};

// One gradient at the current parameters, then W <- W - lr * G for every parameter.
StepResult step_simultaneous(NetworkState& net, Evaluator& eval, const Batch& batch, double lr,
                             std::size_t step, bool bundle_norm_with_dense = true);

// For each group in input-to-output order: recompute the gradient at the
// partially updated parameters and update that group only. Returns the loss
// at the parameters the step started from.
StepResult step_adjusted(NetworkState& net, Evaluator& eval, const Batch& batch, double lr,
                         std::size_t step, bool bundle_norm_with_dense = true);

struct TrainHook {
  std::size_t every = 1;
  // Called before the update of step `step` (and once after the last step
  // with step == steps when that is a multiple of `every`).
  std::function<void(std::size_t step, const NetworkState& net, const Batch& batch)> fn;
};

struct TrainTrace {
  std::vector<double> loss;  // loss[t] is the loss before the update of step t
  std::vector<GradientSnapshot> snapshots;
  bool diverged = false;
  std::size_t diverged_step = 0;
  std::string divergence_reason;
  std::size_t gradient_evaluations = 0;
  double initial_loss = 0.0;  // full-data loss before training (noise step 0)
  double final_loss = 0.0;    // full-data loss after the last step (noise step = steps)
};

TrainTrace train(NetworkState& net, const Dataset& data, const TrainConfig& cfg,
                 const std::vector<TrainHook>& hooks = {});

// Sequential shuffled epochs over `rows` indices; reshuffles at every epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t rows, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  void reshuffle();

  std::size_t rows_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace bnlab
