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
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bnlab/networks.hpp"

namespace bnlab {

struct IcsRecord {
  std::size_t step = 0;
  std::size_t layer = 0;  // parameter group index, input side first
  double l2_diff = 0.0;
  std::optional<double> cos_angle;  // empty when either gradient is zero
};

// G is the gradient of each group at the current parameters; G' is the
// gradient of group i after every earlier group has taken its plain step
// W - lr * G. Both use the same batch and noise draw. `net` is not modified.
std::vector<IcsRecord> measure_ics(const NetworkState& net, Evaluator& eval, const Batch& batch,
                                   double lr, std::size_t step, bool bundle_norm_with_dense = true);
std::vector<IcsRecord> measure_ics(const NetworkState& net, const Batch& batch, double lr,
                                   std::size_t step, bool bundle_norm_with_dense = true);

// Loss (and gradient when `grad` is non-null) at a flat parameter vector.
using Objective = std::function<double(std::span<const double> theta, std::vector<double>* grad)>;

struct Summary {
  double min = 0.0;
  double max = 0.0;
  double median = 0.0;
};

struct ProbeReport {
  std::size_t step = 0;
  double lr = 0.0;
  double base_loss = 0.0;
  double grad_norm = 0.0;
  std::vector<double> multipliers;
  std::vector<double> losses;          // NaN marks a non-finite probe point
  std::vector<double> grad_l2_diffs;   // NaN marks a non-finite probe point
  double effective_beta = 0.0;
  std::size_t non_finite = 0;
  Summary loss_summary;       // over finite probe losses
  Summary grad_diff_summary;  // over finite gradient differences
};

std::vector<double> default_dln_multipliers();  // 20 log-spaced in [0.01, 30]
std::vector<double> default_mlp_multipliers();  // 8 linear in [0.5, 4]

// Probes theta - alpha * lr * g for each multiplier alpha, g = grad L(theta).
ProbeReport probe_landscape(const Objective& objective, std::span<const double> theta, double lr,
                            std::span<const double> multipliers);
ProbeReport probe_landscape(const NetworkState& net, Evaluator& eval, const Batch& batch,
                            double lr, std::span<const double> multipliers, std::size_t step);

struct ActivationMomentRecord {
  std::size_t step = 0;
  std::size_t layer = 0;
  std::size_t unit = 0;
  double mean = 0.0;
  double variance = 0.0;  // population variance over the batch
};

// Moments of the output of network layer `layer` (index into net.layers).
std::vector<ActivationMomentRecord> capture_activation_moments(
    const NetworkState& net, Evaluator& eval, const Batch& batch, std::size_t layer,
    std::span<const std::size_t> units, std::size_t step);
std::vector<ActivationMomentRecord> capture_activation_moments(
    const NetworkState& net, const Batch& batch, std::size_t layer,
    std::span<const std::size_t> units, std::size_t step);

Summary summarize(std::vector<double> values);

}  // namespace bnlab
