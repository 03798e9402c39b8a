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
#include <optional>
#include <string>
#include <vector>

#include "bnlab/autodiff.hpp"
#include "bnlab/norm_layers.hpp"
#include "bnlab/tensor.hpp"

namespace bnlab {

// Loss applied on top of the pre-normalization activations y (vanilla) or
// the normalized activations z (BN branch).
enum class DownstreamKind {
  kQuadratic,  // 1/2 (v - c)^T A (v - c), A = B^T B + 1e-3 I over vec(v)
  kSmooth,     // sum a * tanh(s * v) + 1/2 sum w * v^2
  kSoftmaxCe,  // softmax cross-entropy of v V + b against one-hot labels
};

std::string downstream_kind_name(DownstreamKind kind);

struct Downstream {
  DownstreamKind kind = DownstreamKind::kQuadratic;
  std::vector<Tensor> consts;

  // Appends the loss of `v` (m x d) to `graph`; constants become bound roots.
  NodeId build(Graph& graph, NodeId v) const;
};

Downstream make_downstream(DownstreamKind kind, std::size_t m, std::size_t d, Rng& rng);

// Vanilla and BN branches sharing X, W and the downstream loss. gamma = sigma
// and beta = mu (eps = 0), so z = y at the probe point.
struct CoupledPair {
  std::size_t m = 0;
  std::size_t d = 0;
  Tensor x;  // m x n_in
  Tensor w;  // n_in x d
  Tensor y;  // x w
  BatchNormParams bn;
  BNCache cache;
  Downstream downstream;
  std::uint64_t seed = 0;

  double vanilla_loss(const Tensor& y_at) const;
  double bn_loss(const Tensor& y_at) const;
  Tensor vanilla_grad(const Tensor& y_at) const;  // d L / d y
  Tensor bn_grad(const Tensor& y_at) const;       // d L_hat / d y, gamma and beta held fixed
};

// Needs m >= 3. Throws kPrecondition if a unit keeps zero variance after resampling.
CoupledPair build_coupled_pair(std::size_t m, std::size_t d, DownstreamKind kind, std::uint64_t seed);

struct Metric {
  std::string name;
  double value = 0.0;
  double tol = 0.0;
  bool is_slack = false;  // slack passes when value >= -tol, residual when |value| <= tol
  bool pass() const;
};

struct CheckReport {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t m = 0;
  std::size_t d = 0;
  std::string downstream;
  double lhs = 0.0;
  double rhs = 0.0;
  std::vector<Metric> metrics;
  bool skipped = false;
  std::string note;

  bool pass() const;  // skipped reports pass
  const Metric* metric(const std::string& name) const;
};

// |a - b| / max(1, |a|, |b|)
double relative_gap(double a, double b);

inline constexpr double kClosedFormTol = 1e-9;
inline constexpr double kHvpTol = 1e-4;

CheckReport check_lipschitz(const CoupledPair& pair);
CheckReport check_smoothness(const CoupledPair& pair);
CheckReport check_minimax_lipschitz(const CoupledPair& pair, double lambda);
CheckReport check_minimax_smoothness(const CoupledPair& pair, double lambda);
CheckReport check_rescaling_observation(const Tensor& w, const Tensor& x, const Downstream& downstream);
CheckReport check_init_lemma(const Tensor& w0, const Tensor& w_star);
CheckReport check_bn_gradient_facts(const Tensor& y, const BatchNormParams& params,
                                    const Downstream& downstream);

// Builds a quadratic pair in which at least one unit has <g, y_hat> > 0,
// resampling the downstream target up to `attempts` times.
CoupledPair build_smoothness_pair(std::size_t m, std::size_t d, std::uint64_t seed,
                                  std::size_t attempts = 64);

struct VerifyOptions {
  std::size_t seeds = 100;
  std::uint64_t base_seed = 0;
  std::size_t m_min = 3;
  std::size_t m_max = 16;
  std::size_t d_min = 1;
  std::size_t d_max = 8;
  double lambda = 2.5;
};

std::vector<CheckReport> run_verification(const VerifyOptions& options);

}  // namespace bnlab
