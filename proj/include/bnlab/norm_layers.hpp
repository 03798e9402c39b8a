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
#include <string>
#include <vector>

#include "bnlab/autodiff.hpp"
#include "bnlab/rng.hpp"
#include "bnlab/tensor.hpp"

namespace bnlab {

inline constexpr double kDefaultNormEps = 1e-5;

// Per-unit affine parameters of a normalization layer. eps is added to the
// variance under the square root; eps = 0 is allowed when every unit is
// known to have positive batch variance.
struct BatchNormParams {
  Tensor gamma;  // 1 x d
  Tensor beta;   // 1 x d
  double eps = kDefaultNormEps;

  static BatchNormParams identity(std::size_t units, double eps = kDefaultNormEps);
  std::size_t units() const { return gamma.cols(); }
};

// Batch statistics saved by bn_forward. sigma is the population standard
// deviation with eps under the root, so y_hat = (y - mu) / sigma.
struct BNCache {
  Tensor mu;     // 1 x d
  Tensor sigma;  // 1 x d
  Tensor y_hat;  // m x d
};

struct BnForward {
  Tensor z;
  BNCache cache;
};

struct BnGradients {
  Tensor d_input;  // m x d
  Tensor d_gamma;  // 1 x d
  Tensor d_beta;   // 1 x d
};

// Train-mode batch normalization z = gamma * (y - mu) / sigma + beta, with
// the variance normalized by m. Needs m >= 2 and sigma > 0 in every unit.
BnForward bn_forward(const Tensor& y, const BatchNormParams& params);

// Closed-form input gradient, per unit:
//   dy_b = gamma / (m sigma) * (m dz_b - sum_k dz_k - y_hat_b sum_k dz_k y_hat_k).
BnGradients bn_backward(const BNCache& cache, const BatchNormParams& params, const Tensor& dz);

inline constexpr std::size_t kDefaultJacobianBatchLimit = 64;

// Explicit per-unit Jacobian dz_b / dy_k = gamma / sigma * (1[b = k] - 1/m -
// y_hat_b y_hat_k / m), one m x m matrix per unit.
std::vector<Tensor> bn_input_jacobian(const BNCache& cache, const BatchNormParams& params,
                                      std::size_t max_batch = kDefaultJacobianBatchLimit);

// Time-varying noise injected after a BatchNorm layer. At step t each unit j
// draws a mean offset from U(-n_mu, n_mu) and a scale from U(1, n_sigma);
// every sample then gets shift ~ U(mean - r_mu, mean + r_mu) and
// scale ~ Normal(scale, r_sigma).
struct NoiseConfig {
  double n_mu = 0.5;
  double n_sigma = 1.25;
  double r_mu = 0.1;
  double r_sigma = 0.1;

  static NoiseConfig none() { return NoiseConfig{0.0, 1.0, 0.0, 0.0}; }
  void validate() const;
  bool operator==(const NoiseConfig&) const = default;
};

struct NoiseSample {
  Tensor scale;  // m x d
  Tensor shift;  // m x d
};

// Draws the noise for one layer at one step. Unit j uses its own stream
// rng.split({step, j}), so the result does not depend on evaluation order.
NoiseSample sample_noise(std::size_t rows, std::size_t units, const NoiseConfig& cfg,
                         const Rng& rng, std::uint64_t step);

// scale * z + shift with noise from sample_noise.
Tensor noisy_bn_apply(const Tensor& z, const NoiseConfig& cfg, const Rng& rng, std::uint64_t step);

enum class LpOrder { kOne, kTwo, kInfinity };

std::string lp_order_name(LpOrder p);

// Mean-centering followed by division by the per-unit power mean of the raw
// (uncentered) activations:
//   nu_j = ((1/m) sum_b |y_bj|^p)^(1/p),  nu_j = max_b |y_bj| for p = inf,
//   z = gamma * (y - mu) / (nu + eps) + beta.
struct LpNormConfig {
  LpOrder p = LpOrder::kTwo;
  Tensor gamma;
  Tensor beta;
  double eps = kDefaultNormEps;
};

struct LpCache {
  Tensor mu;
  Tensor nu;
};

struct LpForward {
  Tensor z;
  LpCache cache;
};

LpForward lp_norm_forward(const Tensor& y, const LpNormConfig& cfg);

// Graph builders. add_batch_norm and add_lp_norm insert fused layers with
// hand-written gradients; the *_composed variants build the same functions
// from primitive ops, an independent route for checking the fused ones.
NodeId add_batch_norm(Graph& graph, NodeId y, NodeId gamma, NodeId beta, double eps);
NodeId add_batch_norm_composed(Graph& graph, NodeId y, NodeId gamma, NodeId beta, double eps);
NodeId add_lp_norm(Graph& graph, NodeId y, NodeId gamma, NodeId beta, LpOrder p, double eps);
NodeId add_lp_norm_composed(Graph& graph, NodeId y, NodeId gamma, NodeId beta, LpOrder p,
                            double eps);

}  // namespace bnlab
