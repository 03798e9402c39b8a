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
#include "bnlab/rng.hpp"
#include "bnlab/tensor.hpp"

namespace bnlab {

enum class LayerKind {
  kDense,           // y = x W (+ b); params {W} or {W, b}
  kBatchNorm,       // params {gamma, beta}
  kNoisyBatchNorm,  // BatchNorm followed by step-varying noise; params {gamma, beta}
  kLpNorm,          // params {gamma, beta}
  kNoise,           // the same noise without normalization; no params
  kRelu,
};

std::string layer_kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = false;
  LpOrder p = LpOrder::kTwo;

  bool operator==(const LayerSpec&) const = default;
};

struct Layer {
  LayerSpec spec;
  std::vector<Tensor> params;

  bool operator==(const Layer&) const = default;
};

enum class LossKind { kMeanSquaredError, kSoftmaxCrossEntropy };

// Which normalization (if any) follows each hidden Dense layer.
enum class NormKind { kNone, kBatchNorm, kNoisyBatchNorm, kLp1, kLp2, kLpInf, kNoiseOnly };

std::string norm_kind_name(NormKind kind);
std::optional<NormKind> parse_norm_kind(const std::string& name);

// Position of one parameter tensor inside a NetworkState.
struct ParamRef {
  std::size_t layer = 0;
  std::size_t index = 0;
};

// A trainable "layer" in the sense used by the ICS measurement and adjusted
// gradient descent: a Dense layer, optionally bundled with the normalization
// parameters that follow it.
struct ParamGroup {
  std::vector<ParamRef> params;
};

// Parameter-shaped container for gradients: grads[layer][index].
using ParamGrads = std::vector<std::vector<Tensor>>;

// Ordered layers with their current parameters. Layer 0 is closest to the
// input. A NetworkState is a plain value: copies share nothing.
struct NetworkState {
  std::vector<Layer> layers;
  LossKind loss = LossKind::kMeanSquaredError;
  double norm_eps = kDefaultNormEps;
  NoiseConfig noise;
  std::uint64_t noise_seed = 0;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;
  // Throws kShapeMismatch if dimensions do not chain or params have the wrong shape.
  void validate() const;
  std::vector<ParamGroup> param_groups(bool bundle_norm_with_dense) const;

  ParamGrads zero_grads() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  // params <- params - lr * grads, restricted to `group` when given.
  void apply_update(const ParamGrads& grads, double lr, const ParamGroup* group = nullptr);

  bool operator==(const NetworkState&) const = default;
};

std::vector<double> flatten_grads(const ParamGrads& grads);
std::vector<double> flatten_group(const ParamGrads& grads, const ParamGroup& group);

struct Batch {
  Tensor inputs;
  Tensor targets;
  std::size_t rows() const { return inputs.rows(); }
};

struct DatasetSpec {
  enum class Kind { kDlnRegression, kGaussMixClassification };
  Kind kind = Kind::kDlnRegression;
  std::size_t dim = 10;
  std::size_t classes = 0;
  std::size_t samples = 1000;
  double separation = 0.0;
  Tensor mixing;  // DLN target map A (dim x dim); targets = x A^T
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetSpec spec;
  Batch all;

  Batch rows(std::span<const std::size_t> indices) const;
};

// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)); fan_in x fan_out matrix.
Tensor glorot_init(std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct DlnOptions {
  std::size_t depth = 25;
  std::size_t dim = 10;
  std::size_t samples = 1000;
  NormKind norm = NormKind::kNone;
  // Also normalize after the last Dense layer.
  bool norm_last = false;
  double norm_eps = kDefaultNormEps;
  NoiseConfig noise;
  std::uint64_t seed = 0;
};

struct MlpOptions {
  // Input width followed by hidden widths; a final Dense maps to `classes`.
  // When the last width already equals `classes` it is that final Dense, so
  // {2, 2} with two classes is a plain linear classifier.
  std::vector<std::size_t> dims{16, 32, 32, 10};
  std::size_t classes = 3;
  std::size_t samples = 1024;
  double separation = 1.0;
  NormKind norm = NormKind::kNone;
  double norm_eps = kDefaultNormEps;
  NoiseConfig noise;
  std::uint64_t seed = 0;
};

struct Model {
  NetworkState net;
  Dataset data;
};

// Deep linear network x -> x W_1 ... W_k trained with mean squared error
// against targets x A^T, optionally with a normalization layer after every
// Dense layer (except the last unless norm_last).
Model build_dln(const DlnOptions& options);

// Dense -> [norm] -> ReLU blocks and a final Dense scored with softmax
// cross-entropy on a Gaussian mixture.
Model build_mlp(const MlpOptions& options);

// Compiled graph for one network structure. Binds parameters from any
// NetworkState with that structure, so it can be reused across training
// steps, clones and probe points.
class Evaluator {
 public:
  explicit Evaluator(const NetworkState& net);

  // `step` keys the noise draw of noisy layers.
  double loss(const NetworkState& net, const Batch& batch, std::uint64_t step);
  // With `only`, gradients outside that group come back as zeros.
  double loss_and_grad(const NetworkState& net, const Batch& batch, std::uint64_t step,
                       ParamGrads& grads, const ParamGroup* only = nullptr);
  // Output of layer `layer` (0-based) from the most recent evaluation.
  const Tensor& layer_output(std::size_t layer) const;

  std::size_t gradient_evaluations() const noexcept { return gradient_evaluations_; }

 private:
  void bind(const NetworkState& net, const Batch& batch, std::uint64_t step);

  Graph graph_;
  NodeId input_ = 0;
  NodeId target_ = 0;
  std::vector<std::vector<NodeId>> param_nodes_;
  std::vector<NodeId> layer_out_;
  // layer index -> (scale, shift) roots for noise-carrying layers
  std::vector<std::optional<std::pair<NodeId, NodeId>>> noise_nodes_;
  std::vector<LayerSpec> specs_;
  std::size_t gradient_evaluations_ = 0;
};

}  // namespace bnlab
