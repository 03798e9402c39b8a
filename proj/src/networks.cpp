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

#include "bnlab/networks.hpp"

#include <cmath>

namespace bnlab {
namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kDataStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

bool is_norm(LayerKind kind) {
  return kind == LayerKind::kBatchNorm || kind == LayerKind::kNoisyBatchNorm ||
         kind == LayerKind::kLpNorm;
}

// Appends the normalization layer (if any) that follows a hidden Dense layer.
void push_norm(std::vector<Layer>& layers, NormKind norm, std::size_t units) {
  auto affine = [&](LayerKind kind, LpOrder p) {
    Layer l;
    l.spec = LayerSpec{kind, units, units, false, p};
    l.params = {Tensor::matrix(1, units, 1.0), Tensor::matrix(1, units, 0.0)};
    layers.push_back(std::move(l));
  };
  switch (norm) {
    case NormKind::kNone: break;
    case NormKind::kBatchNorm: affine(LayerKind::kBatchNorm, LpOrder::kTwo); break;
    case NormKind::kNoisyBatchNorm: affine(LayerKind::kNoisyBatchNorm, LpOrder::kTwo); break;
    case NormKind::kLp1: affine(LayerKind::kLpNorm, LpOrder::kOne); break;
    case NormKind::kLp2: affine(LayerKind::kLpNorm, LpOrder::kTwo); break;
    case NormKind::kLpInf: affine(LayerKind::kLpNorm, LpOrder::kInfinity); break;
    case NormKind::kNoiseOnly:
      layers.push_back(Layer{LayerSpec{LayerKind::kNoise, units, units, false, LpOrder::kTwo}, {}});
      break;
  }
}

Layer dense(std::size_t in, std::size_t out, bool bias, Rng rng) {
  Layer l;
  l.spec = LayerSpec{LayerKind::kDense, in, out, bias, LpOrder::kTwo};
  l.params.push_back(glorot_init(in, out, rng));
  if (bias) l.params.push_back(Tensor::matrix(1, out, 0.0));
  return l;
}

}  // namespace

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kBatchNorm: return "batch_norm";
    case LayerKind::kNoisyBatchNorm: return "noisy_batch_norm";
    case LayerKind::kLpNorm: return "lp_norm";
    case LayerKind::kNoise: return "noise";
    case LayerKind::kRelu: return "relu";
  }
  return "?";
}

std::string norm_kind_name(NormKind kind) {
  switch (kind) {
    case NormKind::kNone: return "none";
    case NormKind::kBatchNorm: return "bn";
    case NormKind::kNoisyBatchNorm: return "noisy_bn";
    case NormKind::kLp1: return "lp1";
    case NormKind::kLp2: return "lp2";
    case NormKind::kLpInf: return "lpinf";
    case NormKind::kNoiseOnly: return "noise";
  }
  return "?";
}

std::optional<NormKind> parse_norm_kind(const std::string& name) {
  for (NormKind k : {NormKind::kNone, NormKind::kBatchNorm, NormKind::kNoisyBatchNorm,
                     NormKind::kLp1, NormKind::kLp2, NormKind::kLpInf, NormKind::kNoiseOnly}) {
    if (norm_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

std::size_t NetworkState::input_dim() const {
  BNLAB_REQUIRE(!layers.empty(), ErrorCode::kInvalidArgument, "network has no layers");
  return layers.front().spec.in;
}

std::size_t NetworkState::output_dim() const {
  BNLAB_REQUIRE(!layers.empty(), ErrorCode::kInvalidArgument, "network has no layers");
  return layers.back().spec.out;
}

std::size_t NetworkState::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers)
    for (const Tensor& p : l.params) n += p.size();
  return n;
}

void NetworkState::validate() const {
  BNLAB_REQUIRE(!layers.empty(), ErrorCode::kInvalidArgument, "network has no layers");
  std::size_t width = layers.front().spec.in;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& s = layers[i].spec;
    const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(s.kind) + ")";
    BNLAB_REQUIRE(s.in == width && s.in > 0 && s.out > 0, ErrorCode::kShapeMismatch,
            where + ": input width " + std::to_string(s.in) + " does not chain from " +
                std::to_string(width));
    if (s.kind == LayerKind::kDense) {
      BNLAB_REQUIRE(layers[i].params.size() == (s.bias ? 2u : 1u), ErrorCode::kShapeMismatch,
              where + ": wrong parameter count");
      BNLAB_REQUIRE((layers[i].params[0].shape() == Shape{s.in, s.out}), ErrorCode::kShapeMismatch,
              where + ": weight shape");
      if (s.bias)
        BNLAB_REQUIRE((layers[i].params[1].shape() == Shape{1, s.out}), ErrorCode::kShapeMismatch,
                where + ": bias shape");
    } else {
      BNLAB_REQUIRE(s.in == s.out, ErrorCode::kShapeMismatch, where + ": must preserve width");
      const std::size_t expected = is_norm(s.kind) ? 2 : 0;
      BNLAB_REQUIRE(layers[i].params.size() == expected, ErrorCode::kShapeMismatch,
              where + ": wrong parameter count");
      for (const Tensor& p : layers[i].params)
        BNLAB_REQUIRE((p.shape() == Shape{1, s.out}), ErrorCode::kShapeMismatch, where + ": gamma/beta shape");
    }
    width = s.out;
  }
  noise.validate();
}

std::vector<ParamGroup> NetworkState::param_groups(bool bundle_norm_with_dense) const {
  std::vector<ParamGroup> groups;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.params.empty()) continue;
    const bool start = l.spec.kind == LayerKind::kDense || !bundle_norm_with_dense || groups.empty();
    if (start) groups.emplace_back();
    for (std::size_t k = 0; k < l.params.size(); ++k) groups.back().params.push_back({i, k});
  }
  return groups;
}

ParamGrads NetworkState::zero_grads() const {
  ParamGrads g(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (const Tensor& p : layers[i].params) g[i].emplace_back(p.shape());
  return g;
}

std::vector<double> NetworkState::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const Layer& l : layers)
    for (const Tensor& p : l.params) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

void NetworkState::unflatten(std::span<const double> flat) {
  BNLAB_REQUIRE(flat.size() == parameter_count(), ErrorCode::kShapeMismatch,
          "unflatten: expected " + std::to_string(parameter_count()) + " values");
  std::size_t k = 0;
  for (Layer& l : layers)
    for (Tensor& p : l.params)
      for (double& v : p.data()) v = flat[k++];
}

void NetworkState::apply_update(const ParamGrads& grads, double lr, const ParamGroup* group) {
  BNLAB_REQUIRE(grads.size() == layers.size(), ErrorCode::kShapeMismatch, "apply_update: layer count");
  auto update = [&](std::size_t li, std::size_t pi) {
    Tensor& p = layers[li].params[pi];
    const Tensor& g = grads[li][pi];
    BNLAB_REQUIRE(p.same_shape(g), ErrorCode::kShapeMismatch, "apply_update: gradient shape");
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  };
  if (group != nullptr) {
    for (const ParamRef& r : group->params) update(r.layer, r.index);
    return;
  }
  for (std::size_t li = 0; li < layers.size(); ++li)
    for (std::size_t pi = 0; pi < layers[li].params.size(); ++pi) update(li, pi);
}

std::vector<double> flatten_grads(const ParamGrads& grads) {
  std::vector<double> out;
  for (const auto& layer : grads)
    for (const Tensor& g : layer) out.insert(out.end(), g.data().begin(), g.data().end());
  return out;
}

std::vector<double> flatten_group(const ParamGrads& grads, const ParamGroup& group) {
  std::vector<double> out;
  for (const ParamRef& r : group.params) {
    const Tensor& g = grads.at(r.layer).at(r.index);
    out.insert(out.end(), g.data().begin(), g.data().end());
  }
  return out;
}

Batch Dataset::rows(std::span<const std::size_t> indices) const {
  const std::size_t din = all.inputs.cols();
  const std::size_t dout = all.targets.cols();
  Batch b{Tensor::matrix(indices.size(), din), Tensor::matrix(indices.size(), dout)};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t src = indices[r];
    BNLAB_REQUIRE(src < all.rows(), ErrorCode::kInvalidArgument, "Dataset::rows: index out of range");
    for (std::size_t c = 0; c < din; ++c) b.inputs(r, c) = all.inputs(src, c);
    for (std::size_t c = 0; c < dout; ++c) b.targets(r, c) = all.targets(src, c);
  }
  return b;
}

Tensor glorot_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  BNLAB_REQUIRE(fan_in >= 1 && fan_out >= 1, ErrorCode::kInvalidArgument, "glorot_init: fans must be >= 1");
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w = Tensor::matrix(fan_in, fan_out);
  for (double& v : w.data()) v = rng.uniform(-a, a);
  return w;
}

Model build_dln(const DlnOptions& o) {
  BNLAB_REQUIRE(o.depth >= 1 && o.dim >= 1 && o.samples >= 1, ErrorCode::kInvalidArgument,
          "build_dln: depth, dim and samples must be positive");
  const Rng root(o.seed);
  const Rng init = root.split(kInitStream);
  Model model;
  NetworkState& net = model.net;
  net.loss = LossKind::kMeanSquaredError;
  net.norm_eps = o.norm_eps;
  net.noise = o.noise;
  net.noise_seed = root.split(kNoiseStream).seed();
  for (std::size_t k = 0; k < o.depth; ++k) {
    net.layers.push_back(dense(o.dim, o.dim, false, init.split(k)));
    if (k + 1 < o.depth || o.norm_last) push_norm(net.layers, o.norm, o.dim);
  }
  net.validate();

  Rng data = root.split(kDataStream);
  DatasetSpec& spec = model.data.spec;
  spec.kind = DatasetSpec::Kind::kDlnRegression;
  spec.dim = o.dim;
  spec.samples = o.samples;
  spec.seed = o.seed;
  spec.mixing = Tensor::matrix(o.dim, o.dim);
  for (double& v : spec.mixing.data()) v = data.normal();
  Tensor x = Tensor::matrix(o.samples, o.dim);
  for (double& v : x.data()) v = data.normal();
  model.data.all = Batch{x, matmul(x, transpose(spec.mixing))};
  return model;
}

Model build_mlp(const MlpOptions& o) {
  BNLAB_REQUIRE(o.dims.size() >= 2, ErrorCode::kInvalidArgument, "build_mlp: need at least two widths");
  BNLAB_REQUIRE(o.classes >= 2 && o.samples >= 2, ErrorCode::kInvalidArgument,
          "build_mlp: need >= 2 classes and >= 2 samples");
  for (std::size_t w : o.dims)
    BNLAB_REQUIRE(w >= 1, ErrorCode::kInvalidArgument, "build_mlp: widths must be positive");
  const Rng root(o.seed);
  const Rng init = root.split(kInitStream);
  Model model;
  NetworkState& net = model.net;
  net.loss = LossKind::kSoftmaxCrossEntropy;
  net.norm_eps = o.norm_eps;
  net.noise = o.noise;
  net.noise_seed = root.split(kNoiseStream).seed();
  // A trailing width equal to the class count is the logit layer itself;
  // otherwise a head from the last width to the classes is appended.
  const bool last_is_head = o.dims.back() == o.classes;
  const std::size_t blocks = o.dims.size() - (last_is_head ? 2 : 1);
  std::size_t k = 0;
  for (; k < blocks; ++k) {
    net.layers.push_back(dense(o.dims[k], o.dims[k + 1], true, init.split(k)));
    push_norm(net.layers, o.norm, o.dims[k + 1]);
    net.layers.push_back(
        Layer{LayerSpec{LayerKind::kRelu, o.dims[k + 1], o.dims[k + 1], false, LpOrder::kTwo}, {}});
  }
  net.layers.push_back(dense(o.dims[k], o.classes, true, init.split(k)));
  net.validate();

  Rng data = root.split(kDataStream);
  const std::size_t din = o.dims.front();
  DatasetSpec& spec = model.data.spec;
  spec.kind = DatasetSpec::Kind::kGaussMixClassification;
  spec.dim = din;
  spec.classes = o.classes;
  spec.samples = o.samples;
  spec.separation = o.separation;
  spec.seed = o.seed;
  spec.mixing = Tensor::matrix(o.classes, din);
  for (double& v : spec.mixing.data()) v = o.separation * data.normal();
  Tensor x = Tensor::matrix(o.samples, din);
  Tensor t = Tensor::matrix(o.samples, o.classes);
  for (std::size_t i = 0; i < o.samples; ++i) {
    const std::size_t c = data.below(o.classes);
    t(i, c) = 1.0;
    for (std::size_t j = 0; j < din; ++j) x(i, j) = spec.mixing(c, j) + data.normal();
  }
  model.data.all = Batch{std::move(x), std::move(t)};
  return model;
}

Evaluator::Evaluator(const NetworkState& net) {
  net.validate();
  input_ = graph_.input("inputs");
  target_ = graph_.input("targets");
  NodeId h = input_;
  param_nodes_.resize(net.layers.size());
  noise_nodes_.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& s = net.layers[i].spec;
    specs_.push_back(s);
    const std::string tag = std::to_string(i);
    auto param = [&](const std::string& name) {
      const NodeId id = graph_.input(name + tag);
      param_nodes_[i].push_back(id);
      return id;
    };
    auto noise = [&](NodeId x) {
      const NodeId scale = graph_.input("noise_scale" + tag);
      const NodeId shift = graph_.input("noise_shift" + tag);
      noise_nodes_[i] = std::make_pair(scale, shift);
      return graph_.add(graph_.mul(x, scale), shift);
    };
    switch (s.kind) {
      case LayerKind::kDense:
        h = graph_.matmul(h, param("W"));
        if (s.bias) h = graph_.add_row(h, param("b"));
        break;
      case LayerKind::kBatchNorm:
      case LayerKind::kNoisyBatchNorm: {
        const NodeId gamma = param("gamma");
        const NodeId beta = param("beta");
        h = add_batch_norm(graph_, h, gamma, beta, net.norm_eps);
        if (s.kind == LayerKind::kNoisyBatchNorm) h = noise(h);
        break;
      }
      case LayerKind::kLpNorm: {
        const NodeId gamma = param("gamma");
        const NodeId beta = param("beta");
        h = add_lp_norm(graph_, h, gamma, beta, s.p, net.norm_eps);
        break;
      }
      case LayerKind::kNoise:
        h = noise(h);
        break;
      case LayerKind::kRelu:
        h = graph_.relu(h);
        break;
    }
    layer_out_.push_back(h);
  }
  const NodeId loss = net.loss == LossKind::kMeanSquaredError
                          ? graph_.mean_squared_error(h, target_)
                          : graph_.softmax_cross_entropy(h, target_);
  graph_.set_output(loss);
}

void Evaluator::bind(const NetworkState& net, const Batch& batch, std::uint64_t step) {
  BNLAB_REQUIRE(net.layers.size() == specs_.size(), ErrorCode::kShapeMismatch,
          "Evaluator: network structure differs from the compiled graph");
  graph_.bind(input_, batch.inputs);
  graph_.bind(target_, batch.targets);
  const Rng noise_root(net.noise_seed);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& l = net.layers[i];
    BNLAB_REQUIRE(l.spec == specs_[i] && l.params.size() == param_nodes_[i].size(),
            ErrorCode::kShapeMismatch, "Evaluator: layer " + std::to_string(i) + " differs");
    for (std::size_t k = 0; k < l.params.size(); ++k) graph_.bind(param_nodes_[i][k], l.params[k]);
    if (noise_nodes_[i]) {
      NoiseSample s = sample_noise(batch.rows(), l.spec.out, net.noise, noise_root.split(i), step);
      graph_.bind(noise_nodes_[i]->first, std::move(s.scale));
      graph_.bind(noise_nodes_[i]->second, std::move(s.shift));
    }
  }
}

double Evaluator::loss(const NetworkState& net, const Batch& batch, std::uint64_t step) {
  bind(net, batch, step);
  return graph_.forward();
}

double Evaluator::loss_and_grad(const NetworkState& net, const Batch& batch, std::uint64_t step,
                                ParamGrads& grads, const ParamGroup* only) {
  bind(net, batch, step);
  const double value = graph_.forward();
  if (only == nullptr) {
    graph_.backward();
  } else {
    std::vector<NodeId> wrt;
    for (const ParamRef& p : only->params) {
      BNLAB_REQUIRE(p.layer < param_nodes_.size() && p.index < param_nodes_[p.layer].size(),
                    ErrorCode::kInvalidArgument, "loss_and_grad: group refers to a missing parameter");
      wrt.push_back(param_nodes_[p.layer][p.index]);
    }
    graph_.backward(wrt);
  }
  ++gradient_evaluations_;
  grads.resize(param_nodes_.size());
  for (std::size_t i = 0; i < param_nodes_.size(); ++i) {
    grads[i].resize(param_nodes_[i].size());
    for (std::size_t k = 0; k < param_nodes_[i].size(); ++k) {
      if (only == nullptr) {
        grads[i][k] = graph_.grad(param_nodes_[i][k]);
        continue;
      }
      const bool in_group = std::any_of(only->params.begin(), only->params.end(),
                                        [&](const ParamRef& p) { return p.layer == i && p.index == k; });
      if (in_group) {
        grads[i][k] = graph_.grad(param_nodes_[i][k]);
      } else {
        grads[i][k].reshape_to(net.layers[i].params[k].shape());
        grads[i][k].fill(0.0);
      }
    }
  }
  return value;
}

const Tensor& Evaluator::layer_output(std::size_t layer) const {
  BNLAB_REQUIRE(layer < layer_out_.size(), ErrorCode::kInvalidArgument,
          "layer_output: layer index out of range");
  return graph_.value(layer_out_[layer]);
}

}  // namespace bnlab
