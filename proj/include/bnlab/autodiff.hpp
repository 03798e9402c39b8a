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
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bnlab/tensor.hpp"

namespace bnlab {

using NodeId = std::size_t;

enum class OpKind {
  kInput,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kAddRow,
  kSubRow,
  kMulRow,
  kDivRow,
  kColMean,
  kColMaxAbs,
  kSquare,
  kSqrt,
  kAbs,
  kRelu,
  kTanh,
  kScale,
  kAddScalar,
  kReshape,
  kSum,
  kDot,
  kMeanSquaredError,
  kSoftmaxCrossEntropy,
  kCustom,
};

std::string_view op_name(OpKind kind);

// A fused operation supplied from outside the core (for example the
// closed-form BatchNorm layer). Implementations may cache forward state; the
// graph clones ops when it is copied.
class CustomOp {
 public:
  virtual ~CustomOp() = default;
  virtual std::string_view name() const = 0;
  virtual std::unique_ptr<CustomOp> clone() const = 0;
  virtual void forward(std::span<const Tensor* const> inputs, Tensor& out) = 0;
  // Accumulates (+=) the input gradients into `grads`, which are pre-shaped
  // like the inputs.
  virtual void backward(std::span<const Tensor* const> inputs, const Tensor& out,
                        const Tensor& dout, std::span<Tensor* const> grads) = 0;
};

// Append-only computation graph evaluated by reverse-mode differentiation.
//
// Nodes reference only earlier nodes, so creation order is a topological
// order: forward() walks it front to back and backward() strictly back to
// front. Root nodes (inputs) are bound to tensors before forward(); the same
// graph can be re-bound and re-evaluated any number of times, and node
// buffers are reused across evaluations.
//
// Every op is row-major rank-2. The only broadcasting is row-wise: the *_row
// ops combine an m x d operand with a 1 x d row.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph& other);
  Graph& operator=(const Graph& other);
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  NodeId input(std::string name);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId add_row(NodeId a, NodeId row);
  NodeId sub_row(NodeId a, NodeId row);
  NodeId mul_row(NodeId a, NodeId row);
  NodeId div_row(NodeId a, NodeId row);
  NodeId col_mean(NodeId a);
  NodeId col_max_abs(NodeId a);
  NodeId square(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId abs(NodeId a);
  NodeId relu(NodeId a);
  NodeId tanh(NodeId a);
  NodeId scale(NodeId a, double s);
  NodeId add_scalar(NodeId a, double c);
  NodeId reshape(NodeId a, std::size_t rows, std::size_t cols);
  NodeId sum(NodeId a);
  NodeId dot(NodeId a, NodeId b);
  // (1/m) * sum_i ||pred_i - target_i||^2 over the m rows.
  NodeId mean_squared_error(NodeId pred, NodeId target);
  // Mean over rows of -sum_j target_ij * log softmax(logits_i)_j.
  NodeId softmax_cross_entropy(NodeId logits, NodeId target);
  NodeId custom(std::unique_ptr<CustomOp> op, std::vector<NodeId> inputs);

  // Node whose (1x1) value forward() returns; defaults to the last node.
  void set_output(NodeId id);
  NodeId output() const;

  void bind(NodeId root, Tensor value);
  // In-place access to a bound root, for callers that refresh values each step.
  Tensor& bound(NodeId root);

  // Evaluates every node up to the output. Throws kShapeMismatch on
  // inconsistent shapes, kNonFinite on any NaN/Inf intermediate, and
  // kPrecondition if a root is unbound. Nodes whose inputs are bitwise
  // unchanged since the previous pass keep their values.
  double forward();
  // Gradient of the last forward() output with respect to every node. Roots
  // that do not influence the output get zero gradients.
  void backward();
  // Same, but only for the given roots and the nodes between them and the
  // output; other gradients are left unspecified.
  void backward(std::span<const NodeId> wrt);

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(NodeId id) const { return node(id).kind; }
  const std::string& name(NodeId id) const { return node(id).name; }
  std::vector<NodeId> roots() const;
  const Tensor& value(NodeId id) const;
  const Tensor& grad(NodeId id) const;

 private:
  struct Node {
    OpKind kind = OpKind::kInput;
    std::vector<NodeId> in;
    double param = 0.0;
    Shape target_shape;
    std::string name;
    bool bound = false;
    std::unique_ptr<CustomOp> op;
    Tensor value;
    Tensor grad;
    // ColMaxAbs argmax rows.
    std::vector<std::size_t> argmax;
    // Value must be recomputed on the next forward().
    bool stale = true;
  };

  NodeId push(OpKind kind, std::vector<NodeId> in, double param = 0.0);
  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  void eval(Node& n);
  void propagate(Node& n);

  std::vector<Node> nodes_;
  NodeId output_ = static_cast<NodeId>(-1);
  bool forward_done_ = false;
  std::vector<char> changed_;
  std::vector<char> need_;
};

// Functional surface over Graph: bind, evaluate, differentiate.
Tensor forward(Graph& graph, const std::map<NodeId, Tensor>& bindings);
std::map<NodeId, Tensor> backward(Graph& graph);

}  // namespace bnlab
