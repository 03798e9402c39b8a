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

#include "bnlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "kernels.hpp"

namespace bnlab {
namespace {

void require_matrix(const Tensor& t, const char* op) {
  BNLAB_REQUIRE(t.rank() == 2, ErrorCode::kShapeMismatch,
          std::string(op) + ": operand must be rank 2, got " + shape_to_string(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  BNLAB_REQUIRE(a.same_shape(b), ErrorCode::kShapeMismatch,
          std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
              shape_to_string(b.shape()) + " differ");
}

void require_row_of(const Tensor& a, const Tensor& row, const char* op) {
  require_matrix(a, op);
  BNLAB_REQUIRE(row.rank() == 2 && row.rows() == 1 && row.cols() == a.cols(), ErrorCode::kShapeMismatch,
          std::string(op) + ": expected a 1x" + std::to_string(a.cols()) + " row, got " +
              shape_to_string(row.shape()));
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kSubRow: return "sub_row";
    case OpKind::kMulRow: return "mul_row";
    case OpKind::kDivRow: return "div_row";
    case OpKind::kColMean: return "col_mean";
    case OpKind::kColMaxAbs: return "col_max_abs";
    case OpKind::kSquare: return "square";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kAbs: return "abs";
    case OpKind::kRelu: return "relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSum: return "sum";
    case OpKind::kDot: return "dot";
    case OpKind::kMeanSquaredError: return "mean_squared_error";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kCustom: return "custom";
  }
  return "unknown";
}

Graph::Graph(const Graph& other)
    : output_(other.output_), forward_done_(other.forward_done_) {
  nodes_.reserve(other.nodes_.size());
  for (const Node& n : other.nodes_) {
    Node copy;
    copy.kind = n.kind;
    copy.in = n.in;
    copy.param = n.param;
    copy.target_shape = n.target_shape;
    copy.name = n.name;
    copy.bound = n.bound;
    copy.stale = true;
    copy.op = n.op ? n.op->clone() : nullptr;
    copy.value = n.value;
    copy.grad = n.grad;
    copy.argmax = n.argmax;
    nodes_.push_back(std::move(copy));
  }
}

Graph& Graph::operator=(const Graph& other) {
  if (this != &other) {
    Graph tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

const Graph::Node& Graph::node(NodeId id) const {
  BNLAB_REQUIRE(id < nodes_.size(), ErrorCode::kInvalidArgument,
          "node id " + std::to_string(id) + " out of range");
  return nodes_[id];
}

Graph::Node& Graph::node(NodeId id) {
  BNLAB_REQUIRE(id < nodes_.size(), ErrorCode::kInvalidArgument,
          "node id " + std::to_string(id) + " out of range");
  return nodes_[id];
}

NodeId Graph::push(OpKind kind, std::vector<NodeId> in, double param) {
  for (NodeId i : in)
    BNLAB_REQUIRE(i < nodes_.size(), ErrorCode::kInvalidArgument, "graph input refers to a later node");
  Node n;
  n.kind = kind;
  n.in = std::move(in);
  n.param = param;
  nodes_.push_back(std::move(n));
  forward_done_ = false;
  return nodes_.size() - 1;
}

NodeId Graph::input(std::string name) {
  NodeId id = push(OpKind::kInput, {});
  nodes_[id].name = std::move(name);
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) { return push(OpKind::kMatMul, {a, b}); }
NodeId Graph::add(NodeId a, NodeId b) { return push(OpKind::kAdd, {a, b}); }
NodeId Graph::sub(NodeId a, NodeId b) { return push(OpKind::kSub, {a, b}); }
NodeId Graph::mul(NodeId a, NodeId b) { return push(OpKind::kMul, {a, b}); }
NodeId Graph::add_row(NodeId a, NodeId row) { return push(OpKind::kAddRow, {a, row}); }
NodeId Graph::sub_row(NodeId a, NodeId row) { return push(OpKind::kSubRow, {a, row}); }
NodeId Graph::mul_row(NodeId a, NodeId row) { return push(OpKind::kMulRow, {a, row}); }
NodeId Graph::div_row(NodeId a, NodeId row) { return push(OpKind::kDivRow, {a, row}); }
NodeId Graph::col_mean(NodeId a) { return push(OpKind::kColMean, {a}); }
NodeId Graph::col_max_abs(NodeId a) { return push(OpKind::kColMaxAbs, {a}); }
NodeId Graph::square(NodeId a) { return push(OpKind::kSquare, {a}); }
NodeId Graph::sqrt(NodeId a) { return push(OpKind::kSqrt, {a}); }
NodeId Graph::abs(NodeId a) { return push(OpKind::kAbs, {a}); }
NodeId Graph::relu(NodeId a) { return push(OpKind::kRelu, {a}); }
NodeId Graph::tanh(NodeId a) { return push(OpKind::kTanh, {a}); }
NodeId Graph::scale(NodeId a, double s) { return push(OpKind::kScale, {a}, s); }
NodeId Graph::add_scalar(NodeId a, double c) { return push(OpKind::kAddScalar, {a}, c); }
NodeId Graph::sum(NodeId a) { return push(OpKind::kSum, {a}); }
NodeId Graph::dot(NodeId a, NodeId b) { return push(OpKind::kDot, {a, b}); }

NodeId Graph::reshape(NodeId a, std::size_t rows, std::size_t cols) {
  NodeId id = push(OpKind::kReshape, {a});
  nodes_[id].target_shape = Shape{rows, cols};
  return id;
}

NodeId Graph::mean_squared_error(NodeId pred, NodeId target) {
  return push(OpKind::kMeanSquaredError, {pred, target});
}

NodeId Graph::softmax_cross_entropy(NodeId logits, NodeId target) {
  return push(OpKind::kSoftmaxCrossEntropy, {logits, target});
}

NodeId Graph::custom(std::unique_ptr<CustomOp> op, std::vector<NodeId> inputs) {
  BNLAB_REQUIRE(op != nullptr, ErrorCode::kInvalidArgument, "custom op is null");
  NodeId id = push(OpKind::kCustom, std::move(inputs));
  nodes_[id].op = std::move(op);
  return id;
}

void Graph::set_output(NodeId id) {
  node(id);
  output_ = id;
  forward_done_ = false;
}

NodeId Graph::output() const {
  BNLAB_REQUIRE(!nodes_.empty(), ErrorCode::kPrecondition, "graph is empty");
  return output_ == static_cast<NodeId>(-1) ? nodes_.size() - 1 : output_;
}

void Graph::bind(NodeId root, Tensor value) {
  Node& n = node(root);
  BNLAB_REQUIRE(n.kind == OpKind::kInput, ErrorCode::kInvalidArgument,
          "bind: node " + std::to_string(root) + " is not a root");
  if (!value.all_finite()) fail(ErrorCode::kNonFinite, "non-finite value in binding '" + n.name + "'");
  if (n.bound && n.value.shape() == value.shape() &&
      std::memcmp(n.value.data().data(), value.data().data(), value.size() * sizeof(double)) == 0)
    return;
  n.value = std::move(value);
  n.bound = true;
  n.stale = true;
  forward_done_ = false;
}

Tensor& Graph::bound(NodeId root) {
  Node& n = node(root);
  BNLAB_REQUIRE(n.kind == OpKind::kInput && n.bound, ErrorCode::kPrecondition,
          "bound: node " + std::to_string(root) + " is not a bound root");
  n.stale = true;
  forward_done_ = false;
  return n.value;
}

std::vector<NodeId> Graph::roots() const {
  std::vector<NodeId> out;
  for (NodeId i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == OpKind::kInput) out.push_back(i);
  return out;
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }

const Tensor& Graph::grad(NodeId id) const {
  BNLAB_REQUIRE(forward_done_, ErrorCode::kPrecondition, "grad: no current forward/backward pass");
  return node(id).grad;
}

double Graph::forward() {
  const NodeId out = output();
  changed_.assign(out + 1, 0);
  try {
    for (NodeId i = 0; i <= out; ++i) {
      Node& n = nodes_[i];
      bool dirty = n.stale;
      for (NodeId k : n.in) dirty = dirty || changed_[k] != 0;
      if (!dirty) continue;
      changed_[i] = 1;
      if (n.kind == OpKind::kInput) {
        BNLAB_REQUIRE(n.bound, ErrorCode::kPrecondition, "forward: root '" + n.name + "' is unbound");
        if (!n.value.all_finite())
          fail(ErrorCode::kNonFinite, "non-finite value in root '" + n.name + "'");
      } else {
        eval(n);
        if (!n.value.all_finite())
          fail(ErrorCode::kNonFinite, "non-finite value produced by " + std::string(op_name(n.kind)) +
                                          " (node " + std::to_string(i) + ")");
      }
      n.stale = false;
    }
  } catch (...) {
    for (Node& n : nodes_) n.stale = true;
    forward_done_ = false;
    throw;
  }
  const Tensor& result = nodes_[out].value;
  BNLAB_REQUIRE(result.size() == 1, ErrorCode::kShapeMismatch,
          "forward: output node must be scalar, got " + shape_to_string(result.shape()));
  forward_done_ = true;
  return result[0];
}

void Graph::eval(Node& n) {
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.in[k]].value; };
  Tensor& out = n.value;
  switch (n.kind) {
    case OpKind::kInput:
      break;
    case OpKind::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require_matrix(a, "matmul");
      require_matrix(b, "matmul");
      BNLAB_REQUIRE(a.cols() == b.rows(), ErrorCode::kShapeMismatch,
              "matmul: " + shape_to_string(a.shape()) + " * " + shape_to_string(b.shape()));
      out.reshape_to(Shape{a.rows(), b.cols()});
      kernels::gemm_nn(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(),
                       b.cols(), false);
      break;
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require_same(a, b, op_name(n.kind).data());
      out.reshape_to(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = n.kind == OpKind::kAdd   ? a[i] + b[i]
                 : n.kind == OpKind::kSub ? a[i] - b[i]
                                          : a[i] * b[i];
      }
      break;
    }
    case OpKind::kAddRow:
    case OpKind::kSubRow:
    case OpKind::kMulRow:
    case OpKind::kDivRow: {
      const Tensor& a = in(0);
      const Tensor& r = in(1);
      require_row_of(a, r, op_name(n.kind).data());
      out.reshape_to(a.shape());
      const std::size_t m = a.rows();
      const std::size_t d = a.cols();
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data().data() + i * d;
        double* orow = out.data().data() + i * d;
        switch (n.kind) {
          case OpKind::kAddRow:
            for (std::size_t j = 0; j < d; ++j) orow[j] = arow[j] + r[j];
            break;
          case OpKind::kSubRow:
            for (std::size_t j = 0; j < d; ++j) orow[j] = arow[j] - r[j];
            break;
          case OpKind::kMulRow:
            for (std::size_t j = 0; j < d; ++j) orow[j] = arow[j] * r[j];
            break;
          default:
            for (std::size_t j = 0; j < d; ++j) orow[j] = arow[j] / r[j];
            break;
        }
      }
      break;
    }
    case OpKind::kColMean: {
      const Tensor& a = in(0);
      require_matrix(a, "col_mean");
      const std::size_t m = a.rows();
      const std::size_t d = a.cols();
      out.reshape_to(Shape{1, d});
      out.fill(0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += a(i, j);
      for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(m);
      break;
    }
    case OpKind::kColMaxAbs: {
      const Tensor& a = in(0);
      require_matrix(a, "col_max_abs");
      const std::size_t m = a.rows();
      const std::size_t d = a.cols();
      out.reshape_to(Shape{1, d});
      n.argmax.assign(d, 0);
      for (std::size_t j = 0; j < d; ++j) {
        double best = std::abs(a(0, j));
        for (std::size_t i = 1; i < m; ++i) {
          const double v = std::abs(a(i, j));
          if (v > best) {
            best = v;
            n.argmax[j] = i;
          }
        }
        out[j] = best;
      }
      break;
    }
    case OpKind::kSquare:
    case OpKind::kSqrt:
    case OpKind::kAbs:
    case OpKind::kRelu:
    case OpKind::kTanh:
    case OpKind::kScale:
    case OpKind::kAddScalar: {
      const Tensor& a = in(0);
      out.reshape_to(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = a[i];
        switch (n.kind) {
          case OpKind::kSquare: out[i] = v * v; break;
          case OpKind::kSqrt: out[i] = std::sqrt(v); break;
          case OpKind::kAbs: out[i] = std::abs(v); break;
          case OpKind::kRelu: out[i] = v > 0.0 ? v : 0.0; break;
          case OpKind::kTanh: out[i] = std::tanh(v); break;
          case OpKind::kScale: out[i] = n.param * v; break;
          default: out[i] = v + n.param; break;
        }
      }
      break;
    }
    case OpKind::kReshape: {
      const Tensor& a = in(0);
      BNLAB_REQUIRE(a.size() == n.target_shape[0] * n.target_shape[1], ErrorCode::kShapeMismatch,
              "reshape: " + shape_to_string(a.shape()) + " to " +
                  shape_to_string(n.target_shape));
      out.reshape_to(n.target_shape);
      std::copy(a.data().begin(), a.data().end(), out.data().begin());
      break;
    }
    case OpKind::kSum: {
      const Tensor& a = in(0);
      out.reshape_to(Shape{1, 1});
      double s = 0.0;
      for (double v : a.data()) s += v;
      out[0] = s;
      break;
    }
    case OpKind::kDot: {
      require_same(in(0), in(1), "dot");
      out.reshape_to(Shape{1, 1});
      out[0] = bnlab::dot(in(0).data(), in(1).data());
      break;
    }
    case OpKind::kMeanSquaredError: {
      const Tensor& p = in(0);
      const Tensor& t = in(1);
      require_matrix(p, "mean_squared_error");
      require_same(p, t, "mean_squared_error");
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double e = p[i] - t[i];
        s += e * e;
      }
      out.reshape_to(Shape{1, 1});
      out[0] = s / static_cast<double>(p.rows());
      break;
    }
    case OpKind::kSoftmaxCrossEntropy: {
      const Tensor& z = in(0);
      const Tensor& t = in(1);
      require_matrix(z, "softmax_cross_entropy");
      require_same(z, t, "softmax_cross_entropy");
      const std::size_t m = z.rows();
      const std::size_t c = z.cols();
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        double zmax = z(i, 0);
        for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, z(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(z(i, j) - zmax);
        const double lse = zmax + std::log(denom);
        for (std::size_t j = 0; j < c; ++j) s -= t(i, j) * (z(i, j) - lse);
      }
      out.reshape_to(Shape{1, 1});
      out[0] = s / static_cast<double>(m);
      break;
    }
    case OpKind::kCustom: {
      std::vector<const Tensor*> inputs;
      inputs.reserve(n.in.size());
      for (NodeId id : n.in) inputs.push_back(&nodes_[id].value);
      n.op->forward(inputs, out);
      break;
    }
  }
}

void Graph::backward() { backward({}); }

void Graph::backward(std::span<const NodeId> wrt) {
  BNLAB_REQUIRE(forward_done_, ErrorCode::kPrecondition, "backward: forward has not been run");
  const NodeId out = output();
  need_.assign(nodes_.size(), wrt.empty() ? 1 : 0);
  for (NodeId id : wrt) {
    BNLAB_REQUIRE(node(id).kind == OpKind::kInput, ErrorCode::kInvalidArgument,
                  "backward: node " + std::to_string(id) + " is not a root");
    need_[id] = 1;
  }
  if (!wrt.empty())
    for (NodeId i = 0; i <= out; ++i)
      for (NodeId k : nodes_[i].in) need_[i] = need_[i] | need_[k];
  // Every node feeding a needed node receives (possibly partial) gradient
  // contributions, so it has to start from zero as well.
  std::vector<char> touched(need_);
  for (NodeId i = 0; i <= out; ++i)
    if (need_[i])
      for (NodeId k : nodes_[i].in) touched[k] = 1;
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (!touched[i]) continue;
    Node& n = nodes_[i];
    n.grad.reshape_to(n.value.shape());
    n.grad.fill(0.0);
  }
  if (!need_[out]) return;
  nodes_[out].grad[0] = 1.0;
  for (NodeId i = out + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.kind == OpKind::kInput || !need_[i]) continue;
    propagate(n);
  }
  for (NodeId i = 0; i <= out; ++i) {
    if (nodes_[i].kind == OpKind::kInput && need_[i] && !nodes_[i].grad.all_finite())
      fail(ErrorCode::kNonFinite, "non-finite gradient for root '" + nodes_[i].name + "'");
  }
}

void Graph::propagate(Node& n) {
  const Tensor& g = n.grad;
  auto val = [&](std::size_t k) -> const Tensor& { return nodes_[n.in[k]].value; };
  auto grd = [&](std::size_t k) -> Tensor& { return nodes_[n.in[k]].grad; };
  switch (n.kind) {
    case OpKind::kInput:
      break;
    case OpKind::kMatMul: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      if (need_[n.in[0]])
        kernels::gemm_nt(g.data().data(), b.data().data(), grd(0).data().data(), a.rows(),
                         b.cols(), a.cols(), true);
      if (need_[n.in[1]])
        kernels::gemm_tn(a.data().data(), g.data().data(), grd(1).data().data(), a.rows(),
                         a.cols(), b.cols(), true);
      break;
    }
    case OpKind::kAdd:
      for (std::size_t i = 0; i < g.size(); ++i) grd(0)[i] += g[i];
      for (std::size_t i = 0; i < g.size(); ++i) grd(1)[i] += g[i];
      break;
    case OpKind::kSub:
      for (std::size_t i = 0; i < g.size(); ++i) grd(0)[i] += g[i];
      for (std::size_t i = 0; i < g.size(); ++i) grd(1)[i] -= g[i];
      break;
    case OpKind::kMul: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      for (std::size_t i = 0; i < g.size(); ++i) grd(0)[i] += g[i] * b[i];
      for (std::size_t i = 0; i < g.size(); ++i) grd(1)[i] += g[i] * a[i];
      break;
    }
    case OpKind::kAddRow:
    case OpKind::kSubRow:
    case OpKind::kMulRow:
    case OpKind::kDivRow: {
      const Tensor& a = val(0);
      const Tensor& r = val(1);
      Tensor& ga = grd(0);
      Tensor& gr = grd(1);
      const std::size_t m = a.rows();
      const std::size_t d = a.cols();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          const std::size_t k = i * d + j;
          switch (n.kind) {
            case OpKind::kAddRow:
              ga[k] += g[k];
              gr[j] += g[k];
              break;
            case OpKind::kSubRow:
              ga[k] += g[k];
              gr[j] -= g[k];
              break;
            case OpKind::kMulRow:
              ga[k] += g[k] * r[j];
              gr[j] += g[k] * a[k];
              break;
            default:
              ga[k] += g[k] / r[j];
              gr[j] -= g[k] * a[k] / (r[j] * r[j]);
              break;
          }
        }
      }
      break;
    }
    case OpKind::kColMean: {
      Tensor& ga = grd(0);
      const std::size_t m = ga.rows();
      const std::size_t d = ga.cols();
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) ga(i, j) += g[j] * inv;
      break;
    }
    case OpKind::kColMaxAbs: {
      const Tensor& a = val(0);
      Tensor& ga = grd(0);
      for (std::size_t j = 0; j < a.cols(); ++j) {
        const std::size_t i = n.argmax[j];
        ga(i, j) += g[j] * sign(a(i, j));
      }
      break;
    }
    case OpKind::kSquare:
    case OpKind::kSqrt:
    case OpKind::kAbs:
    case OpKind::kRelu:
    case OpKind::kTanh:
    case OpKind::kScale:
    case OpKind::kAddScalar: {
      const Tensor& a = val(0);
      const Tensor& y = n.value;
      Tensor& ga = grd(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        switch (n.kind) {
          case OpKind::kSquare: ga[i] += 2.0 * a[i] * g[i]; break;
          case OpKind::kSqrt: ga[i] += g[i] / (2.0 * y[i]); break;
          case OpKind::kAbs: ga[i] += sign(a[i]) * g[i]; break;
          case OpKind::kRelu: ga[i] += a[i] > 0.0 ? g[i] : 0.0; break;
          case OpKind::kTanh: ga[i] += (1.0 - y[i] * y[i]) * g[i]; break;
          case OpKind::kScale: ga[i] += n.param * g[i]; break;
          default: ga[i] += g[i]; break;
        }
      }
      break;
    }
    case OpKind::kReshape: {
      Tensor& ga = grd(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case OpKind::kSum: {
      Tensor& ga = grd(0);
      for (double& v : ga.data()) v += g[0];
      break;
    }
    case OpKind::kDot: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      for (std::size_t i = 0; i < a.size(); ++i) grd(0)[i] += g[0] * b[i];
      for (std::size_t i = 0; i < a.size(); ++i) grd(1)[i] += g[0] * a[i];
      break;
    }
    case OpKind::kMeanSquaredError: {
      const Tensor& p = val(0);
      const Tensor& t = val(1);
      const double c = 2.0 * g[0] / static_cast<double>(p.rows());
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double e = c * (p[i] - t[i]);
        grd(0)[i] += e;
        grd(1)[i] -= e;
      }
      break;
    }
    case OpKind::kSoftmaxCrossEntropy: {
      const Tensor& z = val(0);
      const Tensor& t = val(1);
      const std::size_t m = z.rows();
      const std::size_t c = z.cols();
      const double scale = g[0] / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        double zmax = z(i, 0);
        for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, z(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(z(i, j) - zmax);
        const double lse = zmax + std::log(denom);
        double tsum = 0.0;
        for (std::size_t j = 0; j < c; ++j) tsum += t(i, j);
        for (std::size_t j = 0; j < c; ++j) {
          const double p = std::exp(z(i, j) - lse);
          grd(0)(i, j) += scale * (tsum * p - t(i, j));
          grd(1)(i, j) -= scale * (z(i, j) - lse);
        }
      }
      break;
    }
    case OpKind::kCustom: {
      std::vector<const Tensor*> inputs;
      std::vector<Tensor*> grads;
      for (NodeId id : n.in) {
        inputs.push_back(&nodes_[id].value);
        grads.push_back(&nodes_[id].grad);
      }
      n.op->backward(inputs, n.value, g, grads);
      break;
    }
  }
}

Tensor forward(Graph& graph, const std::map<NodeId, Tensor>& bindings) {
  for (const auto& [id, value] : bindings) graph.bind(id, value);
  graph.forward();
  return graph.value(graph.output());
}

std::map<NodeId, Tensor> backward(Graph& graph) {
  graph.backward();
  std::map<NodeId, Tensor> grads;
  for (NodeId id : graph.roots()) grads.emplace(id, graph.grad(id));
  return grads;
}

}  // namespace bnlab
