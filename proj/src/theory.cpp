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

#include "bnlab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bnlab/numdiff.hpp"

namespace bnlab {
namespace {

constexpr double kQuadraticRidge = 1e-3;
constexpr std::size_t kCeClasses = 3;
constexpr std::size_t kResampleLimit = 16;

Tensor gaussian(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

struct Branch {
  Graph graph;
  NodeId y = 0;
  NodeId gamma = 0;
  NodeId beta = 0;
  NodeId z = 0;
};

// Loss graph over y; with `bn` the composed normalization sits between y and
// the downstream loss.
Branch make_branch(const Downstream& ds, const BatchNormParams* bn) {
  Branch b;
  b.y = b.graph.input("y");
  NodeId v = b.y;
  if (bn != nullptr) {
    b.gamma = b.graph.input("gamma");
    b.beta = b.graph.input("beta");
    v = add_batch_norm_composed(b.graph, b.y, b.gamma, b.beta, bn->eps);
  }
  b.z = v;
  b.graph.set_output(ds.build(b.graph, v));
  if (bn != nullptr) {
    b.graph.bind(b.gamma, bn->gamma);
    b.graph.bind(b.beta, bn->beta);
  }
  return b;
}

double branch_value(const Downstream& ds, const BatchNormParams* bn, const Tensor& y,
                    Tensor* grad) {
  Branch b = make_branch(ds, bn);
  b.graph.bind(b.y, y);
  const double loss = b.graph.forward();
  if (grad != nullptr) {
    b.graph.backward();
    *grad = b.graph.grad(b.y);
  }
  return loss;
}

double sq(double v) { return v * v; }

double col_dot(const Tensor& a, std::size_t ja, const Tensor& b, std::size_t jb) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, ja) * b(r, jb);
  return s;
}

double col_sum(const Tensor& a, std::size_t j) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, j);
  return s;
}

Tensor only_column(const Tensor& like, std::size_t j, std::span<const double> values) {
  Tensor t = Tensor::matrix(like.rows(), like.cols());
  t.set_column(j, values);
  return t;
}

// Largest singular value by power iteration on X^T X.
double spectral_norm(const Tensor& x) {
  const Tensor xtx = matmul(transpose(x), x);
  Tensor v = Tensor::matrix(xtx.rows(), 1, 1.0);
  double lambda = 0.0;
  for (int it = 0; it < 500; ++it) {
    Tensor next = matmul(xtx, v);
    const double n = norm2(next.data());
    if (n == 0.0) return 0.0;
    next = (1.0 / n) * next;
    const double prev = lambda;
    lambda = n;
    v = std::move(next);
    if (it > 10 && std::abs(lambda - prev) <= 1e-15 * lambda) break;
  }
  const Tensor xv = matmul(xtx, v);
  return std::sqrt(dot(v.data(), xv.data()) / dot(v.data(), v.data()));
}

Tensor unit_vector(std::size_t n, Rng& rng) {
  Tensor u = gaussian(n, 1, rng);
  const double len = norm2(u.data());
  return (1.0 / len) * u;
}

// Rank-one X = lambda * vhat u^T (m x n_in); the spectral norm is lambda.
Tensor rank_one(std::span<const double> v, const Tensor& u, double lambda) {
  const double len = norm2(v);
  Tensor x = Tensor::matrix(v.size(), u.size());
  if (len == 0.0) return x;
  for (std::size_t r = 0; r < v.size(); ++r)
    for (std::size_t c = 0; c < u.size(); ++c) x(r, c) = lambda * (v[r] / len) * u[c];
  return x;
}

Tensor as_column(std::span<const double> v) {
  Tensor t = Tensor::matrix(v.size(), 1);
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

Metric residual(std::string name, double value, double tol) { return {std::move(name), value, tol, false}; }
Metric slack(std::string name, double value, double tol) { return {std::move(name), value, tol, true}; }

CheckReport start(const std::string& name, const CoupledPair& pair) {
  CheckReport r;
  r.name = name;
  r.seed = pair.seed;
  r.m = pair.m;
  r.d = pair.d;
  r.downstream = downstream_kind_name(pair.downstream.kind);
  return r;
}

std::vector<std::size_t> positive_alignment_units(const CoupledPair& pair, const Tensor& g) {
  std::vector<std::size_t> units;
  for (std::size_t j = 0; j < pair.d; ++j)
    if (col_dot(g, j, pair.cache.y_hat, j) > 0.0) units.push_back(j);
  return units;
}

}  // namespace

std::string downstream_kind_name(DownstreamKind kind) {
  switch (kind) {
    case DownstreamKind::kQuadratic: return "quadratic";
    case DownstreamKind::kSmooth: return "smooth";
    case DownstreamKind::kSoftmaxCe: return "softmax_ce";
  }
  return "?";
}

NodeId Downstream::build(Graph& g, NodeId v) const {
  std::vector<NodeId> c;
  for (std::size_t i = 0; i < consts.size(); ++i) {
    c.push_back(g.input("downstream" + std::to_string(i)));
    g.bind(c.back(), consts[i]);
  }
  switch (kind) {
    case DownstreamKind::kQuadratic: {
      const std::size_t n = consts[0].cols();
      const NodeId diff = g.sub(g.reshape(v, 1, n), c[0]);
      return g.scale(g.dot(g.matmul(diff, c[1]), diff), 0.5);
    }
    case DownstreamKind::kSmooth: {
      const NodeId wave = g.sum(g.mul(g.tanh(g.mul(v, c[1])), c[0]));
      const NodeId bowl = g.scale(g.sum(g.mul(g.square(v), c[2])), 0.5);
      return g.add(wave, bowl);
    }
    case DownstreamKind::kSoftmaxCe:
      return g.softmax_cross_entropy(g.add_row(g.matmul(v, c[0]), c[1]), c[2]);
  }
  fail(ErrorCode::kInvalidArgument, "unknown downstream kind");
}

Downstream make_downstream(DownstreamKind kind, std::size_t m, std::size_t d, Rng& rng) {
  Downstream ds;
  ds.kind = kind;
  const std::size_t n = m * d;
  switch (kind) {
    case DownstreamKind::kQuadratic: {
      const Tensor b = gaussian(n, n, rng, 1.0 / std::sqrt(static_cast<double>(n)));
      Tensor a = matmul(transpose(b), b);
      for (std::size_t i = 0; i < n; ++i) a(i, i) += kQuadraticRidge;
      ds.consts = {gaussian(1, n, rng), std::move(a)};
      break;
    }
    case DownstreamKind::kSmooth: {
      Tensor s = Tensor::matrix(m, d), w = Tensor::matrix(m, d);
      for (double& v : s.data()) v = rng.uniform(0.5, 1.5);
      for (double& v : w.data()) v = rng.uniform(0.0, 1.0);
      ds.consts = {gaussian(m, d, rng), std::move(s), std::move(w)};
      break;
    }
    case DownstreamKind::kSoftmaxCe: {
      Tensor t = Tensor::matrix(m, kCeClasses);
      for (std::size_t r = 0; r < m; ++r) t(r, rng.below(kCeClasses)) = 1.0;
      ds.consts = {gaussian(d, kCeClasses, rng, 1.0 / std::sqrt(static_cast<double>(d))),
                   gaussian(1, kCeClasses, rng, 0.1), std::move(t)};
      break;
    }
  }
  return ds;
}

double CoupledPair::vanilla_loss(const Tensor& y_at) const {
  return branch_value(downstream, nullptr, y_at, nullptr);
}
double CoupledPair::bn_loss(const Tensor& y_at) const {
  return branch_value(downstream, &bn, y_at, nullptr);
}
Tensor CoupledPair::vanilla_grad(const Tensor& y_at) const {
  Tensor g;
  branch_value(downstream, nullptr, y_at, &g);
  return g;
}
Tensor CoupledPair::bn_grad(const Tensor& y_at) const {
  Tensor g;
  branch_value(downstream, &bn, y_at, &g);
  return g;
}

CoupledPair build_coupled_pair(std::size_t m, std::size_t d, DownstreamKind kind, std::uint64_t seed) {
  BNLAB_REQUIRE(m >= 3, ErrorCode::kPrecondition,
          "coupled pair needs m >= 3 (m = 2 makes every normalized gradient vanish)");
  BNLAB_REQUIRE(d >= 1, ErrorCode::kInvalidArgument, "coupled pair needs d >= 1");
  Rng rng(seed);
  CoupledPair p;
  p.m = m;
  p.d = d;
  p.seed = seed;
  const std::size_t n_in = 2 + rng.below(4);
  bool ok = false;
  for (std::size_t attempt = 0; attempt < kResampleLimit && !ok; ++attempt) {
    p.x = gaussian(m, n_in, rng);
    p.w = gaussian(n_in, d, rng);
    p.y = matmul(p.x, p.w);
    ok = true;
    for (std::size_t j = 0; j < d && ok; ++j) {
      const Tensor col = p.y.column(j);
      double mean = 0.0;
      for (double v : col.data()) mean += v;
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (double v : col.data()) var += sq(v - mean);
      ok = var / static_cast<double>(m) > 1e-8;
    }
  }
  BNLAB_REQUIRE(ok, ErrorCode::kPrecondition, "coupled pair: degenerate batch after resampling");
  const BnForward f = bn_forward(p.y, BatchNormParams::identity(d, 0.0));
  p.bn = BatchNormParams{f.cache.sigma, f.cache.mu, 0.0};
  p.cache = bn_forward(p.y, p.bn).cache;
  p.downstream = make_downstream(kind, m, d, rng);
  return p;
}

CoupledPair build_smoothness_pair(std::size_t m, std::size_t d, std::uint64_t seed,
                                  std::size_t attempts) {
  const Rng root(seed);
  for (std::size_t a = 0; a < attempts; ++a) {
    CoupledPair p = build_coupled_pair(m, d, DownstreamKind::kQuadratic, root.split(a).seed());
    if (!positive_alignment_units(p, p.vanilla_grad(p.y)).empty()) {
      p.seed = seed;
      return p;
    }
  }
  fail(ErrorCode::kPrecondition, "no unit with <g, y_hat> > 0 after resampling");
}

bool Metric::pass() const { return is_slack ? value >= -tol : std::abs(value) <= tol; }

bool CheckReport::pass() const {
  if (skipped) return true;
  return std::all_of(metrics.begin(), metrics.end(), [](const Metric& m) { return m.pass(); });
}

const Metric* CheckReport::metric(const std::string& name) const {
  for (const Metric& m : metrics)
    if (m.name == name) return &m;
  return nullptr;
}

double relative_gap(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

CheckReport check_lipschitz(const CoupledPair& pair) {
  CheckReport r = start("lipschitz", pair);
  const Tensor g = pair.vanilla_grad(pair.y);
  const Tensor gh = pair.bn_grad(pair.y);
  const double m = static_cast<double>(pair.m);
  double worst_identity = 0.0, worst_slack = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < pair.d; ++j) {
    const double ratio = pair.bn.gamma[j] / pair.cache.sigma[j];
    const double s1 = col_sum(g, j);
    const double s2 = col_dot(g, j, pair.cache.y_hat, j);
    std::vector<double> predicted(pair.m), actual(pair.m);
    for (std::size_t b = 0; b < pair.m; ++b) {
      predicted[b] = ratio * (g(b, j) - s1 / m - s2 / m * pair.cache.y_hat(b, j));
      actual[b] = gh(b, j);
    }
    const double lhs = dot(actual, actual);
    const double rhs = ratio * ratio * (col_dot(g, j, g, j) - s1 * s1 / m - s2 * s2 / m);
    worst_identity = std::max(worst_identity, scaled_max_error(actual, predicted));
    const double s = (rhs - lhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)});
    if (s < worst_slack) {
      worst_slack = s;
      r.lhs = lhs;
      r.rhs = rhs;
    }
  }
  r.metrics = {residual("gradient_identity", worst_identity, kClosedFormTol),
               slack("inequality_slack", worst_slack, kClosedFormTol)};
  return r;
}

CheckReport check_smoothness(const CoupledPair& pair) {
  CheckReport r = start("smoothness", pair);
  const Tensor g = pair.vanilla_grad(pair.y);
  const Tensor gh = pair.bn_grad(pair.y);
  const std::vector<std::size_t> units = positive_alignment_units(pair, g);
  if (units.empty()) {
    r.skipped = true;
    r.note = "no unit with <g, y_hat> > 0";
    return r;
  }
  const GradientFn bn_grad = [&](const Tensor& y) { return pair.bn_grad(y); };
  const GradientFn vanilla_grad = [&](const Tensor& y) { return pair.vanilla_grad(y); };
  const double m = static_cast<double>(pair.m);
  double worst_identity = 0.0, worst_slack = std::numeric_limits<double>::infinity();
  double worst_closed = 0.0, min_curvature = std::numeric_limits<double>::infinity();
  for (std::size_t j : units) {
    const Tensor v = gh.column(j);
    const Tensor dir = only_column(pair.y, j, v.data());
    const double gamma = pair.bn.gamma[j], sigma = pair.cache.sigma[j];
    const double align = col_dot(g, j, pair.cache.y_hat, j);
    const double lhs = hessian_quadratic_form(bn_grad, pair.y, dir);
    const double h = hessian_quadratic_form(vanilla_grad, pair.y, dir);
    const double rhs = sq(gamma / sigma) * h - gamma / (m * sq(sigma)) * align * dot(v.data(), v.data());
    if (pair.downstream.kind == DownstreamKind::kQuadratic) {
      const Tensor& a = pair.downstream.consts[1];
      double exact = 0.0;
      for (std::size_t b = 0; b < pair.m; ++b)
        for (std::size_t c = 0; c < pair.m; ++c) exact += v[b] * a(b * pair.d + j, c * pair.d + j) * v[c];
      worst_closed = std::max(worst_closed, relative_gap(h, exact));
    }
    min_curvature = std::min(min_curvature, h);
    worst_identity = std::max(worst_identity, relative_gap(lhs, rhs));
    const double s = (rhs - lhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)});
    if (s < worst_slack) {
      worst_slack = s;
      r.lhs = lhs;
      r.rhs = rhs;
    }
  }
  r.metrics = {residual("quadratic_form_identity", worst_identity, kHvpTol),
               slack("inequality_slack", worst_slack, kHvpTol),
               slack("vanilla_curvature", min_curvature, kHvpTol)};
  if (pair.downstream.kind == DownstreamKind::kQuadratic)
    r.metrics.push_back(residual("hessian_closed_form", worst_closed, kHvpTol));
  r.note = std::to_string(units.size()) + " of " + std::to_string(pair.d) + " units with <g, y_hat> > 0";
  return r;
}

CheckReport check_minimax_lipschitz(const CoupledPair& pair, double lambda) {
  BNLAB_REQUIRE(std::isfinite(lambda) && lambda >= 0.0, ErrorCode::kInvalidArgument,
          "minimax: lambda must be >= 0");
  CheckReport r = start("minimax_lipschitz", pair);
  const Tensor g = pair.vanilla_grad(pair.y);
  const Tensor gh = pair.bn_grad(pair.y);
  const double m = static_cast<double>(pair.m);
  const double l2 = lambda * lambda;
  Rng rng = Rng(pair.seed).split(0x5eed);
  const std::size_t n_in = pair.x.cols();
  double worst_slack = std::numeric_limits<double>::infinity();
  double worst_attain = 0.0, worst_norm = 0.0, worst_random = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < pair.d; ++j) {
    const double ratio = pair.bn.gamma[j] / pair.cache.sigma[j];
    const Tensor v = gh.column(j);
    const Tensor gv = g.column(j);
    const double s1 = col_sum(g, j);
    const double s2 = col_dot(g, j, pair.cache.y_hat, j);
    const double g_hat = l2 * dot(v.data(), v.data());
    const double bound = l2 * ratio * ratio * (dot(gv.data(), gv.data()) - s1 * s1 / m - s2 * s2 / m);
    const double s = (bound - g_hat) / std::max({1.0, std::abs(g_hat), std::abs(bound)});
    if (s < worst_slack) {
      worst_slack = s;
      r.lhs = g_hat;
      r.rhs = bound;
    }
    // Weight-space gradient of column j is X^T v; the rank-one X attains the maximum.
    for (const Tensor* grad : {&v, &gv}) {
      const double target = l2 * dot(grad->data(), grad->data());
      const Tensor u = unit_vector(n_in, rng);
      const Tensor x = rank_one(grad->data(), u, lambda);
      const Tensor wg = matmul(transpose(x), *grad);
      worst_attain = std::max(worst_attain, relative_gap(dot(wg.data(), wg.data()), target));
      if (norm2(grad->data()) > 0.0)
        worst_norm = std::max(worst_norm, relative_gap(spectral_norm(x), lambda));
      for (int trial = 0; trial < 4; ++trial) {
        Tensor xr = gaussian(pair.m, n_in, rng);
        const double sn = spectral_norm(xr);
        xr = (lambda / sn) * xr;
        const Tensor wr = matmul(transpose(xr), *grad);
        const double val = dot(wr.data(), wr.data());
        worst_random = std::min(worst_random, (target - val) / std::max({1.0, target, val}));
      }
    }
  }
  r.metrics = {slack("inequality_slack", worst_slack, kClosedFormTol),
               residual("maximizer_attains", worst_attain, kClosedFormTol),
               residual("maximizer_spectral_norm", worst_norm, kClosedFormTol),
               slack("random_x_below_max", worst_random, kClosedFormTol)};
  return r;
}

CheckReport check_minimax_smoothness(const CoupledPair& pair, double lambda) {
  BNLAB_REQUIRE(std::isfinite(lambda) && lambda >= 0.0, ErrorCode::kInvalidArgument,
          "minimax: lambda must be >= 0");
  CheckReport r = start("minimax_smoothness", pair);
  const Tensor g = pair.vanilla_grad(pair.y);
  const Tensor gh = pair.bn_grad(pair.y);
  const std::vector<std::size_t> units = positive_alignment_units(pair, g);
  if (units.empty()) {
    r.skipped = true;
    r.note = "no unit with <g, y_hat> > 0";
    return r;
  }
  const GradientFn bn_grad = [&](const Tensor& y) { return pair.bn_grad(y); };
  const GradientFn vanilla_grad = [&](const Tensor& y) { return pair.vanilla_grad(y); };
  Rng rng = Rng(pair.seed).split(0x5eed);
  const double m = static_cast<double>(pair.m);
  const double l4 = sq(lambda * lambda);
  double worst_slack = std::numeric_limits<double>::infinity(), worst_homog = 0.0;
  for (std::size_t j : units) {
    const Tensor v = gh.column(j);
    const Tensor u = unit_vector(pair.x.cols(), rng);
    // beta(X) = (X X^T v)^T H_hat (X X^T v) for the weight-space gradient X^T v.
    auto weight_space = [&](const GradientFn& fn, double lam) {
      const Tensor x = rank_one(v.data(), u, lam);
      const Tensor dir_col = matmul(x, matmul(transpose(x), as_column(v.data())));
      return hessian_quadratic_form(fn, pair.y, only_column(pair.y, j, dir_col.data()));
    };
    const double beta_l = weight_space(bn_grad, lambda);
    const double beta_1 = weight_space(bn_grad, 1.0);
    worst_homog = std::max(worst_homog, relative_gap(beta_l, l4 * beta_1));
    const double gamma = pair.bn.gamma[j], sigma = pair.cache.sigma[j];
    const double align = col_dot(g, j, pair.cache.y_hat, j);
    const double rhs = sq(gamma / sigma) * weight_space(vanilla_grad, lambda) -
                       l4 * gamma / (m * sq(sigma)) * align * dot(v.data(), v.data());
    const double s = (rhs - beta_l) / std::max({1.0, std::abs(beta_l), std::abs(rhs)});
    if (s < worst_slack) {
      worst_slack = s;
      r.lhs = beta_l;
      r.rhs = rhs;
    }
  }
  r.metrics = {slack("inequality_slack", worst_slack, kHvpTol),
               residual("lambda4_homogeneity", worst_homog, 1e-6)};
  return r;
}

CheckReport check_rescaling_observation(const Tensor& w, const Tensor& x, const Downstream& downstream) {
  CheckReport r;
  r.name = "rescaling_observation";
  r.downstream = downstream_kind_name(downstream.kind);
  const Tensor y = matmul(x, w);
  r.m = y.rows();
  r.d = y.cols();
  const BnForward plain = bn_forward(y, BatchNormParams::identity(y.cols(), 0.0));
  const BatchNormParams coupled{plain.cache.sigma, plain.cache.mu, 0.0};
  const Tensor z = bn_forward(y, coupled).z;
  Tensor gy, gz;
  r.lhs = branch_value(downstream, nullptr, z, &gz);
  r.rhs = branch_value(downstream, nullptr, y, &gy);
  const Tensor diff = z - y;
  r.metrics = {residual("activation_mismatch", max_abs(diff.data()), 1e-12),
               residual("loss_mismatch", relative_gap(r.lhs, r.rhs), 1e-12),
               residual("gradient_mismatch", scaled_max_error(gz.data(), gy.data()), 1e-12)};
  return r;
}

CheckReport check_init_lemma(const Tensor& w0, const Tensor& w_star) {
  BNLAB_REQUIRE(w0.same_shape(w_star), ErrorCode::kShapeMismatch, "init lemma: shapes differ");
  const double inner = dot(w0.data(), w_star.data());
  BNLAB_REQUIRE(inner > 0.0, ErrorCode::kPrecondition, "init lemma needs <W0, W*> > 0");
  CheckReport r;
  r.name = "init_lemma";
  r.m = w0.rows();
  r.d = w0.cols();
  const double ns = dot(w_star.data(), w_star.data());
  const double k = inner / ns;
  const Tensor to_scaled = w0 - k * w_star;
  const Tensor to_star = w0 - w_star;
  const double lhs = dot(to_scaled.data(), to_scaled.data());
  const double base = dot(to_star.data(), to_star.data());
  const double rhs = base - sq(ns - inner) / ns;
  r.lhs = lhs;
  r.rhs = rhs;
  const double predicted = -ns * sq(1.0 - k);
  r.metrics = {residual("distance_identity", std::abs((lhs - base) - predicted) /
                                                 std::max({1.0, std::abs(lhs), std::abs(base)}),
                        1e-10),
               slack("inequality_slack", (rhs - lhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)}),
                     kClosedFormTol)};
  return r;
}

CheckReport check_bn_gradient_facts(const Tensor& y, const BatchNormParams& params,
                                    const Downstream& downstream) {
  CheckReport r;
  r.name = "bn_gradient_facts";
  r.downstream = downstream_kind_name(downstream.kind);
  r.m = y.rows();
  r.d = y.cols();
  const BnForward f = bn_forward(y, params);
  Tensor dz;
  branch_value(downstream, nullptr, f.z, &dz);
  const BnGradients closed = bn_backward(f.cache, params, dz);

  Branch ad = make_branch(downstream, &params);
  ad.graph.bind(ad.y, y);
  r.lhs = f.z.size() ? ad.graph.forward() : 0.0;
  ad.graph.backward();
  r.rhs = branch_value(downstream, nullptr, f.z, nullptr);
  const Tensor ad_dy = ad.graph.grad(ad.y);

  const ScalarFn loss = [&](const Tensor& yy) {
    return branch_value(downstream, nullptr, bn_forward(yy, params).z, nullptr);
  };
  const Tensor fd_dy = fd_grad(loss, y);

  double grad_vs_ad = scaled_max_error(closed.d_input.data(), ad_dy.data());
  grad_vs_ad = std::max(grad_vs_ad, scaled_max_error(closed.d_gamma.data(), ad.graph.grad(ad.gamma).data()));
  grad_vs_ad = std::max(grad_vs_ad, scaled_max_error(closed.d_beta.data(), ad.graph.grad(ad.beta).data()));
  const double grad_vs_fd = scaled_max_error(closed.d_input.data(), fd_dy.data());

  // Jacobian rows through autodiff (one backward pass per output entry) and
  // columns through central differences of the forward map.
  const std::vector<Tensor> jac = bn_input_jacobian(f.cache, params, std::max<std::size_t>(y.rows(), 1));
  const std::size_t m = y.rows(), d = y.cols();
  Graph jg;
  const NodeId jy = jg.input("y"), jgam = jg.input("gamma"), jbet = jg.input("beta"), jsel = jg.input("select");
  const NodeId jz = add_batch_norm_composed(jg, jy, jgam, jbet, params.eps);
  jg.set_output(jg.sum(jg.mul(jz, jsel)));
  jg.bind(jy, y);
  jg.bind(jgam, params.gamma);
  jg.bind(jbet, params.beta);
  double jac_vs_ad = 0.0, jac_vs_fd = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    Tensor ad_j = Tensor::matrix(m, m), fd_j = Tensor::matrix(m, m);
    for (std::size_t b = 0; b < m; ++b) {
      Tensor sel = Tensor::matrix(m, d);
      sel(b, j) = 1.0;
      jg.bind(jsel, sel);
      jg.forward();
      jg.backward();
      const Tensor& gy = jg.grad(jy);
      for (std::size_t k = 0; k < m; ++k) ad_j(b, k) = gy(k, j);
    }
    for (std::size_t k = 0; k < m; ++k) {
      Tensor up = y, down = y;
      up(k, j) += kGradientStep;
      down(k, j) -= kGradientStep;
      const Tensor zu = bn_forward(up, params).z, zd = bn_forward(down, params).z;
      for (std::size_t b = 0; b < m; ++b) fd_j(b, k) = (zu(b, j) - zd(b, j)) / (2.0 * kGradientStep);
    }
    jac_vs_ad = std::max(jac_vs_ad, scaled_max_error(jac[j].data(), ad_j.data()));
    jac_vs_fd = std::max(jac_vs_fd, scaled_max_error(jac[j].data(), fd_j.data()));
  }
  r.metrics = {residual("backward_vs_autodiff", grad_vs_ad, 1e-10),
               residual("backward_vs_finite_difference", grad_vs_fd, 1e-6),
               residual("jacobian_vs_autodiff", jac_vs_ad, 1e-10),
               residual("jacobian_vs_finite_difference", jac_vs_fd, 1e-6)};
  return r;
}

std::vector<CheckReport> run_verification(const VerifyOptions& o) {
  BNLAB_REQUIRE(o.m_min >= 2 && o.m_min <= o.m_max, ErrorCode::kConfig, "verify: need 2 <= m_min <= m_max");
  BNLAB_REQUIRE(o.d_min >= 1 && o.d_min <= o.d_max, ErrorCode::kConfig, "verify: need 1 <= d_min <= d_max");
  BNLAB_REQUIRE(std::isfinite(o.lambda) && o.lambda > 0.0, ErrorCode::kConfig, "verify: lambda must be > 0");
  std::vector<CheckReport> out;
  const Rng root(o.base_seed);
  for (std::size_t s = 0; s < o.seeds; ++s) {
    Rng rng = root.split(s);
    const std::uint64_t seed = rng.next_u64();
    const std::size_t m = o.m_min + rng.below(o.m_max - o.m_min + 1);
    const std::size_t d = o.d_min + rng.below(o.d_max - o.d_min + 1);
    const auto kind = static_cast<DownstreamKind>(s % 3);
    auto skip = [&](const std::string& name, const std::string& why) {
      CheckReport r;
      r.name = name;
      r.seed = seed;
      r.m = m;
      r.d = d;
      r.downstream = downstream_kind_name(kind);
      r.skipped = true;
      r.note = why;
      out.push_back(std::move(r));
    };
    auto tag = [&](CheckReport r) {
      r.seed = seed;
      out.push_back(std::move(r));
    };

    try {
      const CoupledPair pair = build_coupled_pair(m, d, kind, seed);
      tag(check_lipschitz(pair));
      tag(check_minimax_lipschitz(pair, o.lambda));
      tag(check_rescaling_observation(pair.w, pair.x, pair.downstream));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kPrecondition) throw;
      for (const char* name : {"lipschitz", "minimax_lipschitz", "rescaling_observation"}) skip(name, e.what());
    }
    try {
      const CoupledPair pair = build_smoothness_pair(m, d, seed);
      tag(check_smoothness(pair));
      tag(check_minimax_smoothness(pair, o.lambda));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kPrecondition) throw;
      for (const char* name : {"smoothness", "minimax_smoothness"}) skip(name, e.what());
    }

    Tensor w0 = gaussian(m, d, rng), ws = gaussian(m, d, rng);
    if (dot(w0.data(), ws.data()) < 0.0) w0 = -1.0 * w0;
    if (dot(w0.data(), ws.data()) > 0.0) tag(check_init_lemma(w0, ws));
    else skip("init_lemma", "orthogonal draw");

    const Tensor y = gaussian(m, d, rng, 2.0);
    BatchNormParams params{gaussian(1, d, rng), gaussian(1, d, rng), s % 2 ? 0.0 : kDefaultNormEps};
    Rng ds_rng = rng.split(7);
    tag(check_bn_gradient_facts(y, params, make_downstream(kind, m, d, ds_rng)));
  }
  return out;
}

}  // namespace bnlab
