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

#include "bnlab/norm_layers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <type_traits>
#include <utility>

namespace bnlab {
namespace {

void check_params(const Tensor& y, const Tensor& gamma, const Tensor& beta, double eps,
                  const char* op) {
  BNLAB_REQUIRE(y.rank() == 2, ErrorCode::kShapeMismatch, std::string(op) + ": input must be m x d");
  BNLAB_REQUIRE(y.rows() >= 2, ErrorCode::kPrecondition,
          std::string(op) + ": batch size must be at least 2, got " + std::to_string(y.rows()));
  const Shape row{1, y.cols()};
  BNLAB_REQUIRE(gamma.shape() == row && beta.shape() == row, ErrorCode::kShapeMismatch,
          std::string(op) + ": gamma/beta must be 1 x " + std::to_string(y.cols()));
  BNLAB_REQUIRE(eps >= 0.0 && std::isfinite(eps), ErrorCode::kInvalidArgument,
          std::string(op) + ": eps must be finite and non-negative");
  if (!gamma.all_finite() || !beta.all_finite())
    fail(ErrorCode::kNonFinite, std::string(op) + ": non-finite gamma or beta");
}

// Column loops with a compile-time width D (0 = use the runtime width), so
// small layers keep their per-unit sums in registers.
template <std::size_t D>
using Scratch = std::conditional_t<D == 0, std::vector<double>, std::array<double, D == 0 ? 1 : D>>;

template <std::size_t D>
Scratch<D> make_scratch(std::size_t d) {
  Scratch<D> s{};
  if constexpr (D == 0) s.assign(d, 0.0);
  return s;
}

template <std::size_t D>
void bn_forward_kernel(const double* __restrict y, const double* gamma, const double* beta,
                       double eps, std::size_t m, std::size_t d_rt, double* __restrict mu_out,
                       double* __restrict sigma_out, double* __restrict yh, double* __restrict z) {
  const std::size_t d = D == 0 ? d_rt : D;
  const double inv_m = 1.0 / static_cast<double>(m);
  Scratch<D> mu = make_scratch<D>(d), var = make_scratch<D>(d), inv = make_scratch<D>(d);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += y[i * d + j];
  for (std::size_t j = 0; j < d; ++j) mu[j] *= inv_m;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = y[i * d + j] - mu[j];
      var[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] * inv_m + eps);
    BNLAB_REQUIRE(sd > 0.0, ErrorCode::kPrecondition,
                  "bn_forward: unit " + std::to_string(j) + " has zero batch variance and eps = 0");
    inv[j] = 1.0 / sd;
    mu_out[j] = mu[j];
    sigma_out[j] = sd;
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double v = (y[i * d + j] - mu[j]) * inv[j];
      yh[i * d + j] = v;
      z[i * d + j] = gamma[j] * v + beta[j];
    }
}

template <std::size_t D>
void bn_backward_kernel(const double* __restrict dz, const double* __restrict yh,
                        const double* gamma, const double* sigma, std::size_t m, std::size_t d_rt,
                        double* __restrict dy, double* __restrict d_gamma, double* __restrict d_beta) {
  const std::size_t d = D == 0 ? d_rt : D;
  const double md = static_cast<double>(m);
  Scratch<D> db = make_scratch<D>(d), dg = make_scratch<D>(d), c = make_scratch<D>(d);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      db[j] += dz[i * d + j];
      dg[j] += dz[i * d + j] * yh[i * d + j];
    }
  for (std::size_t j = 0; j < d; ++j) c[j] = gamma[j] / (md * sigma[j]);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j)
      dy[i * d + j] += c[j] * (md * dz[i * d + j] - db[j] - yh[i * d + j] * dg[j]);
  for (std::size_t j = 0; j < d; ++j) {
    d_gamma[j] += dg[j];
    d_beta[j] += db[j];
  }
}

using ForwardKernel = void (*)(const double*, const double*, const double*, double, std::size_t,
                               std::size_t, double*, double*, double*, double*);
using BackwardKernel = void (*)(const double*, const double*, const double*, const double*,
                                std::size_t, std::size_t, double*, double*, double*);

constexpr std::size_t kMaxFixedWidth = 16;

template <std::size_t... Ds>
constexpr std::array<ForwardKernel, sizeof...(Ds)> forward_table(std::index_sequence<Ds...>) {
  return {&bn_forward_kernel<Ds>...};
}
template <std::size_t... Ds>
constexpr std::array<BackwardKernel, sizeof...(Ds)> backward_table(std::index_sequence<Ds...>) {
  return {&bn_backward_kernel<Ds>...};
}
constexpr auto kForward = forward_table(std::make_index_sequence<kMaxFixedWidth + 1>{});
constexpr auto kBackward = backward_table(std::make_index_sequence<kMaxFixedWidth + 1>{});

// Writes z and the cache into existing buffers, reallocating only on a shape change.
void bn_forward_into(const Tensor& y, const Tensor& gamma, const Tensor& beta, double eps,
                     Tensor& z, BNCache& cache) {
  check_params(y, gamma, beta, eps, "bn_forward");
  const std::size_t m = y.rows();
  const std::size_t d = y.cols();
  z.reshape_to(y.shape());
  cache.y_hat.reshape_to(y.shape());
  cache.mu.reshape_to({1, d});
  cache.sigma.reshape_to({1, d});
  const ForwardKernel k = d <= kMaxFixedWidth ? kForward[d] : kForward[0];
  k(y.data().data(), gamma.data().data(), beta.data().data(), eps, m, d, cache.mu.data().data(),
    cache.sigma.data().data(), cache.y_hat.data().data(), z.data().data());
}

// Adds the closed-form gradients to dy (m x d), d_gamma and d_beta (1 x d).
void bn_backward_add(const BNCache& cache, const Tensor& gamma, const Tensor& dz, Tensor& dy,
                     Tensor& d_gamma, Tensor& d_beta) {
  BNLAB_REQUIRE(dz.same_shape(cache.y_hat), ErrorCode::kShapeMismatch,
                "bn_backward: dz shape " + shape_to_string(dz.shape()) + " does not match cache " +
                    shape_to_string(cache.y_hat.shape()));
  const std::size_t m = dz.rows();
  const std::size_t d = dz.cols();
  const BackwardKernel k = d <= kMaxFixedWidth ? kBackward[d] : kBackward[0];
  k(dz.data().data(), cache.y_hat.data().data(), gamma.data().data(), cache.sigma.data().data(), m,
    d, dy.data().data(), d_gamma.data().data(), d_beta.data().data());
}

class BatchNormOp final : public CustomOp {
 public:
  explicit BatchNormOp(double eps) : eps_(eps) {}

  std::string_view name() const override { return "batch_norm"; }
  std::unique_ptr<CustomOp> clone() const override { return std::make_unique<BatchNormOp>(*this); }

  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    bn_forward_into(*in[0], *in[1], *in[2], eps_, out, cache_);
  }

  void backward(std::span<const Tensor* const> in, const Tensor& /*out*/, const Tensor& dout,
                std::span<Tensor* const> grads) override {
    bn_backward_add(cache_, *in[1], dout, *grads[0], *grads[1], *grads[2]);
  }

 private:
  double eps_;
  BNCache cache_;
};

// Fused l_p normalization with the gradient written out per unit:
//   dy_b = gamma / s * (dz_b - mean(dz)) - gamma / s^2 * sum_k dz_k c_k * dnu/dy_b
// with c = y - mu and s = nu + eps.
class LpNormOp final : public CustomOp {
 public:
  LpNormOp(LpOrder p, double eps) : p_(p), eps_(eps) {}

  std::string_view name() const override { return "lp_norm"; }
  std::unique_ptr<CustomOp> clone() const override { return std::make_unique<LpNormOp>(*this); }

  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    const Tensor& y = *in[0];
    const Tensor& gamma = *in[1];
    const Tensor& beta = *in[2];
    check_params(y, gamma, beta, eps_, "lp_norm");
    const std::size_t m = y.rows();
    const std::size_t d = y.cols();
    const double inv_m = 1.0 / static_cast<double>(m);
    mu_.assign(d, 0.0);
    nu_.assign(d, 0.0);
    argmax_.assign(d, 0);
    const double* yd = y.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double v = yd[i * d + j];
        mu_[j] += v;
        switch (p_) {
          case LpOrder::kOne: nu_[j] += std::abs(v); break;
          case LpOrder::kTwo: nu_[j] += v * v; break;
          case LpOrder::kInfinity:
            if (std::abs(v) > nu_[j]) {
              nu_[j] = std::abs(v);
              argmax_[j] = i;
            }
            break;
        }
      }
    for (std::size_t j = 0; j < d; ++j) {
      mu_[j] *= inv_m;
      if (p_ == LpOrder::kOne) nu_[j] *= inv_m;
      if (p_ == LpOrder::kTwo) nu_[j] = std::sqrt(nu_[j] * inv_m);
      BNLAB_REQUIRE(nu_[j] + eps_ > 0.0, ErrorCode::kPrecondition,
                    "lp_norm: unit " + std::to_string(j) + " has zero norm and eps = 0");
    }
    out.reshape_to(y.shape());
    double* z = out.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j)
        z[i * d + j] = gamma[j] * (yd[i * d + j] - mu_[j]) / (nu_[j] + eps_) + beta[j];
  }

  void backward(std::span<const Tensor* const> in, const Tensor& /*out*/, const Tensor& dout,
                std::span<Tensor* const> grads) override {
    const Tensor& y = *in[0];
    const Tensor& gamma = *in[1];
    const std::size_t m = y.rows();
    const std::size_t d = y.cols();
    const double md = static_cast<double>(m);
    const double* yd = y.data().data();
    const double* dz = dout.data().data();
    std::vector<double> s1(d, 0.0), s2(d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        s1[j] += dz[i * d + j];
        s2[j] += dz[i * d + j] * (yd[i * d + j] - mu_[j]);
      }
    double* dy = grads[0]->data().data();
    for (std::size_t j = 0; j < d; ++j) {
      const double s = nu_[j] + eps_;
      const double a = gamma[j] / s;
      const double b = gamma[j] * s2[j] / (s * s);
      for (std::size_t i = 0; i < m; ++i) {
        const double v = yd[i * d + j];
        double dnu = 0.0;
        switch (p_) {
          case LpOrder::kOne: dnu = (v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0) / md; break;
          case LpOrder::kTwo: dnu = nu_[j] > 0.0 ? v / (md * nu_[j]) : 0.0; break;
          case LpOrder::kInfinity:
            dnu = i == argmax_[j] ? (v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0) : 0.0;
            break;
        }
        dy[i * d + j] += a * (dz[i * d + j] - s1[j] / md) - b * dnu;
      }
      (*grads[1])[j] += s2[j] / s;
      (*grads[2])[j] += s1[j];
    }
  }

 private:
  LpOrder p_;
  double eps_;
  std::vector<double> mu_;
  std::vector<double> nu_;
  std::vector<std::size_t> argmax_;
};

}  // namespace

BatchNormParams BatchNormParams::identity(std::size_t units, double eps) {
  return BatchNormParams{Tensor::matrix(1, units, 1.0), Tensor::matrix(1, units, 0.0), eps};
}

BnForward bn_forward(const Tensor& y, const BatchNormParams& params) {
  BnForward out;
  bn_forward_into(y, params.gamma, params.beta, params.eps, out.z, out.cache);
  return out;
}

BnGradients bn_backward(const BNCache& cache, const BatchNormParams& params, const Tensor& dz) {
  const std::size_t d = cache.y_hat.cols();
  BnGradients g{Tensor(cache.y_hat.shape()), Tensor::matrix(1, d), Tensor::matrix(1, d)};
  bn_backward_add(cache, params.gamma, dz, g.d_input, g.d_gamma, g.d_beta);
  return g;
}

std::vector<Tensor> bn_input_jacobian(const BNCache& cache, const BatchNormParams& params,
                                      std::size_t max_batch) {
  const std::size_t m = cache.y_hat.rows();
  const std::size_t d = cache.y_hat.cols();
  BNLAB_REQUIRE(m <= max_batch, ErrorCode::kPrecondition,
          "bn_input_jacobian: batch " + std::to_string(m) + " exceeds limit " +
              std::to_string(max_batch));
  const double inv_m = 1.0 / static_cast<double>(m);
  std::vector<Tensor> out;
  out.reserve(d);
  for (std::size_t j = 0; j < d; ++j) {
    Tensor jac = Tensor::matrix(m, m);
    const double c = params.gamma[j] / cache.sigma[j];
    for (std::size_t b = 0; b < m; ++b)
      for (std::size_t k = 0; k < m; ++k) {
        const double delta = b == k ? 1.0 : 0.0;
        jac(b, k) = c * (delta - inv_m - inv_m * cache.y_hat(b, j) * cache.y_hat(k, j));
      }
    out.push_back(std::move(jac));
  }
  return out;
}

void NoiseConfig::validate() const {
  BNLAB_REQUIRE(std::isfinite(n_mu) && std::isfinite(n_sigma) && std::isfinite(r_mu) &&
              std::isfinite(r_sigma),
          ErrorCode::kInvalidArgument, "noise constants must be finite");
  BNLAB_REQUIRE(n_sigma >= 1.0, ErrorCode::kInvalidArgument, "noise n_sigma must be >= 1");
  BNLAB_REQUIRE(n_mu >= 0.0 && r_mu >= 0.0 && r_sigma >= 0.0, ErrorCode::kInvalidArgument,
          "noise n_mu, r_mu, r_sigma must be >= 0");
}

NoiseSample sample_noise(std::size_t rows, std::size_t units, const NoiseConfig& cfg,
                         const Rng& rng, std::uint64_t step) {
  cfg.validate();
  NoiseSample s{Tensor::matrix(rows, units), Tensor::matrix(rows, units)};
  for (std::size_t j = 0; j < units; ++j) {
    Rng unit = rng.split({step, static_cast<std::uint64_t>(j)});
    const double mean = unit.uniform(-cfg.n_mu, cfg.n_mu);
    const double scale = unit.uniform(1.0, cfg.n_sigma);
    for (std::size_t i = 0; i < rows; ++i) {
      s.shift(i, j) = unit.uniform(mean - cfg.r_mu, mean + cfg.r_mu);
      s.scale(i, j) = unit.normal(scale, cfg.r_sigma);
    }
  }
  return s;
}

Tensor noisy_bn_apply(const Tensor& z, const NoiseConfig& cfg, const Rng& rng,
                      std::uint64_t step) {
  BNLAB_REQUIRE(z.rank() == 2, ErrorCode::kShapeMismatch, "noisy_bn_apply: input must be m x d");
  const NoiseSample s = sample_noise(z.rows(), z.cols(), cfg, rng, step);
  Tensor out = z;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s.scale[i] * z[i] + s.shift[i];
  return out;
}

std::string lp_order_name(LpOrder p) {
  switch (p) {
    case LpOrder::kOne: return "1";
    case LpOrder::kTwo: return "2";
    case LpOrder::kInfinity: return "inf";
  }
  return "?";
}

LpForward lp_norm_forward(const Tensor& y, const LpNormConfig& cfg) {
  check_params(y, cfg.gamma, cfg.beta, cfg.eps, "lp_norm_forward");
  const std::size_t m = y.rows();
  const std::size_t d = y.cols();
  const double inv_m = 1.0 / static_cast<double>(m);
  LpForward out{Tensor::matrix(m, d), LpCache{Tensor::matrix(1, d), Tensor::matrix(1, d)}};
  Tensor& mu = out.cache.mu;
  Tensor& nu = out.cache.nu;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double v = y(i, j);
      mu[j] += v;
      switch (cfg.p) {
        case LpOrder::kOne: nu[j] += std::abs(v); break;
        case LpOrder::kTwo: nu[j] += v * v; break;
        case LpOrder::kInfinity: nu[j] = std::max(nu[j], std::abs(v)); break;
      }
    }
  for (std::size_t j = 0; j < d; ++j) {
    mu[j] *= inv_m;
    if (cfg.p == LpOrder::kOne) nu[j] *= inv_m;
    if (cfg.p == LpOrder::kTwo) nu[j] = std::sqrt(nu[j] * inv_m);
    BNLAB_REQUIRE(nu[j] + cfg.eps > 0.0, ErrorCode::kPrecondition,
            "lp_norm_forward: unit " + std::to_string(j) + " has zero norm and eps = 0");
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.z(i, j) = cfg.gamma[j] * (y(i, j) - mu[j]) / (nu[j] + cfg.eps) + cfg.beta[j];
  return out;
}

NodeId add_batch_norm(Graph& graph, NodeId y, NodeId gamma, NodeId beta, double eps) {
  BNLAB_REQUIRE(eps >= 0.0, ErrorCode::kInvalidArgument, "add_batch_norm: eps must be >= 0");
  return graph.custom(std::make_unique<BatchNormOp>(eps), {y, gamma, beta});
}

NodeId add_batch_norm_composed(Graph& graph, NodeId y, NodeId gamma, NodeId beta, double eps) {
  const NodeId mu = graph.col_mean(y);
  const NodeId centered = graph.sub_row(y, mu);
  const NodeId var = graph.col_mean(graph.square(centered));
  const NodeId sigma = graph.sqrt(graph.add_scalar(var, eps));
  const NodeId y_hat = graph.div_row(centered, sigma);
  return graph.add_row(graph.mul_row(y_hat, gamma), beta);
}

NodeId add_lp_norm(Graph& graph, NodeId y, NodeId gamma, NodeId beta, LpOrder p, double eps) {
  BNLAB_REQUIRE(eps >= 0.0, ErrorCode::kInvalidArgument, "add_lp_norm: eps must be >= 0");
  return graph.custom(std::make_unique<LpNormOp>(p, eps), {y, gamma, beta});
}

NodeId add_lp_norm_composed(Graph& graph, NodeId y, NodeId gamma, NodeId beta, LpOrder p,
                            double eps) {
  const NodeId centered = graph.sub_row(y, graph.col_mean(y));
  NodeId nu = 0;
  switch (p) {
    case LpOrder::kOne: nu = graph.col_mean(graph.abs(y)); break;
    case LpOrder::kTwo: nu = graph.sqrt(graph.col_mean(graph.square(y))); break;
    case LpOrder::kInfinity: nu = graph.col_max_abs(y); break;
  }
  const NodeId scaled = graph.div_row(centered, graph.add_scalar(nu, eps));
  return graph.add_row(graph.mul_row(scaled, gamma), beta);
}

}  // namespace bnlab
