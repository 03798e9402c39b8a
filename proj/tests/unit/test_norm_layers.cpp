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

#include <doctest.h>

#include <cmath>

#include "bnlab/autodiff.hpp"
#include "bnlab/error.hpp"
#include "bnlab/norm_layers.hpp"
#include "bnlab/numdiff.hpp"
#include "bnlab/rng.hpp"

using namespace bnlab;

namespace {

Tensor random_batch(std::size_t m, std::size_t d, Rng& rng) {
  Tensor y = Tensor::matrix(m, d);
  for (double& v : y.data()) v = rng.normal(0.0, 2.0) + 0.5;
  return y;
}

BatchNormParams params(std::size_t d, double gamma, double beta, double eps) {
  BatchNormParams p = BatchNormParams::identity(d, eps);
  p.gamma.fill(gamma);
  p.beta.fill(beta);
  return p;
}

LpNormConfig lp(LpOrder p, double gamma = 1.0, double beta = 0.0, double eps = 0.0) {
  LpNormConfig c;
  c.p = p;
  c.gamma = Tensor::matrix(1, 1, gamma);
  c.beta = Tensor::matrix(1, 1, beta);
  c.eps = eps;
  return c;
}

double col_mean(const Tensor& t, std::size_t j) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.rows(); ++i) s += t(i, j);
  return s / static_cast<double>(t.rows());
}

double col_var(const Tensor& t, std::size_t j) {
  const double mu = col_mean(t, j);
  double s = 0.0;
  for (std::size_t i = 0; i < t.rows(); ++i) s += (t(i, j) - mu) * (t(i, j) - mu);
  return s / static_cast<double>(t.rows());
}

}  // namespace

TEST_CASE("bn_forward: symmetric two-point batch") {
  const BnForward f = bn_forward(Tensor::from_rows({{1}, {3}}), params(1, 1, 0, 0));
  CHECK(f.cache.mu[0] == 2.0);
  CHECK(f.cache.sigma[0] == 1.0);
  CHECK(f.z == Tensor::from_rows({{-1}, {1}}));
}

TEST_CASE("bn_forward: constant input maps to beta") {
  const BnForward f = bn_forward(Tensor::from_rows({{0}, {0}}), params(1, 1.7, 0.25, 1e-5));
  CHECK(f.cache.y_hat == Tensor::from_rows({{0}, {0}}));
  CHECK(f.z == Tensor::from_rows({{0.25}, {0.25}}));
}

TEST_CASE("bn_forward: three-point batch with gamma=2, beta=1") {
  const BnForward f = bn_forward(Tensor::from_rows({{1}, {2}, {3}}), params(1, 2, 1, 0));
  CHECK(f.cache.sigma[0] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
  CHECK(f.z[0] == doctest::Approx(1.0 - 2.0 * std::sqrt(1.5)).epsilon(1e-12));
  CHECK(f.z[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.z[2] == doctest::Approx(1.0 + 2.0 * std::sqrt(1.5)).epsilon(1e-12));
  CHECK(std::abs(f.z[0] - -1.4495) < 1e-4);
  CHECK(std::abs(f.z[2] - 3.4495) < 1e-4);
}

TEST_CASE("bn_forward: preconditions") {
  CHECK_THROWS_AS(bn_forward(Tensor::from_rows({{1, 2}}), params(2, 1, 0, 0)), Error);
  CHECK_THROWS_AS(bn_forward(Tensor::from_rows({{1}, {1}}), params(1, 1, 0, 0)), Error);
  CHECK_THROWS_AS(bn_forward(Tensor::from_rows({{1}, {2}}), params(2, 1, 0, 0)), Error);
}

TEST_CASE("bn_forward: standardized columns and mean-shift invariance") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 + rng.below(63), d = 1 + rng.below(16);
    const Tensor y = random_batch(m, d, rng);
    const BnForward f = bn_forward(y, params(d, 1, 0, 0));
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(std::abs(col_mean(f.z, j)) < 1e-10);
      CHECK(std::abs(col_var(f.z, j) - 1.0) < 1e-10);
      double sq = 0.0;
      for (std::size_t i = 0; i < m; ++i) sq += f.cache.y_hat(i, j) * f.cache.y_hat(i, j);
      CHECK(std::abs(sq - static_cast<double>(m)) < 1e-8);
    }
    // Power-of-two shifts keep y + c exact, so the mean shifts exactly too.
    Tensor shifted = y;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j) shifted(i, j) += std::ldexp(1.0, static_cast<int>(j % 3));
    const BnForward g = bn_forward(shifted, params(d, 1, 0, 0));
    CHECK(scaled_max_error(g.z.data(), f.z.data()) < 1e-14);
  }
}

TEST_CASE("bn_backward: two-point batch has zero input gradient") {
  // Exact in real arithmetic; the subtraction of the two means leaves rounding.
  const BnForward f = bn_forward(Tensor::from_rows({{1, 4}, {3, 9}}), params(2, 1.3, 0, 0));
  const BnGradients g = bn_backward(f.cache, params(2, 1.3, 0, 0), Tensor::from_rows({{0.7, -2}, {5, 1.5}}));
  for (double v : g.d_input.data()) CHECK(std::abs(v) < 1e-14);
  const BnForward h = bn_forward(Tensor::from_rows({{-0.3, 4}, {2.2, 9.1}}), params(2, 1.3, 0, 0));
  const BnGradients k = bn_backward(h.cache, params(2, 1.3, 0, 0), Tensor::from_rows({{0.7, -2}, {5, 1.5}}));
  for (double v : k.d_input.data()) CHECK(std::abs(v) < 1e-14);
}

TEST_CASE("bn_backward: zero upstream gives zero everything") {
  Rng rng(1);
  const Tensor y = random_batch(6, 3, rng);
  const BatchNormParams p = params(3, 0.8, 0.1, 1e-5);
  const BnGradients g = bn_backward(bn_forward(y, p).cache, p, Tensor::matrix(6, 3));
  for (double v : g.d_input.data()) CHECK(v == 0.0);
  for (double v : g.d_gamma.data()) CHECK(v == 0.0);
  for (double v : g.d_beta.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(bn_backward(bn_forward(y, p).cache, p, Tensor::matrix(5, 3)), Error);
}

TEST_CASE("bn_backward matches finite differences of <dZ, Z>") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + rng.below(10), d = 1 + rng.below(5);
    const Tensor y = random_batch(m, d, rng);
    BatchNormParams p = params(d, 1, 0, trial % 2 == 0 ? 0.0 : 1e-5);
    for (double& v : p.gamma.data()) v = rng.uniform(-2, 2);
    for (double& v : p.beta.data()) v = rng.uniform(-2, 2);
    Tensor dz = Tensor::matrix(m, d);
    for (double& v : dz.data()) v = rng.uniform(-1, 1);
    const BnGradients g = bn_backward(bn_forward(y, p).cache, p, dz);
    auto objective = [&](const Tensor& yy, const BatchNormParams& pp) {
      return dot(bn_forward(yy, pp).z.data(), dz.data());
    };
    const Tensor fd_y = fd_grad([&](const Tensor& v) { return objective(v, p); }, y);
    const Tensor fd_gamma = fd_grad(
        [&](const Tensor& v) {
          BatchNormParams q = p;
          q.gamma = v;
          return objective(y, q);
        },
        p.gamma);
    CHECK(scaled_max_error(g.d_input.data(), fd_y.data()) < 1e-6);
    CHECK(scaled_max_error(g.d_gamma.data(), fd_gamma.data()) < 1e-6);
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += dz(i, j);
      CHECK(g.d_beta[j] == doctest::Approx(s).epsilon(1e-12));
    }
  }
}

TEST_CASE("bn_input_jacobian") {
  SUBCASE("two-point batch with gamma = sigma is all zeros") {
    const Tensor y = Tensor::from_rows({{1.5}, {-0.5}});
    const BnForward f = bn_forward(y, params(1, 1, 0, 0));
    BatchNormParams p = params(1, f.cache.sigma[0], 0, 0);
    const std::vector<Tensor> jac = bn_input_jacobian(f.cache, p);
    for (double v : jac[0].data()) CHECK(v == 0.0);
  }
  SUBCASE("row sums vanish, columns match finite differences, J dZ reproduces bn_backward") {
    Rng rng(9);
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t m = 2 + rng.below(8), d = 1 + rng.below(4);
      const Tensor y = random_batch(m, d, rng);
      BatchNormParams p = params(d, 1, 0, 0);
      for (double& v : p.gamma.data()) v = rng.uniform(0.5, 2);
      const BnForward f = bn_forward(y, p);
      const std::vector<Tensor> jac = bn_input_jacobian(f.cache, p);
      REQUIRE(jac.size() == d);
      Tensor dz = Tensor::matrix(m, d);
      for (double& v : dz.data()) v = rng.uniform(-1, 1);
      const BnGradients g = bn_backward(f.cache, p, dz);
      for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t b = 0; b < m; ++b) {
          double row = 0.0;
          for (std::size_t k = 0; k < m; ++k) row += jac[j](b, k);
          CHECK(std::abs(row) < 1e-12);
        }
        for (std::size_t k = 0; k < m; ++k) {
          double via_jacobian = 0.0;
          for (std::size_t b = 0; b < m; ++b) via_jacobian += jac[j](b, k) * dz(b, j);
          CHECK(std::abs(via_jacobian - g.d_input(k, j)) < 1e-10);
          // Column k: derivative of every z^(b) with respect to y^(k).
          for (std::size_t b = 0; b < m; ++b) {
            const Tensor fd = fd_grad([&](const Tensor& v) { return bn_forward(v, p).z(b, j); }, y);
            CHECK(std::abs(fd(k, j) - jac[j](b, k)) < 1e-6 * std::max(1.0, std::abs(jac[j](b, k))));
          }
        }
      }
    }
  }
  SUBCASE("batch above the limit is rejected") {
    Rng rng(0);
    const Tensor y = random_batch(65, 1, rng);
    CHECK_THROWS_AS(bn_input_jacobian(bn_forward(y, params(1, 1, 0, 0)).cache, params(1, 1, 0, 0)), Error);
  }
}

TEST_CASE("noisy_bn_apply") {
  Rng rng(4);
  const Tensor z = random_batch(50, 6, rng);
  CHECK(noisy_bn_apply(z, NoiseConfig::none(), Rng(1), 3) == z);
  const NoiseConfig paper;
  CHECK(paper.n_mu == 0.5);
  CHECK(paper.n_sigma == 1.25);
  CHECK(paper.r_mu == 0.1);
  CHECK(paper.r_sigma == 0.1);
  CHECK(noisy_bn_apply(z, paper, Rng(1), 3) == noisy_bn_apply(z, paper, Rng(1), 3));
  CHECK(noisy_bn_apply(z, paper, Rng(1), 3) != noisy_bn_apply(z, paper, Rng(1), 4));

  // 10 steps x 1000 samples x 10 units = 1e5 additive draws.
  double worst = 0.0;
  for (std::uint64_t t = 0; t < 10; ++t) {
    const NoiseSample s = sample_noise(1000, 10, paper, Rng(2), t);
    for (double v : s.shift.data()) worst = std::max(worst, std::abs(v));
    for (std::size_t j = 0; j < 10; ++j) CHECK(std::abs(col_mean(s.shift, j)) <= 0.6);
  }
  CHECK(worst <= 0.6);

  NoiseConfig bad = paper;
  bad.n_sigma = 0.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = paper;
  bad.r_sigma = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("noise stream of a unit does not depend on batch width") {
  const NoiseConfig paper;
  const NoiseSample narrow = sample_noise(4, 2, paper, Rng(8), 5);
  const NoiseSample wide = sample_noise(4, 7, paper, Rng(8), 5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(narrow.scale(i, j) == wide.scale(i, j));
}

TEST_CASE("lp_norm_forward examples") {
  SUBCASE("p=2 on a zero-mean unit-variance column is the identity") {
    const Tensor y = Tensor::from_rows({{1}, {-1}, {1}, {-1}});
    CHECK(lp_norm_forward(y, lp(LpOrder::kTwo)).z == y);
  }
  SUBCASE("p=inf") {
    const LpForward f = lp_norm_forward(Tensor::from_rows({{1}, {-2}, {1}}), lp(LpOrder::kInfinity));
    CHECK(f.cache.nu[0] == 2.0);
    CHECK(f.cache.mu[0] == 0.0);
    CHECK(f.z == Tensor::from_rows({{0.5}, {-1}, {0.5}}));
  }
  SUBCASE("p=1 on a constant column") {
    const LpForward f = lp_norm_forward(Tensor::from_rows({{1}, {1}, {1}}), lp(LpOrder::kOne, 3.0, 0.75));
    CHECK(f.cache.nu[0] == 1.0);
    CHECK(f.cache.mu[0] == 1.0);
    CHECK(f.z == Tensor::from_rows({{0.75}, {0.75}, {0.75}}));
  }
  SUBCASE("zero column with eps=0 is rejected") {
    CHECK_THROWS_AS(lp_norm_forward(Tensor::from_rows({{0}, {0}}), lp(LpOrder::kTwo)), Error);
  }
}

TEST_CASE("lp2 on zero-mean columns equals batch norm") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 2 + rng.below(20), d = 1 + rng.below(6);
    Tensor y = random_batch(m, d, rng);
    for (std::size_t j = 0; j < d; ++j) {
      const double mu = col_mean(y, j);
      for (std::size_t i = 0; i < m; ++i) y(i, j) -= mu;
    }
    LpNormConfig c;
    c.p = LpOrder::kTwo;
    c.gamma = Tensor::matrix(1, d, 1.0);
    c.beta = Tensor::matrix(1, d, 0.0);
    c.eps = 0.0;
    const Tensor a = lp_norm_forward(y, c).z;
    const Tensor b = bn_forward(y, params(d, 1, 0, 0)).z;
    CHECK(scaled_max_error(a.data(), b.data()) < 1e-10);
  }
}

TEST_CASE("graph ops agree with the standalone functions") {
  Rng rng(12);
  const std::size_t m = 7, d = 3;
  const Tensor y = random_batch(m, d, rng);
  Tensor gamma = Tensor::matrix(1, d), beta = Tensor::matrix(1, d);
  for (double& v : gamma.data()) v = rng.uniform(0.5, 2);
  for (double& v : beta.data()) v = rng.uniform(-1, 1);
  for (const bool composed : {false, true}) {
    Graph g;
    const NodeId yn = g.input("y"), gn = g.input("gamma"), bn = g.input("beta");
    const NodeId z = composed ? add_batch_norm_composed(g, yn, gn, bn, 1e-5) : add_batch_norm(g, yn, gn, bn, 1e-5);
    g.sum(z);
    forward(g, {{yn, y}, {gn, gamma}, {bn, beta}});
    BatchNormParams p{gamma, beta, 1e-5};
    CHECK(scaled_max_error(g.value(z).data(), bn_forward(y, p).z.data()) < 1e-13);
  }
  for (const LpOrder p : {LpOrder::kOne, LpOrder::kTwo, LpOrder::kInfinity}) {
    CAPTURE(lp_order_name(p));
    Tensor fused_value, composed_value;
    for (const bool composed : {false, true}) {
      Graph g;
      const NodeId yn = g.input("y"), gn = g.input("gamma"), bn = g.input("beta");
      const NodeId z = composed ? add_lp_norm_composed(g, yn, gn, bn, p, 1e-5)
                                : add_lp_norm(g, yn, gn, bn, p, 1e-5);
      g.sum(z);
      forward(g, {{yn, y}, {gn, gamma}, {bn, beta}});
      (composed ? composed_value : fused_value) = g.value(z);
    }
    LpNormConfig c{p, gamma, beta, 1e-5};
    CHECK(scaled_max_error(fused_value.data(), lp_norm_forward(y, c).z.data()) < 1e-13);
    CHECK(scaled_max_error(composed_value.data(), fused_value.data()) < 1e-13);
  }
}
