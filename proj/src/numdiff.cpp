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

#include "bnlab/numdiff.hpp"

#include <cmath>

namespace bnlab {

Tensor fd_grad(const ScalarFn& f, const Tensor& x, double eps) {
  BNLAB_REQUIRE(eps > 0.0, ErrorCode::kInvalidArgument, "fd_grad: eps must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      fail(ErrorCode::kNonFinite, "fd_grad: non-finite function value");
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

Tensor hvp(const GradientFn& g, const Tensor& x, const Tensor& v, double eps) {
  BNLAB_REQUIRE(eps > 0.0, ErrorCode::kInvalidArgument, "hvp: eps must be positive");
  BNLAB_REQUIRE(x.same_shape(v), ErrorCode::kShapeMismatch, "hvp: direction shape differs from point");
  BNLAB_REQUIRE(norm2(v.data()) > 0.0, ErrorCode::kInvalidArgument, "hvp: zero direction");
  Tensor up = g(x + eps * v);
  Tensor down = g(x - eps * v);
  up.require_finite("hvp gradient (+)");
  down.require_finite("hvp gradient (-)");
  BNLAB_REQUIRE(up.same_shape(x) && down.same_shape(x), ErrorCode::kShapeMismatch,
          "hvp: gradient oracle returned the wrong shape");
  return (1.0 / (2.0 * eps)) * (up - down);
}

double hessian_quadratic_form(const GradientFn& g, const Tensor& x, const Tensor& v, double eps) {
  const double n = norm2(v.data());
  if (n == 0.0) return 0.0;
  const Tensor unit = (1.0 / n) * v;
  const Tensor hu = hvp(g, x, unit, eps);
  return n * n * dot(unit.data(), hu.data());
}

}  // namespace bnlab
