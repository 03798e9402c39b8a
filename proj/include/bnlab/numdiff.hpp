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

#include <functional>

#include "bnlab/tensor.hpp"

namespace bnlab {

using ScalarFn = std::function<double(const Tensor&)>;
using GradientFn = std::function<Tensor(const Tensor&)>;

inline constexpr double kGradientStep = 1e-5;
inline constexpr double kHvpStep = 1e-4;

// Central-difference gradient: entry i is (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
Tensor fd_grad(const ScalarFn& f, const Tensor& x, double eps = kGradientStep);

// Central-difference Hessian-vector product from a gradient oracle:
// (g(x + eps v) - g(x - eps v)) / (2 eps).
Tensor hvp(const GradientFn& g, const Tensor& x, const Tensor& v, double eps = kHvpStep);

// v^T H v along an arbitrary direction, taking the finite difference along the
// unit vector v/|v| so the step length does not depend on |v|.
double hessian_quadratic_form(const GradientFn& g, const Tensor& x, const Tensor& v,
                              double eps = kHvpStep);

}  // namespace bnlab
