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

namespace bnlab::kernels {

// Row-major dense products. The summation order is fixed (ascending over the
// contracted index), so results are reproducible bit-for-bit for a given
// binary regardless of vector width.

// c[m x p] (+)= a[m x n] * b[n x p]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t p, bool accumulate);

// c[n x p] (+)= a[m x n]^T * b[m x p]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t p, bool accumulate);

// c[m x n] (+)= a[m x p] * b[n x p]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t p,
             std::size_t n, bool accumulate);

}  // namespace bnlab::kernels
