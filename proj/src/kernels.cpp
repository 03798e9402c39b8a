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

#include "kernels.hpp"

#include <algorithm>
#include <array>
#include <utility>
#include <vector>

namespace bnlab::kernels {
namespace {

// Output width known at compile time: the accumulators stay in registers.
// Every output element still sums its products in ascending k, so the result
// is bit-identical to the generic loop.
template <std::size_t P>
void gemm_nn_fixed(const double* a, const double* b, double* c, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double acc[P];
    double* crow = c + i * P;
    for (std::size_t j = 0; j < P; ++j) acc[j] = crow[j];
    const double* arow = a + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      const double s = arow[k];
      const double* brow = b + k * P;
      for (std::size_t j = 0; j < P; ++j) acc[j] += s * brow[j];
    }
    for (std::size_t j = 0; j < P; ++j) crow[j] = acc[j];
  }
}

template <std::size_t P>
void gemm_tn_fixed(const double* a, const double* b, double* c, std::size_t m, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    double acc[P];
    double* crow = c + k * P;
    for (std::size_t j = 0; j < P; ++j) acc[j] = crow[j];
    for (std::size_t i = 0; i < m; ++i) {
      const double s = a[i * n + k];
      const double* brow = b + i * P;
      for (std::size_t j = 0; j < P; ++j) acc[j] += s * brow[j];
    }
    for (std::size_t j = 0; j < P; ++j) crow[j] = acc[j];
  }
}

using FixedKernel = void (*)(const double*, const double*, double*, std::size_t, std::size_t);

template <template <std::size_t> class Wrap, std::size_t... Ps>
constexpr auto make_table(std::index_sequence<Ps...>) {
  return std::array<FixedKernel, sizeof...(Ps)>{Wrap<Ps + 1>::fn...};
}

template <std::size_t P>
struct NnWrap {
  static constexpr FixedKernel fn = &gemm_nn_fixed<P>;
};
template <std::size_t P>
struct TnWrap {
  static constexpr FixedKernel fn = &gemm_tn_fixed<P>;
};

constexpr std::size_t kMaxFixed = 32;
constexpr auto kNnTable = make_table<NnWrap>(std::make_index_sequence<kMaxFixed>{});
constexpr auto kTnTable = make_table<TnWrap>(std::make_index_sequence<kMaxFixed>{});

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t p, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * p, 0.0);
  if (p >= 1 && p <= kMaxFixed) {
    kNnTable[p - 1](a, b, c, m, n);
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * p;
    const double* arow = a + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      const double s = arow[k];
      const double* brow = b + k * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += s * brow[j];
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t p, bool accumulate) {
  if (!accumulate) std::fill(c, c + n * p, 0.0);
  if (p >= 1 && p <= kMaxFixed) {
    kTnTable[p - 1](a, b, c, m, n);
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    const double* brow = b + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double s = arow[k];
      double* crow = c + k * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += s * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t p,
             std::size_t n, bool accumulate) {
  // Transpose b once so the inner loop runs over contiguous memory.
  std::vector<double> bt(p * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t q = 0; q < p; ++q) bt[q * n + r] = b[r * p + q];
  gemm_nn(a, bt.data(), c, m, p, n, accumulate);
}

}  // namespace bnlab::kernels
