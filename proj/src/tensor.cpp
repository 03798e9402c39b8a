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

#include "bnlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "kernels.hpp"

namespace bnlab {
namespace {

std::size_t element_count(const Shape& shape) {
  BNLAB_REQUIRE(!shape.empty(), ErrorCode::kShapeMismatch, "tensor shape must have at least one extent");
  std::size_t n = 1;
  for (std::size_t e : shape) {
    BNLAB_REQUIRE(e > 0, ErrorCode::kShapeMismatch,
            "tensor extents must be positive, got " + shape_to_string(shape));
    n *= e;
  }
  return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  BNLAB_REQUIRE(a.same_shape(b), ErrorCode::kShapeMismatch,
          std::string(op) + ": shape " + shape_to_string(a.shape()) + " vs " +
              shape_to_string(b.shape()));
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  BNLAB_REQUIRE(element_count(shape_) == data_.size(), ErrorCode::kShapeMismatch,
          "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
              shape_to_string(shape_));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  BNLAB_REQUIRE(rows.size() > 0, ErrorCode::kShapeMismatch, "from_rows: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    BNLAB_REQUIRE(r.size() == cols, ErrorCode::kShapeMismatch, "from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(data));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor(Shape{1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Tensor::rows() const {
  BNLAB_REQUIRE(rank() == 2, ErrorCode::kShapeMismatch, "rows() needs a rank-2 tensor");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  BNLAB_REQUIRE(rank() == 2, ErrorCode::kShapeMismatch, "cols() needs a rank-2 tensor");
  return shape_[1];
}

double Tensor::item() const {
  BNLAB_REQUIRE(data_.size() == 1, ErrorCode::kShapeMismatch,
          "item() on tensor of shape " + shape_to_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  // v * 0 is NaN exactly when v is NaN or infinite; the sum stays branch-free.
  double acc = 0.0;
  for (double v : data_) acc += v * 0.0;
  return acc == 0.0;
}

void Tensor::require_finite(std::string_view context) const {
  if (!all_finite()) fail(ErrorCode::kNonFinite, "non-finite value in " + std::string(context));
}

void Tensor::reshape_to(const Shape& shape) {
  if (shape == shape_) return;
  const std::size_t n = element_count(shape);
  shape_ = shape;
  data_.resize(n);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::column(std::size_t c) const {
  const std::size_t m = rows();
  const std::size_t d = cols();
  BNLAB_REQUIRE(c < d, ErrorCode::kInvalidArgument, "column index out of range");
  Tensor out = Tensor::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) out[i] = data_[i * d + c];
  return out;
}

void Tensor::set_column(std::size_t c, std::span<const double> values) {
  const std::size_t m = rows();
  const std::size_t d = cols();
  BNLAB_REQUIRE(c < d && values.size() == m, ErrorCode::kShapeMismatch, "set_column: bad column");
  for (std::size_t i = 0; i < m; ++i) data_[i * d + c] = values[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  BNLAB_REQUIRE(a.size() == b.size(), ErrorCode::kShapeMismatch, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

double scaled_max_error(std::span<const double> a, std::span<const double> b) {
  BNLAB_REQUIRE(a.size() == b.size(), ErrorCode::kShapeMismatch, "scaled_max_error: length mismatch");
  double err = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a[i] - b[i]));
  return err / std::max(1.0, max_abs(b));
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  BNLAB_REQUIRE(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(), ErrorCode::kShapeMismatch,
          "matmul: " + shape_to_string(a.shape()) + " * " + shape_to_string(b.shape()));
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  kernels::gemm_nn(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(),
                   b.cols(), false);
  return out;
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  return out;
}

}  // namespace bnlab
