// Copyright 2026 The stepfx Authors
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

#include <Eigen/Core>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "stepfx/error.hpp"

namespace stepfx::nn {

using Shape = std::vector<int>;

inline Eigen::Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += (i ? ", " : "") + std::to_string(shape[i]);
  }
  return s + ")";
}

template <typename Scalar>
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// Dense row-major array with a dynamic shape.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)),
        data_(Vector::Constant(shape_size(shape_), fill)) {}
  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const {
    return shape_[static_cast<std::size_t>(i < 0 ? rank() + i : i)];
  }
  Eigen::Index size() const noexcept { return data_.size(); }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  Vector& vec() noexcept { return data_; }
  const Vector& vec() const noexcept { return data_; }
  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  void reshape(Shape shape) {
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                       shape_string(shape));
    }
    shape_ = std::move(shape);
  }
  Tensor reshaped(Shape shape) const {
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
  }

  /// View as a rows x cols row-major matrix over the same storage.
  MatrixMap<Scalar> mat(Eigen::Index rows, Eigen::Index cols) {
    return MatrixMap<Scalar>(data(), rows, cols);
  }
  ConstMatrixMap<Scalar> mat(Eigen::Index rows, Eigen::Index cols) const {
    return ConstMatrixMap<Scalar>(data(), rows, cols);
  }
  /// First axis as rows, the rest flattened as columns.
  MatrixMap<Scalar> mat() { return mat(shape_.at(0), size() / shape_.at(0)); }
  ConstMatrixMap<Scalar> mat() const {
    return mat(shape_.at(0), size() / shape_.at(0));
  }

  void set_zero() { data_.setZero(); }
  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Vector data_;
};

/// Throws ShapeError unless `actual` matches `expected`; -1 matches any.
inline void expect_shape(const char* where, const Shape& actual,
                         const Shape& expected) {
  bool ok = actual.size() == expected.size();
  for (std::size_t i = 0; ok && i < actual.size(); ++i) {
    ok = expected[i] < 0 || expected[i] == actual[i];
  }
  if (!ok) {
    throw ShapeError(std::string(where) + ": expected " +
                     shape_string(expected) + ", got " + shape_string(actual));
  }
}

}  // namespace stepfx::nn
