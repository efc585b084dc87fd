// Copyright 2026 The LOCA Authors
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

#ifndef LOCA_TENSOR_HPP_
#define LOCA_TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "loca/errors.hpp"

namespace loca {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array. Rank 0 is a scalar, rank 2 is the workhorse
/// (rows are tokens, columns are features).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : shape_{0}, values_() {}

  explicit BasicTensor(Shape shape)
      : shape_(std::move(shape)), values_(shape_size(shape_), T{0}) {}

  BasicTensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    require(shape_size(shape_) == values_.size(), ErrorKind::kDimension,
            "shape " + shape_str(shape_) + " does not match " +
                std::to_string(values_.size()) + " values");
  }

  static BasicTensor filled(Shape shape, T value) {
    BasicTensor t(std::move(shape));
    std::fill(t.values_.begin(), t.values_.end(), value);
    return t;
  }

  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : size(); }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return values_[r * shape_[1] + c];
  }
  std::span<T> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const {
    return {values_.data() + r * cols(), cols()};
  }

  T item() const {
    require(values_.size() == 1, ErrorKind::kContract,
            "item() on tensor of shape " + shape_str(shape_));
    return values_[0];
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool flag) {
    requires_grad_ = flag;
    if (!flag) grad_.reset();
  }

  bool has_grad() const { return grad_.has_value(); }
  /// Allocates a zeroed gradient buffer on first use.
  std::span<T> grad() {
    if (!grad_) grad_.emplace(values_.size(), T{0});
    return *grad_;
  }
  std::span<const T> grad() const {
    require(grad_.has_value(), ErrorKind::kState, "gradient buffer not allocated");
    return *grad_;
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T{0});
  }
  void clear_grad() { grad_.reset(); }

  bool all_finite() const {
    for (T v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void check_finite(std::string_view what) const {
    require(all_finite(), ErrorKind::kNumeric,
            std::string(what) + " contains non-finite values");
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    BasicTensor<U> t(shape_, std::move(out));
    t.set_requires_grad(requires_grad_);
    return t;
  }

  bool operator==(const BasicTensor& other) const {
    return shape_ == other.shape_ && values_ == other.values_;
  }

 private:
  Shape shape_;
  std::vector<T> values_;
  bool requires_grad_ = false;
  std::optional<std::vector<T>> grad_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

}  // namespace loca

#endif  // LOCA_TENSOR_HPP_
