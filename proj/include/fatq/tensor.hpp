/* Copyright 2026 The FATQ Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fatq/error.hpp"

namespace fatq {

using Shape = std::vector<std::int64_t>;

std::int64_t num_elements(const Shape& shape);
std::string shape_to_string(const Shape& shape);

enum class DType {
  kReal64,     // float path
  kInt8Range,  // quantized codes, range checked by the quant module
  kInt32Acc,   // accumulators and quantized biases
};

std::string_view dtype_name(DType dtype);

// Dense row-major (NCHW) array. Real tensors store double; integer tensors
// store int32 codes and carry their logical dtype.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != num_elements(shape_)) {
      fail(ErrorCode::kShapeMismatch, "tensor data length " + std::to_string(data_.size()) +
                                          " does not match shape " + shape_to_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Same data, new shape with equal element count.
  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  bool operator==(const BasicTensor& other) const = default;

 private:
  static std::size_t checked_size(const Shape& shape) {
    return static_cast<std::size_t>(num_elements(shape));
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;

class IntTensor : public BasicTensor<std::int32_t> {
 public:
  IntTensor() = default;
  IntTensor(Shape shape, DType dtype, std::int32_t fill = 0)
      : BasicTensor(std::move(shape), fill), dtype_(dtype) {}
  IntTensor(Shape shape, DType dtype, std::vector<std::int32_t> data)
      : BasicTensor(std::move(shape), std::move(data)), dtype_(dtype) {}

  DType dtype() const noexcept { return dtype_; }

  bool operator==(const IntTensor& other) const = default;

 private:
  DType dtype_ = DType::kInt8Range;
};

// Throws ShapeMismatch with `what` in the message when shapes differ.
void expect_same_shape(const Shape& a, const Shape& b, const char* what);

double max_abs(std::span<const double> values);
double max_abs_diff(const Tensor& a, const Tensor& b);
// max |a - b| / max(max |b|, tiny)
double max_relative_diff(const Tensor& a, const Tensor& b);

}  // namespace fatq
