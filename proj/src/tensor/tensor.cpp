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

#include "fatq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fatq {

std::int64_t num_elements(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) fail(ErrorCode::kShapeMismatch, "negative dimension in " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kReal64: return "real64";
    case DType::kInt8Range: return "int8range";
    case DType::kInt32Acc: return "int32acc";
  }
  return "unknown";
}

void expect_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    fail(ErrorCode::kShapeMismatch,
         std::string(what) + ": " + shape_to_string(a) + " vs " + shape_to_string(b));
  }
}

double max_abs(std::span<const double> values) {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  expect_same_shape(a.shape(), b.shape(), "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_relative_diff(const Tensor& a, const Tensor& b) {
  const double scale = std::max(max_abs(b.data()), std::numeric_limits<double>::min());
  return max_abs_diff(a, b) / scale;
}

}  // namespace fatq
