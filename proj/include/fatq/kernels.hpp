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

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fatq/tensor.hpp"

namespace fatq {

enum class LayerKind {
  kConv2D,
  kDWSConv2D,
  kFullyConnected,
  kBatchNorm,
  kReLU,
  kReLU6,
  kAvgPool,
  kSoftmax,
  kAdd,
};

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

inline constexpr double kReLU6Saturation = 6.0;

bool has_weights(LayerKind kind);  // Conv2D, DWSConv2D, FullyConnected, BatchNorm
bool is_compute(LayerKind kind);   // Conv2D, DWSConv2D, FullyConnected
bool is_activation(LayerKind kind);

struct LayerKernel {
  LayerKind kind = LayerKind::kReLU;
  int stride = 1;
  int padding = 0;
  // Conv2D only; DWSConv2D is always grouped by channel.
  int groups = 1;
  // AvgPool window; manifests without a stride use the window as stride.
  int pool = 2;
  // BatchNorm epsilon. Weights blob is [4, C] = {gamma, beta, mean, var}.
  double eps = 1e-5;

  bool operator==(const LayerKernel&) const = default;
};

using TensorRefs = std::span<const Tensor* const>;

// Forward evaluation of a single layer on an NCHW batch ([N, F] after FC).
Tensor forward(const LayerKernel& kernel, TensorRefs inputs, const Tensor* weights,
               const Tensor* bias);
Tensor forward(const LayerKernel& kernel, const Tensor& input, const Tensor* weights = nullptr,
               const Tensor* bias = nullptr);

struct LayerGrads {
  std::vector<Tensor> inputs;
  std::optional<Tensor> weights;
  std::optional<Tensor> bias;
};

// Chain rule through one layer. The forward output is recomputed where it is
// needed (Softmax), so only the inputs are required.
LayerGrads backward(const LayerKernel& kernel, TensorRefs inputs, const Tensor* weights,
                    const Tensor* bias, const Tensor& grad_out);
LayerGrads backward(const LayerKernel& kernel, const Tensor& input, const Tensor* weights,
                    const Tensor* bias, const Tensor& grad_out);

// Output shape for the given input shapes; throws ShapeMismatch.
Shape output_shape(const LayerKernel& kernel, std::span<const Shape> inputs,
                   const Tensor* weights);

struct HistogramBin {
  double lower_edge;
  std::int64_t count;
};

// Equal-width bins over [min, max]. A constant tensor yields a single bin.
std::vector<HistogramBin> histogram(const Tensor& t, int bins);

}  // namespace fatq
