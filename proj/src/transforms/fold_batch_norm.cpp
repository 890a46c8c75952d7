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

#include <cmath>

#include "fatq/transforms.hpp"

namespace fatq {

Graph fold_batch_norm(const Graph& g) {
  Graph out = g;
  out.layers.clear();
  for (const auto& l : g.layers) {
    if (l.kernel.kind != LayerKind::kBatchNorm) {
      out.layers.push_back(l);
      continue;
    }
    const std::string& src = l.inputs.at(0);
    const Layer* prev = out.find(src);
    if (!prev || !is_compute(prev->kernel.kind)) {
      fail(ErrorCode::kOrphanBatchNorm, "BatchNorm '" + l.id + "' does not follow a Conv2D/DWSConv2D/FullyConnected layer");
    }
    if (g.consumers(src).size() != 1) {
      fail(ErrorCode::kOrphanBatchNorm, "BatchNorm '" + l.id + "' input '" + src + "' has other consumers");
    }
    Layer& target = out.layer(src);
    Tensor& w = *target.weights;
    const Tensor& bn = *l.weights;
    const std::int64_t channels = w.dim(0);
    if (bn.rank() != 2 || bn.dim(0) != 4 || bn.dim(1) != channels) {
      fail(ErrorCode::kShapeMismatch, "BatchNorm '" + l.id + "' parameters do not match " + std::to_string(channels) +
                                          " channels");
    }
    if (!target.bias) target.bias = Tensor({channels});
    Tensor& b = *target.bias;
    const std::int64_t per_channel = static_cast<std::int64_t>(w.size()) / channels;
    for (std::int64_t c = 0; c < channels; ++c) {
      const double gamma = bn[c], beta = bn[channels + c], mean = bn[2 * channels + c], var = bn[3 * channels + c];
      if (var < 0.0) fail(ErrorCode::kInvalidArgument, "BatchNorm '" + l.id + "' has negative variance");
      const double factor = gamma / std::sqrt(var + l.kernel.eps);
      for (std::int64_t i = 0; i < per_channel; ++i) w[c * per_channel + i] *= factor;
      b[c] = beta + factor * (b[c] - mean);
    }
  }
  // Re-point references to removed BN ids.
  for (const auto& l : g.layers) {
    if (l.kernel.kind != LayerKind::kBatchNorm) continue;
    for (auto& later : out.layers)
      for (auto& in : later.inputs)
        if (in == l.id) in = l.inputs.at(0);
    if (out.output_id == l.id) out.output_id = l.inputs.at(0);
  }
  validate(out);
  return out;
}

}  // namespace fatq
