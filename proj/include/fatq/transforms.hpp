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
#include <string>
#include <vector>

#include <json.hpp>

#include "fatq/graph.hpp"
#include "fatq/model_io.hpp"

namespace fatq {

// Merges every BatchNorm into the Conv2D / DWSConv2D / FullyConnected layer
// feeding it:  W' = gamma * W / sqrt(var + eps),
//              b' = beta + gamma * (b - mean) / sqrt(var + eps).
// Throws OrphanBatchNorm when a BN does not directly follow a foldable layer
// that has no other consumer.
Graph fold_batch_norm(const Graph& g);

struct DwsPatternReport {
  std::string dws_id;
  std::string activation_id;  // empty when DWS feeds the conv directly
  LayerKind activation = LayerKind::kReLU;
  bool has_activation = false;
  std::string conv_id;
  double t0 = 0.0;                    // control threshold
  std::vector<double> scales;         // S_W[k]
  std::vector<bool> locked;
  std::vector<double> x_max;          // per-channel pre-activation maxima
  std::vector<double> filter_max_abs; // T(w_k) before rescaling
};

struct SkippedPattern {
  std::string dws_id;
  std::string reason;
};

struct DwsRescaleReport {
  std::vector<DwsPatternReport> patterns;
  std::vector<SkippedPattern> skipped;
};

nlohmann::json to_json(const DwsRescaleReport& report);

struct DwsRescaleOptions {
  double lock_limit = 5.9;
  double saturation = kReLU6Saturation;
  std::int64_t batch = 64;
};

// Per-channel rescaling of DWS -> [ReLU | ReLU6] -> Conv2D patterns so that
// DWS filter thresholds move towards a common control value while the
// network function is preserved on the calibration envelope.
// Throws NoPatternFound when the graph has no eligible pattern.
std::pair<Graph, DwsRescaleReport> dws_rescale(const Graph& g, const Dataset& calib,
                                               const DwsRescaleOptions& options = {});

// Per-output-channel max |w| of a weight tensor (axis 0).
std::vector<double> per_channel_max_abs(const Tensor& w);

}  // namespace fatq
