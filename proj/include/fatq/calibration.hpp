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

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fatq/graph.hpp"
#include "fatq/model_io.hpp"
#include "fatq/quant.hpp"

namespace fatq {

// One integer operation: a layer plus an optionally fused trailing
// ReLU/ReLU6. Its output is the only quantized site it produces.
struct QuantOp {
  std::string layer_id;
  LayerKind kind = LayerKind::kConv2D;
  std::optional<LayerKind> activation;  // fused
  std::string activation_id;
  std::vector<std::string> input_sites;
  std::string output_site;  // activation_id when fused, else layer_id
  Signedness output_signedness = Signedness::kSigned;
};

// Where quantization happens in a BN-free graph. Activation sites are the
// network input and every op output; weight sites are named
// "<layer>/weights".
struct QuantPlan {
  std::string input_site;
  std::vector<QuantOp> ops;
  std::map<std::string, Signedness> activation_sites;
  std::vector<std::string> weight_layers;
  std::string logits_site;

  static std::string weight_site(const std::string& layer_id) { return layer_id + "/weights"; }
  const QuantOp* op_for_layer(const std::string& layer_id) const;
};

// Throws InvalidArgument for BatchNorm layers and UnsupportedKind for a
// Softmax anywhere but at the graph output.
QuantPlan build_plan(const Graph& g);

struct RangeStats {
  double min = 0.0;
  double max = 0.0;
  bool seen = false;

  void observe(std::span<const double> values);
};

struct WeightStats {
  double min = 0.0;
  double max = 0.0;
  double max_abs = 0.0;
  std::vector<double> channel_min;
  std::vector<double> channel_max;
  std::vector<double> channel_max_abs;
};

WeightStats weight_stats(const Tensor& w);

struct CalibStats {
  std::map<std::string, RangeStats> activations;
  std::map<std::string, WeightStats> weights;
  std::int64_t samples = 0;
};

// Float forward passes over `data`, reducing min/max per activation site.
// Throws EmptyCalibration for an empty dataset.
CalibStats calibrate(const Graph& g, const Dataset& data, std::int64_t batch = 64);

enum class Granularity { kPerTensor, kPerChannel };

struct QuantConfig {
  int bits = 8;
  QuantMode mode = QuantMode::kSymmetric;
  Granularity conv = Granularity::kPerTensor;
  Granularity dws = Granularity::kPerChannel;
  Granularity fc = Granularity::kPerTensor;

  static QuantConfig scalar(QuantMode mode = QuantMode::kSymmetric, int bits = 8);
  static QuantConfig vector(QuantMode mode = QuantMode::kSymmetric, int bits = 8);
  Granularity granularity_for(LayerKind kind) const;
};

// Initial thresholds from calibration; all trainable scales at their
// identity values. Activations are always per tensor.
SiteParams make_site_params(const Graph& g, const QuantPlan& plan, const CalibStats& stats,
                            const QuantConfig& config);

nlohmann::json to_json(const CalibStats& stats);
CalibStats calib_stats_from_json(const nlohmann::json& j);
nlohmann::json to_json(const QuantConfig& config);
QuantConfig quant_config_from_json(const nlohmann::json& j);

}  // namespace fatq
