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
#include <string>
#include <vector>

#include <json.hpp>

#include "fatq/calibration.hpp"
#include "fatq/graph.hpp"
#include "fatq/quant.hpp"

namespace fatq {

inline constexpr ClipRange kPointwiseRange{0.75, 1.25};

// Trainable per-element multipliers of one layer's weights and bias.
struct PointwiseScale {
  Tensor weights;
  std::optional<Tensor> bias;

  bool operator==(const PointwiseScale&) const = default;
};

// Keyed by compute-layer id. Stored unclipped, evaluated clipped.
using PointwiseScales = std::map<std::string, PointwiseScale>;

PointwiseScales identity_pointwise_scales(const Graph& g);
PointwiseScales clipped(const PointwiseScales& scales);

// Copy of `g` whose weights and biases are multiplied by the clipped scales.
Graph apply_pointwise_scales(const Graph& g, const PointwiseScales& scales);

nlohmann::json to_json(const PointwiseScales& scales);
PointwiseScales pointwise_scales_from_json(const nlohmann::json& j);

struct SiteGrad {
  std::vector<double> alpha;
  std::vector<double> alpha_t;
  std::vector<double> alpha_r;
};

struct SimGrads {
  std::map<std::string, SiteGrad> sites;
  PointwiseScales scales;  // gradients, same layout as the scales
};

// Float network with fake quantization at every activation and weight site
// of the plan, biases snapped to their int32 grid, and optional pointwise
// scales on weights and biases. The graph, params and scales are read on
// every forward, so optimizer updates are picked up in place.
class QuantSimulator {
 public:
  QuantSimulator(const Graph& g, const SiteParams& params, const PointwiseScales* scales = nullptr,
                 RoundMode mode = RoundMode::kNearest);

  // Dequantized logits.
  Tensor forward(const Tensor& input);
  // Gradients of a loss with d loss / d logits = grad_logits, for the last
  // forward.
  SimGrads backward(const Tensor& grad_logits) const;

  // Integer codes at every activation site for the last forward.
  std::map<std::string, IntTensor> site_codes() const;

  const QuantPlan& plan() const noexcept { return plan_; }

 private:
  struct OpTape {
    std::optional<Tensor> w_eff;
    std::optional<Tensor> w_hat;
    std::optional<Tensor> b_eff;
    std::optional<Tensor> b_hat;
    Tensor pre_activation;  // layer output before a fused activation
    Tensor site_input;      // value entering the site's fake quantizer
  };

  const QuantParams& site(const std::string& id) const;

  const Graph* g_;
  const SiteParams* params_;
  const PointwiseScales* scales_;
  RoundMode mode_;
  QuantPlan plan_;
  Tensor input_;
  std::map<std::string, Tensor> values_;  // fake-quantized site outputs
  std::vector<OpTape> tape_;
};

}  // namespace fatq
