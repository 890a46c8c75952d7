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
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fatq/graph.hpp"
#include "fatq/quant.hpp"
#include "fatq/simulator.hpp"

namespace fatq {

inline constexpr std::uint32_t kEngineFormatVersion = 1;

// Per-tensor grid of an activation site.
struct SiteQuant {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  std::int32_t qmin = 0;
  std::int32_t qmax = 0;

  bool operator==(const SiteQuant&) const = default;
};

struct QuantizedLayer {
  std::string id;
  LayerKernel kernel;
  std::optional<LayerKind> activation;  // fused ReLU/ReLU6
  std::vector<std::string> inputs;      // activation site ids
  std::string output;                   // activation site id

  // Compute layers. Codes are stored as int8; asymmetric codes in [0, 255]
  // are shifted by -128 together with their zero points.
  Shape weight_shape;
  std::vector<std::int8_t> weights;
  std::vector<std::int32_t> weight_zero_points;  // one per output channel
  std::vector<std::int32_t> bias;                // int32, empty if none
  // Requantization: per output channel for compute layers, one per input
  // for Add, a single entry otherwise.
  std::vector<double> multipliers;

  bool operator==(const QuantizedLayer&) const = default;
};

struct QuantizedModel {
  Shape input_shape;
  std::string input_site;
  std::string output_site;
  std::map<std::string, SiteQuant> sites;
  std::vector<QuantizedLayer> layers;
  std::string metadata;  // free-form, carried through export

  bool operator==(const QuantizedModel&) const = default;
};

// Bakes clipped pointwise scales into the weights, quantizes weights and
// biases, and derives requantization multipliers S_out / (S_in * S_w[c]).
// Throws MissingSiteParams when a site is not covered by `params`.
QuantizedModel compile(const Graph& g, const SiteParams& params, const PointwiseScales* scales = nullptr);

struct Int8Trace {
  Tensor logits;
  std::map<std::string, IntTensor> codes;  // every activation site
};

// Integer inference: int8 operands, int64 sums checked against the int32
// range (AccumulatorOverflow), real-valued requantization with
// round-half-away-from-zero. Returns dequantized logits.
Tensor run_int8(const QuantizedModel& m, const Tensor& input);
Int8Trace run_int8_traced(const QuantizedModel& m, const Tensor& input);

// "FATQ", u32 version, u32 manifest length, JSON manifest, then 8-byte
// aligned little-endian blobs. Import throws BadVersion or Corrupt.
std::vector<std::uint8_t> export_model(const QuantizedModel& m);
QuantizedModel import_model(std::span<const std::uint8_t> bytes);
void save_quantized(const QuantizedModel& m, const std::filesystem::path& path);
QuantizedModel load_quantized(const std::filesystem::path& path);

}  // namespace fatq
