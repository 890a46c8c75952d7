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

#include "fatq/kernels.hpp"
#include "fatq/tensor.hpp"

namespace fatq {

struct Layer {
  std::string id;
  LayerKernel kernel;
  std::optional<Tensor> weights;
  std::optional<Tensor> bias;
  std::vector<std::string> inputs;

  bool operator==(const Layer&) const = default;
};

// Float model. Layers are stored in topological order; `input_id` names the
// network input (not a layer) and `output_id` the layer producing logits
// (or a trailing Softmax over them).
struct Graph {
  std::vector<Layer> layers;
  std::string input_id = "input";
  std::string output_id;
  Shape input_shape;  // [C, H, W] of a single example

  const Layer& layer(const std::string& id) const;
  Layer& layer(const std::string& id);
  const Layer* find(const std::string& id) const;
  std::size_t index_of(const std::string& id) const;

  // Ids of the layers reading `id` (the network input included).
  std::vector<std::string> consumers(const std::string& id) const;

  // Pre-softmax output: output_id, or the input of a trailing Softmax.
  std::string logits_id() const;

  bool operator==(const Graph&) const = default;
};

// Checks ordering, references, arities and weight shapes against input_shape.
// Throws DanglingRef, CyclicGraph or ShapeMismatch.
void validate(const Graph& g);

// Forward pass; keeps every layer output (keyed by layer id, plus the input).
using Activations = std::map<std::string, Tensor>;
Activations run_float_all(const Graph& g, const Tensor& input);

// Forward pass returning the pre-softmax logits.
Tensor run_float(const Graph& g, const Tensor& input);

// Rows [begin, end) of an NCHW batch.
Tensor batch_slice(const Tensor& t, std::int64_t begin, std::int64_t end);

std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace fatq
