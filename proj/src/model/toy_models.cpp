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

#include "fatq/toy_models.hpp"

#include <cmath>

#include "fatq/rng.hpp"

namespace fatq {

namespace {

Tensor he_normal(Rng& rng, Shape shape, std::int64_t fan_in) {
  Tensor w(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w.storage()) v = std * rng.normal();
  return w;
}

Tensor identity_bn(std::int64_t channels) {
  Tensor p({4, channels}, 0.0);
  for (std::int64_t c = 0; c < channels; ++c) {
    p[static_cast<std::size_t>(c)] = 1.0;                     // gamma
    p[static_cast<std::size_t>(3 * channels + c)] = 1.0;      // var
  }
  return p;
}

Layer layer(std::string id, LayerKernel k, std::string input) {
  return Layer{std::move(id), k, std::nullopt, std::nullopt, {std::move(input)}};
}

}  // namespace

Graph make_toy_cnn(std::uint64_t seed, int width) {
  Rng rng(seed);
  const std::int64_t c1 = width, c2 = 2 * width;
  Graph g;
  g.input_shape = {1, 28, 28};

  Layer conv1 = layer("conv1", {.kind = LayerKind::kConv2D, .stride = 2, .padding = 1}, "input");
  conv1.weights = he_normal(rng, {c1, 1, 3, 3}, 9);
  conv1.bias = Tensor({c1}, 0.0);
  g.layers.push_back(conv1);
  Layer bn1 = layer("bn1", {.kind = LayerKind::kBatchNorm}, "conv1");
  bn1.weights = identity_bn(c1);
  g.layers.push_back(bn1);
  g.layers.push_back(layer("relu1", {.kind = LayerKind::kReLU6}, "bn1"));

  Layer dws = layer("dws", {.kind = LayerKind::kDWSConv2D, .stride = 1, .padding = 1}, "relu1");
  dws.weights = he_normal(rng, {c1, 1, 3, 3}, 9);
  dws.bias = Tensor({c1}, 0.0);
  g.layers.push_back(dws);
  Layer bn2 = layer("bn2", {.kind = LayerKind::kBatchNorm}, "dws");
  bn2.weights = identity_bn(c1);
  g.layers.push_back(bn2);
  g.layers.push_back(layer("relu2", {.kind = LayerKind::kReLU6}, "bn2"));

  Layer conv2 = layer("conv2", {.kind = LayerKind::kConv2D}, "relu2");
  conv2.weights = he_normal(rng, {c2, c1, 1, 1}, c1);
  conv2.bias = Tensor({c2}, 0.0);
  g.layers.push_back(conv2);
  Layer bn3 = layer("bn3", {.kind = LayerKind::kBatchNorm}, "conv2");
  bn3.weights = identity_bn(c2);
  g.layers.push_back(bn3);
  g.layers.push_back(layer("relu3", {.kind = LayerKind::kReLU6}, "bn3"));

  g.layers.push_back(layer("pool", {.kind = LayerKind::kAvgPool, .stride = 2, .pool = 2}, "relu3"));
  Layer fc = layer("fc", {.kind = LayerKind::kFullyConnected}, "pool");
  fc.weights = he_normal(rng, {10, c2 * 49}, c2 * 49);
  fc.bias = Tensor({10}, 0.0);
  g.layers.push_back(fc);
  g.layers.push_back(layer("prob", {.kind = LayerKind::kSoftmax}, "fc"));
  g.output_id = "prob";
  validate(g);
  return g;
}

}  // namespace fatq
