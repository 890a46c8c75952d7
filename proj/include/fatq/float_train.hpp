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
#include <vector>

#include "fatq/finetune.hpp"
#include "fatq/graph.hpp"
#include "fatq/model_io.hpp"

namespace fatq {

// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
double cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor cross_entropy_grad(const Tensor& logits, std::span<const int> labels);

// Sets every BatchNorm's mean/var rows to the population statistics of its
// input over `data`, layer by layer.
void set_batch_norm_statistics(Graph& g, const Dataset& data, std::int64_t batch = 256);

// Supervised training of all float weights with Adam under a single cosine
// decay over the whole run (no restarts). BatchNorm layers normalize with
// batch statistics and train gamma and beta; their mean/var rows are set
// from 2048 training images afterwards. Returns the mean loss per epoch.
std::vector<double> train_float(Graph& g, const Dataset& data, const TrainConfig& cfg);

double accuracy(const Tensor& logits, std::span<const int> labels);
// Top-1 accuracy of the float graph over a labeled dataset.
double float_accuracy(const Graph& g, const Dataset& data, std::int64_t batch = 256);

}  // namespace fatq
