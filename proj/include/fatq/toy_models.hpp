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

#include "fatq/graph.hpp"

namespace fatq {

// 28x28 single-channel classifier:
// conv(3x3, s2) -> BN -> ReLU6 -> DWS(3x3) -> BN -> ReLU6 -> conv(1x1) -> BN
// -> ReLU6 -> AvgPool(2) -> FC(10) -> Softmax. He-normal weights, identity BN.
Graph make_toy_cnn(std::uint64_t seed, int width = 16);

}  // namespace fatq
