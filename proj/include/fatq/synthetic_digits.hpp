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

#include "fatq/model_io.hpp"

namespace fatq {

// Procedurally rendered 28x28 handwritten-style digits in MNIST layout
// ([N, 1, 28, 28], values in [0, 1], labels 0-9). Each sample gets a random
// affine pose, stroke width, vertex jitter, contrast, background noise, and
// possibly a stray stroke or an erased patch. Deterministic for a given
// (count, seed).
struct SyntheticDigitsOptions {
  int side = 28;
  double max_rotation_deg = 18.0;
  double vertex_jitter = 0.055;
  double noise_stddev = 0.1;
  double stray_stroke_prob = 0.25;
  double erase_prob = 0.2;
};

Dataset make_synthetic_digits(std::int64_t count, std::uint64_t seed,
                              const SyntheticDigitsOptions& options = {});

}  // namespace fatq
