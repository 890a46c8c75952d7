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
#include <optional>
#include <string>
#include <vector>

#include "fatq/graph.hpp"

namespace fatq {

inline constexpr int kManifestVersion = 1;

// Model on disk: `<dir>/manifest.json` plus one raw little-endian float64
// blob per weight/bias tensor. `save_model` creates the directory and
// records `config_hash` in the manifest when given.
Graph load_model(const std::filesystem::path& manifest_path);
void save_model(const Graph& g, const std::filesystem::path& dir, const std::string& config_hash = "");

struct Dataset {
  Tensor images;                    // [N, C, H, W]
  std::optional<std::vector<int>> labels;

  std::int64_t size() const { return images.rank() ? images.dim(0) : 0; }
};

// IDX reader. Unsigned-byte payloads are scaled to [0, 1]; a 3-d payload is
// read as [N, 1, H, W] images.
Tensor read_idx(const std::filesystem::path& path);
std::vector<int> read_idx_labels(const std::filesystem::path& path);

// Unsigned-byte IDX writers (images expected in [0, 1]).
void write_idx_images(const std::filesystem::path& path, const Tensor& images);
void write_idx_labels(const std::filesystem::path& path, const std::vector<int>& labels);

// Images plus optional labels (labels must match N and be non-negative).
Dataset load_dataset(const std::filesystem::path& images,
                     const std::optional<std::filesystem::path>& labels = std::nullopt);

// Seeded uniform sample of k examples without replacement, labels dropped.
Dataset select_calibration(const Dataset& ds, std::int64_t k, std::uint64_t seed);

// Seeded subset of round(fraction * N) examples (at least one), labels kept.
Dataset select_fraction(const Dataset& ds, double fraction, std::uint64_t seed);

Dataset take(const Dataset& ds, const std::vector<std::int64_t>& indices);

}  // namespace fatq
