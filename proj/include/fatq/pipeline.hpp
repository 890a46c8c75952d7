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

#include <json.hpp>

#include "fatq/calibration.hpp"
#include "fatq/finetune.hpp"
#include "fatq/model_io.hpp"

namespace fatq {

// Fixed artifact names inside the working directory.
namespace artifacts {
inline constexpr const char* kDataDir = "data";
inline constexpr const char* kModelDir = "model";
inline constexpr const char* kFloatReport = "float_report.json";
inline constexpr const char* kTransformedDir = "transformed";
inline constexpr const char* kTransformReport = "transform_report.json";
inline constexpr const char* kCalib = "calib.json";
inline constexpr const char* kParams = "params.json";
inline constexpr const char* kFinetuneLog = "finetune_log.jsonl";
inline constexpr const char* kQuantized = "model.fatq";
inline constexpr const char* kEval = "eval.json";

inline constexpr const char* kTrainImages = "train-images-idx3-ubyte";
inline constexpr const char* kTrainLabels = "train-labels-idx1-ubyte";
inline constexpr const char* kTestImages = "t10k-images-idx3-ubyte";
inline constexpr const char* kTestLabels = "t10k-labels-idx1-ubyte";
}  // namespace artifacts

enum class GranularityPreset { kScalar, kVector, kMixed };

std::string_view granularity_preset_name(GranularityPreset g);
GranularityPreset parse_granularity_preset(std::string_view name);
QuantConfig make_quant_config(QuantMode mode, GranularityPreset granularity, int bits);

struct PipelineConfig {
  std::filesystem::path workdir = ".";
  std::optional<std::filesystem::path> model;     // manifest; default <workdir>/model/manifest.json
  std::optional<std::filesystem::path> data_dir;  // default <workdir>/data

  QuantMode mode = QuantMode::kSymmetric;
  GranularityPreset granularity = GranularityPreset::kMixed;
  int bits = 8;
  bool fold_bn = false;
  bool dws_rescale = false;

  TrainConfig train;        // threshold / pointwise fine-tuning
  TrainConfig float_train;  // supervised float training of the toy model
  std::int64_t calib_size = 100;
  double train_fraction = 0.1;
  std::uint64_t seed = 0;

  std::int64_t synth_train = 60000;
  std::int64_t synth_test = 10000;
  std::int64_t eval_limit = 0;  // 0: whole test set

  PipelineConfig();

  std::filesystem::path model_manifest() const;
  std::filesystem::path data_path() const;
  std::filesystem::path path(const char* artifact) const { return workdir / artifact; }
  QuantConfig quant() const { return make_quant_config(mode, granularity, bits); }
};

nlohmann::json to_json(const PipelineConfig& cfg);
// FNV-1a 64 of the serialized config (paths excluded), as 16 hex digits.
std::string config_hash(const PipelineConfig& cfg);

void cmd_synth_data(const PipelineConfig& cfg);
nlohmann::json cmd_train_float(const PipelineConfig& cfg);
nlohmann::json cmd_transform(const PipelineConfig& cfg);
nlohmann::json cmd_calibrate(const PipelineConfig& cfg);
nlohmann::json cmd_finetune(const PipelineConfig& cfg);
nlohmann::json cmd_compile(const PipelineConfig& cfg);
nlohmann::json cmd_eval(const PipelineConfig& cfg);

Dataset load_train_set(const PipelineConfig& cfg);
Dataset load_test_set(const PipelineConfig& cfg);

}  // namespace fatq
