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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fatq/graph.hpp"
#include "fatq/model_io.hpp"
#include "fatq/quant.hpp"
#include "fatq/simulator.hpp"

namespace fatq {

// H = sqrt(sum (z_t - z_a)^2 / N), N = batch size (rows).
double distillation_loss(const Tensor& z_t, const Tensor& z_a);
// d H / d z_a; zero when H is zero.
Tensor distillation_loss_grad(const Tensor& z_t, const Tensor& z_a);

enum class TrainGroups { kNone, kThresholds, kPointwise, kBoth };

std::string_view train_groups_name(TrainGroups g);
TrainGroups parse_train_groups(std::string_view name);

struct TrainConfig {
  std::int64_t batch = 32;
  int epochs = 8;
  double lr = 1e-3;
  double lr_min = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t period = 0;  // cosine period in steps; 0 means one epoch
  std::uint64_t seed = 0;
  TrainGroups groups = TrainGroups::kThresholds;

  bool trains_thresholds() const { return groups == TrainGroups::kThresholds || groups == TrainGroups::kBoth; }
  bool trains_pointwise() const { return groups == TrainGroups::kPointwise || groups == TrainGroups::kBoth; }
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// lr_min + (lr - lr_min) (1 + cos(pi (t mod P) / P)) / 2 with P = cfg.period.
double cosine_lr(std::int64_t step, const TrainConfig& cfg);
bool is_restart(std::int64_t step, const TrainConfig& cfg);

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;  // since the last restart
  std::int64_t restarts = 0;

  // Clears moments and the bias-correction step; parameters are untouched.
  void reset();
};

// Adam with bias correction. Throws NonFiniteGradient before touching any
// parameter.
void adam_step(OptimizerState& state, std::span<double* const> params, std::span<const double> grads, double lr,
               const TrainConfig& cfg);

// Raw (unclipped) trainables of the enabled groups, in a fixed order, and the
// matching gradient vector.
std::vector<double*> trainable_refs(SiteParams& params, PointwiseScales* scales, const TrainConfig& cfg);
std::vector<double> gather_grads(const SimGrads& grads, const SiteParams& params, const PointwiseScales* scales,
                                 const TrainConfig& cfg);

struct LogEntry {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  bool restart = false;
};

nlohmann::json to_json(const LogEntry& e);

struct FinetuneResult {
  SiteParams params;
  std::optional<PointwiseScales> scales;
  std::vector<LogEntry> log;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

// Distills the fake-quantized student into the frozen float teacher `g`
// on unlabeled data. Scales are created at identity when the pointwise
// group is enabled and none are given.
FinetuneResult finetune(const Graph& g, SiteParams params, std::optional<PointwiseScales> scales,
                        const Dataset& data, TrainConfig cfg, RoundMode mode = RoundMode::kNearest);

// Mean distillation loss of the student over `data`, in batches.
double distillation_rmse(const Graph& g, const SiteParams& params, const PointwiseScales* scales,
                         const Dataset& data, std::int64_t batch = 256);

}  // namespace fatq
