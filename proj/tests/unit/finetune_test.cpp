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

#include <gtest/gtest.h>

#include <cmath>

#include "fatq/finetune.hpp"
#include "support/test_graphs.hpp"

namespace fatq {
namespace {

using test::kernel;
using test::make_layer;

TEST(DistillationLoss, IdenticalOutputsGiveZero) {
  const Tensor z({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(distillation_loss(z, z), 0.0);
  EXPECT_EQ(distillation_loss_grad(z, z), Tensor({2, 3}, 0.0));
}

TEST(DistillationLoss, HandEvaluatedExample) {
  const Tensor zt({2, 1}, std::vector<double>{1, 2});
  const Tensor za({2, 1}, 0.0);
  EXPECT_NEAR(distillation_loss(zt, za), 1.58114, 1e-5);
  EXPECT_DOUBLE_EQ(distillation_loss(zt, za), std::sqrt(2.5));
}

TEST(DistillationLoss, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  const Tensor zt = test::normal_tensor({3, 4}, rng);
  Tensor za = test::normal_tensor({3, 4}, rng);
  const Tensor g = distillation_loss_grad(zt, za);
  for (std::size_t i = 0; i < za.size(); ++i) {
    const double v = za[i];
    za[i] = v + 1e-6;
    const double up = distillation_loss(zt, za);
    za[i] = v - 1e-6;
    const double down = distillation_loss(zt, za);
    za[i] = v;
    EXPECT_NEAR(g[i], (up - down) / 2e-6, 1e-8);
  }
}

TEST(CosineSchedule, RestartsEveryPeriod) {
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.lr_min = 1e-4;
  cfg.period = 10;
  EXPECT_DOUBLE_EQ(cosine_lr(0, cfg), cfg.lr);
  EXPECT_TRUE(is_restart(0, cfg));
  EXPECT_DOUBLE_EQ(cosine_lr(5, cfg), (cfg.lr + cfg.lr_min) / 2);
  EXPECT_FALSE(is_restart(5, cfg));
  EXPECT_DOUBLE_EQ(cosine_lr(10, cfg), cfg.lr);
  EXPECT_TRUE(is_restart(10, cfg));
  EXPECT_LT(cosine_lr(9, cfg), cosine_lr(8, cfg));
}

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  TrainConfig cfg;
  OptimizerState s;
  double a = 0.7, b = -1.2;
  std::vector<double*> p{&a, &b};
  const std::vector<double> zero{0.0, 0.0};
  adam_step(s, p, zero, 0.1, cfg);
  EXPECT_EQ(a, 0.7);
  EXPECT_EQ(b, -1.2);

  const std::vector<double> g{0.5, -2.0};
  adam_step(s, p, g, 0.1, cfg);
  const auto m = s.m, v = s.v;
  adam_step(s, p, zero, 0.0, cfg);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(s.m[i], cfg.beta1 * m[i]);
    EXPECT_DOUBLE_EQ(s.v[i], cfg.beta2 * v[i]);
  }
}

TEST(Adam, MatchesScalarReference) {
  TrainConfig cfg;
  OptimizerState s;
  double x = 1.0;
  std::vector<double*> p{&x};
  const double g = 0.3, lr = 0.01;
  double ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 25; ++t) {
    const std::vector<double> grad{g};
    adam_step(s, p, grad, lr, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    ref -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    ASSERT_NEAR(x, ref, 1e-14) << "step " << t;
  }
}

TEST(Adam, ResetClearsMomentsOnly) {
  TrainConfig cfg;
  OptimizerState s;
  double x = 1.0;
  std::vector<double*> p{&x};
  const std::vector<double> g{0.3};
  adam_step(s, p, g, 0.01, cfg);
  const double kept = x;
  s.reset();
  EXPECT_EQ(s.m[0], 0.0);
  EXPECT_EQ(s.v[0], 0.0);
  EXPECT_EQ(s.step, 0);
  EXPECT_EQ(s.restarts, 1);
  EXPECT_EQ(x, kept);
}

TEST(Adam, NonFiniteGradientAbortsBeforeUpdate) {
  TrainConfig cfg;
  OptimizerState s;
  double a = 1.0, b = 2.0;
  std::vector<double*> p{&a, &b};
  const std::vector<double> g{0.5, std::nan("")};
  try {
    adam_step(s, p, g, 0.1, cfg);
    FAIL() << "expected NonFiniteGradient";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteGradient);
  }
  EXPECT_EQ(a, 1.0);
  EXPECT_EQ(b, 2.0);
}

struct TinySetup {
  Graph g;
  SiteParams params;
  Dataset data;
};

// conv -> ReLU -> FC at 4 bits so quantization error is visible.
TinySetup tiny_setup(std::uint64_t seed, QuantMode mode = QuantMode::kSymmetric) {
  Rng rng(seed);
  TinySetup s;
  s.g.input_shape = {1, 4, 4};
  s.g.layers.push_back(make_layer("conv", kernel(LayerKind::kConv2D, 1, 1), {"input"},
                                  test::fan_in_weights({3, 1, 3, 3}, rng), test::normal_tensor({3}, rng, 0.1)));
  s.g.layers.push_back(make_layer("relu", kernel(LayerKind::kReLU), {"conv"}));
  s.g.layers.push_back(make_layer("fc", kernel(LayerKind::kFullyConnected), {"relu"},
                                  test::fan_in_weights({4, 48}, rng), test::normal_tensor({4}, rng, 0.1)));
  s.g.output_id = "fc";
  s.data = test::random_dataset(s.g, 16, rng, -1.0, 1.0);
  s.params = make_site_params(s.g, build_plan(s.g), calibrate(s.g, s.data), QuantConfig::scalar(mode, 4));
  return s;
}

TEST(Finetune, ZeroEpochsIsIdentity) {
  const TinySetup s = tiny_setup(2);
  TrainConfig cfg;
  cfg.epochs = 0;
  const FinetuneResult r = finetune(s.g, s.params, std::nullopt, s.data, cfg);
  EXPECT_EQ(r.params, s.params);
  EXPECT_TRUE(r.log.empty());
}

TEST(Finetune, ThresholdTrainingLowersLossOnFixedBatch) {
  for (QuantMode mode : {QuantMode::kSymmetric, QuantMode::kAsymmetric}) {
    const TinySetup s = tiny_setup(3, mode);
    TrainConfig cfg;
    cfg.batch = s.data.size();
    cfg.epochs = 50;
    cfg.lr = 1e-2;
    cfg.period = 50;
    const FinetuneResult r = finetune(s.g, s.params, std::nullopt, s.data, cfg);
    ASSERT_EQ(r.epoch_loss.size(), 50u);
    EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
    EXPECT_LT(distillation_rmse(s.g, r.params, nullptr, s.data), distillation_rmse(s.g, s.params, nullptr, s.data));
  }
}

TEST(Finetune, FrozenGroupsKeepLossConstant) {
  const TinySetup s = tiny_setup(4);
  TrainConfig cfg;
  cfg.groups = TrainGroups::kNone;
  cfg.epochs = 3;
  cfg.batch = s.data.size();
  const FinetuneResult r = finetune(s.g, s.params, std::nullopt, s.data, cfg);
  EXPECT_EQ(r.params, s.params);
  EXPECT_DOUBLE_EQ(r.epoch_loss[0], r.epoch_loss[2]);
}

TEST(Finetune, TrainedScalesStayInsideClipRanges) {
  const TinySetup s = tiny_setup(5);
  TrainConfig cfg;
  cfg.groups = TrainGroups::kBoth;
  cfg.lr = 0.2;
  cfg.epochs = 10;
  cfg.batch = 4;
  const FinetuneResult r = finetune(s.g, s.params, std::nullopt, s.data, cfg);
  ASSERT_TRUE(r.scales);
  for (const auto& [site, p] : r.params) {
    for (const auto& [lo, hi] : adjusted_thresholds(p)) {
      const auto& base = p.t_max;
      ASSERT_LE(hi, base[0] * kAlphaRange.hi + 1e-15) << site;
      ASSERT_GE(hi, base[0] * kAlphaRange.lo - 1e-15) << site;
      (void)lo;
    }
  }
  for (const auto& [id, sc] : clipped(*r.scales)) {
    for (double v : sc.weights.data()) {
      ASSERT_GE(v, kPointwiseRange.lo);
      ASSERT_LE(v, kPointwiseRange.hi);
    }
  }
  // Large steps push some raw scales outside the range; they are stored unclipped.
  bool any_outside = false;
  for (const auto& [id, sc] : *r.scales)
    for (double v : sc.weights.data()) any_outside |= !kPointwiseRange.contains(v);
  EXPECT_TRUE(any_outside);
}

TEST(Finetune, LogRestartsEachEpochAndIsDeterministic) {
  const TinySetup s = tiny_setup(6);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 5;  // 4 steps per epoch
  cfg.seed = 17;
  const FinetuneResult a = finetune(s.g, s.params, std::nullopt, s.data, cfg);
  const FinetuneResult b = finetune(s.g, s.params, std::nullopt, s.data, cfg);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.log.size(), 12u);
  for (const auto& e : a.log) EXPECT_EQ(e.restart, e.step % 4 == 0);
  EXPECT_EQ(to_json(a.log[4]).at("restart"), true);
  EXPECT_EQ(a.log[4].lr, cfg.lr);
}

TEST(Finetune, PointwiseOnlyKeepsThresholds) {
  const TinySetup s = tiny_setup(7);
  TrainConfig cfg;
  cfg.groups = TrainGroups::kPointwise;
  cfg.epochs = 5;
  cfg.batch = 8;
  cfg.lr = 1e-2;
  const FinetuneResult r = finetune(s.g, s.params, std::nullopt, s.data, cfg);
  EXPECT_EQ(r.params, s.params);
  ASSERT_TRUE(r.scales);
  EXPECT_NE(*r.scales, identity_pointwise_scales(s.g));
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig cfg;
  cfg.groups = TrainGroups::kBoth;
  cfg.period = 7;
  const TrainConfig back = train_config_from_json(to_json(cfg));
  EXPECT_EQ(back.groups, TrainGroups::kBoth);
  EXPECT_EQ(back.period, 7);
  EXPECT_EQ(parse_train_groups("pointwise"), TrainGroups::kPointwise);
  EXPECT_THROW(parse_train_groups("weights"), Error);
  cfg.batch = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

}  // namespace
}  // namespace fatq
