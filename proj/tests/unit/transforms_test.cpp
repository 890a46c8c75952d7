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

#include "fatq/transforms.hpp"
#include "support/test_graphs.hpp"

namespace fatq {
namespace {

using test::kernel;
using test::make_layer;
using test::normal_tensor;

Tensor bn_params(std::vector<double> gamma, std::vector<double> beta, std::vector<double> mean,
                 std::vector<double> var) {
  const auto c = static_cast<std::int64_t>(gamma.size());
  std::vector<double> all;
  for (const auto* row : {&gamma, &beta, &mean, &var}) all.insert(all.end(), row->begin(), row->end());
  return Tensor({4, c}, all);
}

Graph fc_bn_graph(double w, std::optional<double> b, const Tensor& bn, double eps) {
  Graph g;
  g.input_shape = {1, 1, 1};
  g.layers.push_back(make_layer("fc", kernel(LayerKind::kFullyConnected), {"input"}, Tensor({1, 1}, w),
                                b ? std::optional<Tensor>(Tensor({1}, *b)) : std::nullopt));
  LayerKernel k = kernel(LayerKind::kBatchNorm);
  k.eps = eps;
  g.layers.push_back(make_layer("bn", k, {"fc"}, bn));
  g.output_id = "bn";
  return g;
}

TEST(FoldBatchNorm, IdentityBatchNormIsNoOp) {
  const double eps = 1e-5;
  const Graph g = fc_bn_graph(0.75, 0.25, bn_params({1}, {0}, {0}, {1 - eps}), eps);
  const Graph f = fold_batch_norm(g);
  ASSERT_EQ(f.layers.size(), 1u);
  EXPECT_EQ(f.output_id, "fc");
  EXPECT_NEAR((*f.layers[0].weights)[0], 0.75, 1e-15);
  EXPECT_NEAR((*f.layers[0].bias)[0], 0.25, 1e-15);
}

TEST(FoldBatchNorm, HandEvaluatedExample) {
  const Graph f = fold_batch_norm(fc_bn_graph(4.0, std::nullopt, bn_params({2}, {0.5}, {1}, {3}), 1.0));
  EXPECT_DOUBLE_EQ((*f.layers[0].weights)[0], 4.0);
  ASSERT_TRUE(f.layers[0].bias);
  EXPECT_DOUBLE_EQ((*f.layers[0].bias)[0], -0.5);
}

TEST(FoldBatchNorm, PreservesOutputsOfConvDwsAndFcBlocks) {
  Rng rng(21);
  for (LayerKind kind : {LayerKind::kConv2D, LayerKind::kDWSConv2D, LayerKind::kFullyConnected}) {
    Graph g;
    g.input_shape = {3, 5, 5};
    const Shape ws = kind == LayerKind::kConv2D      ? Shape{4, 3, 3, 3}
                     : kind == LayerKind::kDWSConv2D ? Shape{3, 1, 3, 3}
                                                     : Shape{4, 75};
    const std::int64_t c = ws[0];
    g.layers.push_back(make_layer("l", kernel(kind, 1, 1), {"input"}, normal_tensor(ws, rng), normal_tensor({c}, rng)));
    Tensor bn = normal_tensor({4, c}, rng);
    for (std::int64_t i = 3 * c; i < 4 * c; ++i) bn[static_cast<std::size_t>(i)] = rng.uniform(0.1, 3.0);
    g.layers.push_back(make_layer("bn", kernel(LayerKind::kBatchNorm), {"l"}, bn));
    g.layers.push_back(make_layer("relu", kernel(LayerKind::kReLU6), {"bn"}));
    g.output_id = "relu";
    const Tensor x = normal_tensor(test::batch_shape(g, 3), rng);
    const Graph f = fold_batch_norm(g);
    EXPECT_EQ(f.layers.size(), 2u);
    EXPECT_LT(max_relative_diff(run_float(f, x), run_float(g, x)), 1e-10);
  }
}

TEST(FoldBatchNorm, BatchNormAfterActivationIsOrphan) {
  Graph g = fc_bn_graph(1.0, 0.0, bn_params({1}, {0}, {0}, {1}), 1e-5);
  g.layers.insert(g.layers.begin() + 1, make_layer("relu", kernel(LayerKind::kReLU), {"fc"}));
  g.layers[2].inputs = {"relu"};
  try {
    fold_batch_norm(g);
    FAIL() << "expected OrphanBatchNorm";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOrphanBatchNorm);
  }
}

// input[3, 1, 1] -> DWS(1x1) -> ReLU6 -> conv(1x1): pre-activations equal w_k * x_k.
Graph hand_dws_graph(std::vector<double> filters) {
  Graph g;
  g.input_shape = {3, 1, 1};
  g.layers.push_back(make_layer("dws", kernel(LayerKind::kDWSConv2D), {"input"}, Tensor({3, 1, 1, 1}, filters)));
  g.layers.push_back(make_layer("act", kernel(LayerKind::kReLU6), {"dws"}));
  g.layers.push_back(make_layer("pw", kernel(LayerKind::kConv2D), {"act"}, Tensor({2, 3, 1, 1}, 1.0)));
  g.output_id = "pw";
  return g;
}

TEST(DwsRescale, HandEvaluatedScales) {
  const Graph g = hand_dws_graph({0.8, 1.2, 0.25});
  const Dataset calib{Tensor({1, 3, 1, 1}, std::vector<double>{8.0, 5.0, 8.0}), std::nullopt};
  const auto [out, report] = dws_rescale(g, calib);
  ASSERT_EQ(report.patterns.size(), 1u);
  const auto& p = report.patterns[0];
  EXPECT_EQ(p.locked, (std::vector<bool>{true, true, false}));
  EXPECT_DOUBLE_EQ(p.t0, 1.0);
  EXPECT_EQ(p.scales[0], 1.0);
  EXPECT_EQ(p.scales[1], 1.0);
  EXPECT_DOUBLE_EQ(p.scales[2], 3.0);
  EXPECT_DOUBLE_EQ((*out.layer("dws").weights)[2], 0.75);
  EXPECT_DOUBLE_EQ((*out.layer("pw").weights)[2], 1.0 / 3.0);
  EXPECT_LT(max_relative_diff(run_float(out, calib.images), run_float(g, calib.images)), 1e-12);
}

TEST(DwsRescale, AllLockedLeavesGraphUnchanged) {
  const Graph g = hand_dws_graph({0.8, 1.2, 0.25});
  const Dataset calib{Tensor({1, 3, 1, 1}, std::vector<double>{8.0, 5.0, 24.0}), std::nullopt};
  const auto [out, report] = dws_rescale(g, calib);
  EXPECT_EQ(report.patterns[0].scales, (std::vector<double>{1.0, 1.0, 1.0}));
  EXPECT_EQ(out, g);
}

TEST(DwsRescale, ReLUPatternEqualizesFiltersAndKeepsOutputs) {
  Rng rng(5);
  const Graph g = test::dws_block_net(rng, LayerKind::kReLU);
  const Dataset calib = test::random_dataset(g, 16, rng);
  const auto [out, report] = dws_rescale(g, calib);
  const auto& p = report.patterns[0];
  for (double t : per_channel_max_abs(*out.layer("dws").weights)) EXPECT_NEAR(t, p.t0, 1e-12 * p.t0);
  const Dataset held_out = test::random_dataset(g, 16, rng, -1.0, 2.0);
  EXPECT_LT(max_relative_diff(run_float(out, held_out.images), run_float(g, held_out.images)), 1e-12);
}

double spread(const std::vector<double>& t) {
  double lo = INFINITY, hi = 0.0;
  for (double v : t) {
    if (v == 0.0) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return hi / lo;
}

TEST(DwsRescale, FiltersMoveTowardsControlThresholdWithoutOvershoot) {
  Rng rng(8);
  for (int net = 0; net < 20; ++net) {
    const Graph g = test::dws_block_net(rng, LayerKind::kReLU6, 6);
    const auto [out, report] = dws_rescale(g, test::random_dataset(g, 32, rng, 0.0, 2.0));
    const auto& p = report.patterns[0];
    const auto before = per_channel_max_abs(*g.layer("dws").weights);
    const auto after = per_channel_max_abs(*out.layer("dws").weights);
    EXPECT_LE(spread(after), spread(before) * (1 + 1e-12));
    for (std::size_t k = 0; k < before.size(); ++k) {
      const double lo = std::min(before[k], p.t0), hi = std::max(before[k], p.t0);
      EXPECT_GE(after[k], lo * (1 - 1e-12));
      EXPECT_LE(after[k], hi * (1 + 1e-12));
    }
  }
}

TEST(DwsRescale, CappedFilterCanWidenSpreadAmongUnlockedFilters) {
  // Filter 0 locks (x_max 8), so T0 = 1. Filter 1 reaches T0 (x_max 0.5);
  // filter 2 is capped at 6 / 5 (x_max 5), ending at 0.24.
  const Graph g = hand_dws_graph({1.0, 0.1, 0.2});
  const Dataset calib{Tensor({1, 3, 1, 1}, std::vector<double>{8.0, 5.0, 25.0}), std::nullopt};
  const auto [out, report] = dws_rescale(g, calib);
  const auto after = per_channel_max_abs(*out.layer("dws").weights);
  EXPECT_EQ(report.patterns[0].locked, (std::vector<bool>{true, false, false}));
  EXPECT_DOUBLE_EQ(after[1], 1.0);
  EXPECT_DOUBLE_EQ(after[2], 0.24);
  EXPECT_GT(after[1] / after[2], 0.2 / 0.1);
  EXPECT_LE(spread(after), spread({1.0, 0.1, 0.2}));
}

TEST(DwsRescale, PatternFeedingAddIsSkipped) {
  Rng rng(9);
  Graph g;
  g.input_shape = {2, 3, 3};
  g.layers.push_back(make_layer("dws1", kernel(LayerKind::kDWSConv2D, 1, 1), {"input"},
                                test::normal_tensor({2, 1, 3, 3}, rng)));
  g.layers.push_back(make_layer("act1", kernel(LayerKind::kReLU), {"dws1"}));
  g.layers.push_back(make_layer("pw1", kernel(LayerKind::kConv2D), {"act1"}, test::normal_tensor({2, 2, 1, 1}, rng)));
  g.layers.push_back(make_layer("dws2", kernel(LayerKind::kDWSConv2D, 1, 1), {"input"},
                                test::normal_tensor({2, 1, 3, 3}, rng)));
  g.layers.push_back(make_layer("sum", kernel(LayerKind::kAdd), {"pw1", "dws2"}));
  g.output_id = "sum";
  const auto [out, report] = dws_rescale(g, test::random_dataset(g, 4, rng));
  ASSERT_EQ(report.patterns.size(), 1u);
  EXPECT_EQ(report.patterns[0].dws_id, "dws1");
  ASSERT_EQ(report.skipped.size(), 1u);
  EXPECT_EQ(report.skipped[0].dws_id, "dws2");
  EXPECT_NE(report.skipped[0].reason.find("Add"), std::string::npos) << report.skipped[0].reason;
}

TEST(DwsRescale, NoPatternIsAnError) {
  Rng rng(6);
  Graph g = test::dws_block_net(rng, LayerKind::kReLU);
  g.layers.erase(g.layers.begin() + 2);  // drop the pointwise conv
  g.layers.back().inputs = {"act"};
  g.layers.back().weights = test::fan_in_weights({4, 4 * 5 * 5}, rng);
  try {
    dws_rescale(g, test::random_dataset(g, 2, rng));
    FAIL() << "expected NoPatternFound";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoPatternFound);
  }
}

TEST(DwsRescale, ReportSerializes) {
  const Graph g = hand_dws_graph({0.8, 1.2, 0.25});
  const Dataset calib{Tensor({1, 3, 1, 1}, std::vector<double>{8.0, 5.0, 8.0}), std::nullopt};
  const auto j = to_json(dws_rescale(g, calib).second);
  EXPECT_EQ(j["patterns"][0]["activation"], "ReLU6");
  EXPECT_EQ(j["patterns"][0]["scales"][2], 3.0);
}

}  // namespace
}  // namespace fatq
