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

#include "fatq/float_train.hpp"
#include "fatq/synthetic_digits.hpp"
#include "fatq/toy_models.hpp"
#include "fatq/transforms.hpp"
#include "support/test_graphs.hpp"

namespace fatq {
namespace {

TEST(CrossEntropy, UniformLogitsGiveLogClasses) {
  const Tensor z({2, 4}, 0.0);
  const std::vector<int> labels{1, 3};
  EXPECT_NEAR(cross_entropy(z, labels), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  Tensor z = test::normal_tensor({3, 5}, rng, 2.0);
  const std::vector<int> labels{0, 4, 2};
  const Tensor g = cross_entropy_grad(z, labels);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = z[i];
    z[i] = v + 1e-6;
    const double up = cross_entropy(z, labels);
    z[i] = v - 1e-6;
    const double down = cross_entropy(z, labels);
    z[i] = v;
    EXPECT_NEAR(g[i], (up - down) / 2e-6, 1e-8);
  }
}

TEST(Accuracy, CountsArgmaxHits) {
  const Tensor z({3, 2}, std::vector<double>{1, 0, 0, 1, 2, 1});
  const std::vector<int> labels{0, 0, 0};
  EXPECT_DOUBLE_EQ(accuracy(z, labels), 2.0 / 3.0);
}

TEST(BatchNormStatistics, MatchInputMoments) {
  Rng rng(2);
  Graph g = make_toy_cnn(2, 2);
  const Dataset data = make_synthetic_digits(40, 5);
  set_batch_norm_statistics(g, data, 16);
  const auto acts = run_float_all(g, data.images);
  const Tensor& x = acts.at("conv1");
  const Tensor& bn = *g.layer("bn1").weights;
  const std::int64_t c = x.dim(1), inner = x.dim(2) * x.dim(3);
  for (std::int64_t k = 0; k < c; ++k) {
    double sum = 0.0, sq = 0.0;
    for (std::int64_t n = 0; n < x.dim(0); ++n)
      for (std::int64_t i = 0; i < inner; ++i) {
        const double v = x[static_cast<std::size_t>((n * c + k) * inner + i)];
        sum += v;
        sq += v * v;
      }
    const double count = static_cast<double>(x.dim(0) * inner);
    const double mean = sum / count;
    EXPECT_NEAR(bn[static_cast<std::size_t>(2 * c + k)], mean, 1e-9);
    EXPECT_NEAR(bn[static_cast<std::size_t>(3 * c + k)], sq / count - mean * mean, 1e-9);
  }
}

TEST(TrainFloat, LossDecreasesAndModelLearns) {
  Graph g = make_toy_cnn(3, 4);
  const Dataset train = make_synthetic_digits(600, 7);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 32;
  cfg.lr = 3e-3;
  const auto losses = train_float(g, train, cfg);
  ASSERT_EQ(losses.size(), 3u);
  EXPECT_LT(losses.back(), losses.front());
  EXPECT_GT(float_accuracy(g, train), 0.3);
  // Folded inference graph stays equivalent after training.
  const Graph f = fold_batch_norm(g);
  const Tensor x = batch_slice(train.images, 0, 8);
  EXPECT_LT(max_relative_diff(run_float(f, x), run_float(g, x)), 1e-10);
}

}  // namespace
}  // namespace fatq
