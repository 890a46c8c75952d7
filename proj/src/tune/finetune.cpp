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

#include "fatq/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

#include "fatq/rng.hpp"

namespace fatq {

double distillation_loss(const Tensor& z_t, const Tensor& z_a) {
  expect_same_shape(z_t.shape(), z_a.shape(), "distillation loss");
  if (z_t.rank() == 0 || z_t.dim(0) == 0) fail(ErrorCode::kEmptyTensor, "distillation loss of an empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    const double d = z_t[i] - z_a[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(z_t.dim(0)));
}

Tensor distillation_loss_grad(const Tensor& z_t, const Tensor& z_a) {
  const double h = distillation_loss(z_t, z_a);
  Tensor g(z_a.shape(), 0.0);
  if (h == 0.0) return g;
  const double k = 1.0 / (static_cast<double>(z_t.dim(0)) * h);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = -(z_t[i] - z_a[i]) * k;
  return g;
}

std::string_view train_groups_name(TrainGroups g) {
  switch (g) {
    case TrainGroups::kNone: return "none";
    case TrainGroups::kThresholds: return "thresholds";
    case TrainGroups::kPointwise: return "pointwise";
    case TrainGroups::kBoth: return "both";
  }
  return "?";
}

TrainGroups parse_train_groups(std::string_view name) {
  for (auto g : {TrainGroups::kNone, TrainGroups::kThresholds, TrainGroups::kPointwise, TrainGroups::kBoth}) {
    if (train_groups_name(g) == name) return g;
  }
  fail(ErrorCode::kInvalidArgument, "unknown training group '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) fail(ErrorCode::kInvalidArgument, "epochs must be non-negative");
  if (batch < 1) fail(ErrorCode::kInvalidArgument, "batch must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "Adam betas must lie in (0, 1)");
  }
  if (!(eps > 0.0) || !(lr >= 0.0) || !(lr_min >= 0.0)) fail(ErrorCode::kInvalidArgument, "bad learning-rate settings");
  if (period < 0) fail(ErrorCode::kInvalidArgument, "cosine period must be non-negative");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch", c.batch},   {"epochs", c.epochs}, {"lr", c.lr},         {"lr_min", c.lr_min},
          {"beta1", c.beta1},   {"beta2", c.beta2},   {"eps", c.eps},       {"period", c.period},
          {"seed", c.seed},     {"groups", std::string(train_groups_name(c.groups))}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    c.batch = j.at("batch").get<std::int64_t>();
    c.epochs = j.at("epochs").get<int>();
    c.lr = j.at("lr").get<double>();
    c.lr_min = j.at("lr_min").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.period = j.at("period").get<std::int64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.groups = parse_train_groups(j.at("groups").get<std::string>());
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, std::string("train config: ") + e.what());
  }
}

double cosine_lr(std::int64_t step, const TrainConfig& cfg) {
  if (cfg.period < 1) fail(ErrorCode::kInvalidArgument, "cosine period must be at least 1");
  const double phase = static_cast<double>(step % cfg.period) / static_cast<double>(cfg.period);
  return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

bool is_restart(std::int64_t step, const TrainConfig& cfg) {
  if (cfg.period < 1) fail(ErrorCode::kInvalidArgument, "cosine period must be at least 1");
  return step % cfg.period == 0;
}

void OptimizerState::reset() {
  std::fill(m.begin(), m.end(), 0.0);
  std::fill(v.begin(), v.end(), 0.0);
  step = 0;
  ++restarts;
}

void adam_step(OptimizerState& s, std::span<double* const> params, std::span<const double> grads, double lr,
               const TrainConfig& cfg) {
  if (params.size() != grads.size()) fail(ErrorCode::kShapeMismatch, "parameter and gradient counts differ");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      fail(ErrorCode::kNonFiniteGradient, "gradient " + std::to_string(i) + " is " + std::to_string(grads[i]));
    }
  }
  if (s.m.size() != params.size()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * grads[i];
    s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = s.m[i] / c1;
    const double v_hat = s.v[i] / c2;
    *params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

namespace {

template <typename Params, typename Fn>
void visit_site_trainables(Params& params, Fn&& fn) {
  for (auto& [site, p] : params) {
    if (p.mode == QuantMode::kSymmetric) {
      fn(site, 0, p.alpha);
    } else {
      fn(site, 1, p.alpha_t);
      fn(site, 2, p.alpha_r);
    }
  }
}

void append(std::vector<double>& out, const std::vector<double>* g, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out.push_back(g && i < g->size() ? (*g)[i] : 0.0);
}

}  // namespace

std::vector<double*> trainable_refs(SiteParams& params, PointwiseScales* scales, const TrainConfig& cfg) {
  std::vector<double*> out;
  if (cfg.trains_thresholds()) {
    visit_site_trainables(params, [&](const std::string&, int, std::vector<double>& v) {
      for (auto& x : v) out.push_back(&x);
    });
  }
  if (cfg.trains_pointwise() && scales) {
    for (auto& [id, s] : *scales) {
      for (auto& x : s.weights.storage()) out.push_back(&x);
      if (s.bias)
        for (auto& x : s.bias->storage()) out.push_back(&x);
    }
  }
  return out;
}

std::vector<double> gather_grads(const SimGrads& grads, const SiteParams& params, const PointwiseScales* scales,
                                 const TrainConfig& cfg) {
  std::vector<double> out;
  if (cfg.trains_thresholds()) {
    visit_site_trainables(params, [&](const std::string& site, int which, const std::vector<double>& v) {
      auto it = grads.sites.find(site);
      const std::vector<double>* g = nullptr;
      if (it != grads.sites.end()) g = which == 0 ? &it->second.alpha : which == 1 ? &it->second.alpha_t : &it->second.alpha_r;
      append(out, g, v.size());
    });
  }
  if (cfg.trains_pointwise() && scales) {
    for (const auto& [id, s] : *scales) {
      auto it = grads.scales.find(id);
      const PointwiseScale* g = it != grads.scales.end() ? &it->second : nullptr;
      append(out, g ? &g->weights.storage() : nullptr, s.weights.size());
      if (s.bias) append(out, g && g->bias ? &g->bias->storage() : nullptr, s.bias->size());
    }
  }
  return out;
}

nlohmann::json to_json(const LogEntry& e) {
  return {{"step", e.step}, {"lr", e.lr}, {"loss", e.loss}, {"restart", e.restart}};
}

FinetuneResult finetune(const Graph& g, SiteParams params, std::optional<PointwiseScales> scales, const Dataset& data,
                        TrainConfig cfg, RoundMode mode) {
  cfg.validate();
  if (data.size() == 0) fail(ErrorCode::kEmptyCalibration, "fine-tuning dataset is empty");
  if (cfg.trains_pointwise() && !scales) scales = identity_pointwise_scales(g);
  const std::int64_t n = data.size();
  const std::int64_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  if (cfg.period == 0) cfg.period = steps_per_epoch;

  FinetuneResult result;
  PointwiseScales* sp = scales ? &*scales : nullptr;
  QuantSimulator student(g, params, sp, mode);
  const std::vector<double*> refs = trainable_refs(params, sp, cfg);
  OptimizerState opt;
  Rng rng(cfg.seed);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_sum = 0.0;
    for (std::int64_t begin = 0; begin < n; begin += cfg.batch) {
      const std::int64_t end = std::min(n, begin + cfg.batch);
      const Dataset batch = take(data, {order.begin() + begin, order.begin() + end});
      const Tensor z_t = run_float(g, batch.images);
      const Tensor z_a = student.forward(batch.images);
      const double loss = distillation_loss(z_t, z_a);
      if (!std::isfinite(loss)) fail(ErrorCode::kNonFiniteGradient, "loss became non-finite at step " + std::to_string(step));

      LogEntry entry{step, cosine_lr(step, cfg), loss, is_restart(step, cfg)};
      if (entry.restart && step > 0) opt.reset();
      if (!refs.empty()) {
        const SimGrads grads = student.backward(distillation_loss_grad(z_t, z_a));
        adam_step(opt, refs, gather_grads(grads, params, sp, cfg), entry.lr, cfg);
      }
      result.log.push_back(entry);
      epoch_sum += loss;
      ++step;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(steps_per_epoch));
    spdlog::debug("epoch {}: mean distillation loss {:.6f}", epoch, result.epoch_loss.back());
  }
  result.params = std::move(params);
  result.scales = std::move(scales);
  return result;
}

double distillation_rmse(const Graph& g, const SiteParams& params, const PointwiseScales* scales, const Dataset& data,
                         std::int64_t batch) {
  if (data.size() == 0) fail(ErrorCode::kEmptyTensor, "distillation RMSE over an empty dataset");
  QuantSimulator student(g, params, scales);
  double sum = 0.0;
  for (std::int64_t begin = 0; begin < data.size(); begin += batch) {
    const std::int64_t end = std::min(data.size(), begin + batch);
    const Tensor x = batch_slice(data.images, begin, end);
    const Tensor z_t = run_float(g, x);
    const Tensor z_a = student.forward(x);
    for (std::size_t i = 0; i < z_t.size(); ++i) sum += (z_t[i] - z_a[i]) * (z_t[i] - z_a[i]);
  }
  return std::sqrt(sum / static_cast<double>(data.size()));
}

}  // namespace fatq
