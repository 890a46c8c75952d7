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

#include "fatq/float_train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "fatq/rng.hpp"

namespace fatq {

namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size()) {
    fail(ErrorCode::kShapeMismatch, "logits " + shape_to_string(logits.shape()) + " do not match " +
                                        std::to_string(labels.size()) + " labels");
  }
  for (int y : labels)
    if (y < 0 || y >= logits.dim(1)) fail(ErrorCode::kInvalidArgument, "label " + std::to_string(y) + " out of range");
}

// Row-wise softmax probabilities.
Tensor softmax_rows(const Tensor& z) {
  Tensor p(z.shape());
  const std::int64_t n = z.dim(0), k = z.dim(1);
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = z.data().data() + i * k;
    const double m = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::int64_t j = 0; j < k; ++j) sum += (p[i * k + j] = std::exp(row[j] - m));
    for (std::int64_t j = 0; j < k; ++j) p[i * k + j] /= sum;
  }
  return p;
}

}  // namespace

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const Tensor p = softmax_rows(logits);
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    loss -= std::log(std::max(p[i * logits.dim(1) + labels[i]], 1e-300));
  }
  return loss / static_cast<double>(labels.size());
}

Tensor cross_entropy_grad(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  Tensor g = softmax_rows(logits);
  const double inv = 1.0 / static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) g[i * logits.dim(1) + labels[i]] -= 1.0;
  for (auto& v : g.storage()) v *= inv;
  return g;
}

namespace {

// Training-mode BatchNorm: normalizes with the batch's own per-channel
// statistics; mean/var rows of the parameter blob are ignored.
struct BnCache {
  Tensor xhat;
  std::vector<double> inv_std;
};

Tensor bn_train_forward(const Tensor& x, const Tensor& p, double eps, BnCache& cache) {
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const std::int64_t inner = static_cast<std::int64_t>(x.size()) / (n * c);
  const double count = static_cast<double>(n * inner);
  Tensor y(x.shape());
  cache.xhat = Tensor(x.shape());
  cache.inv_std.assign(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < inner; ++i) mean += x[(b * c + ch) * inner + i];
    mean /= count;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < inner; ++i) {
        const double d = x[(b * c + ch) * inner + i] - mean;
        var += d * d;
      }
    var /= count;
    const double inv = 1.0 / std::sqrt(var + eps);
    cache.inv_std[static_cast<std::size_t>(ch)] = inv;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t k = (b * c + ch) * inner + i;
        cache.xhat[k] = (x[k] - mean) * inv;
        y[k] = p[ch] * cache.xhat[k] + p[c + ch];
      }
  }
  return y;
}

LayerGrads bn_train_backward(const Tensor& p, const BnCache& cache, const Tensor& gy) {
  const std::int64_t n = gy.dim(0), c = gy.dim(1);
  const std::int64_t inner = static_cast<std::int64_t>(gy.size()) / (n * c);
  const double count = static_cast<double>(n * inner);
  Tensor gx(gy.shape());
  Tensor gw(p.shape(), 0.0);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double dgamma = 0.0, dbeta = 0.0;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t k = (b * c + ch) * inner + i;
        dgamma += gy[k] * cache.xhat[k];
        dbeta += gy[k];
      }
    const double scale = p[ch] * cache.inv_std[static_cast<std::size_t>(ch)] / count;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t k = (b * c + ch) * inner + i;
        gx[k] = scale * (count * gy[k] - dbeta - cache.xhat[k] * dgamma);
      }
    gw[ch] = dgamma;
    gw[c + ch] = dbeta;
  }
  LayerGrads out;
  out.inputs.push_back(std::move(gx));
  out.weights = std::move(gw);
  return out;
}

// Forward and backward up to the logits with batch-statistics BatchNorm.
class TrainTape {
 public:
  explicit TrainTape(const Graph& g) : g_(g), last_(g.index_of(g.logits_id())) {}

  const Tensor& forward(const Tensor& input) {
    acts_.clear();
    bn_.clear();
    acts_.emplace(g_.input_id, input);
    for (std::size_t i = 0; i <= last_; ++i) {
      const Layer& l = g_.layers[i];
      std::vector<const Tensor*> ins;
      for (const auto& in : l.inputs) ins.push_back(&acts_.at(in));
      Tensor y = l.kernel.kind == LayerKind::kBatchNorm
                     ? bn_train_forward(*ins[0], *l.weights, l.kernel.eps, bn_[l.id])
                     : fatq::forward(l.kernel, ins, l.weights ? &*l.weights : nullptr, l.bias ? &*l.bias : nullptr);
      acts_.insert_or_assign(l.id, std::move(y));
    }
    return acts_.at(g_.layers[last_].id);
  }

  std::map<std::string, LayerGrads> backward(const Tensor& grad_logits) const {
    std::map<std::string, LayerGrads> out;
    std::map<std::string, Tensor> grads;
    grads.emplace(g_.layers[last_].id, grad_logits);
    for (std::size_t i = last_ + 1; i-- > 0;) {
      const Layer& l = g_.layers[i];
      auto it = grads.find(l.id);
      if (it == grads.end()) continue;
      LayerGrads lg;
      if (l.kernel.kind == LayerKind::kBatchNorm) {
        lg = bn_train_backward(*l.weights, bn_.at(l.id), it->second);
      } else {
        std::vector<const Tensor*> ins;
        for (const auto& in : l.inputs) ins.push_back(&acts_.at(in));
        lg = fatq::backward(l.kernel, ins, l.weights ? &*l.weights : nullptr, l.bias ? &*l.bias : nullptr, it->second);
      }
      grads.erase(it);
      for (std::size_t k = 0; k < l.inputs.size(); ++k) {
        if (l.inputs[k] == g_.input_id) continue;
        auto [jt, inserted] = grads.try_emplace(l.inputs[k], lg.inputs[k]);
        if (!inserted)
          for (std::size_t e = 0; e < jt->second.size(); ++e) jt->second[e] += lg.inputs[k][e];
      }
      lg.inputs.clear();
      out.emplace(l.id, std::move(lg));
    }
    return out;
  }

 private:
  const Graph& g_;
  std::size_t last_;
  Activations acts_;
  std::map<std::string, BnCache> bn_;
};

// Number of trainable entries of a layer's weight blob (gamma and beta rows
// for BatchNorm).
std::size_t trainable_weights(const Layer& l) {
  return l.kernel.kind == LayerKind::kBatchNorm ? l.weights->size() / 2 : l.weights->size();
}

}  // namespace

void set_batch_norm_statistics(Graph& g, const Dataset& data, std::int64_t batch) {
  for (auto& l : g.layers) {
    if (l.kernel.kind != LayerKind::kBatchNorm) continue;
    const std::string& src = l.inputs.at(0);
    const std::int64_t c = l.weights->dim(1);
    std::vector<double> sum(static_cast<std::size_t>(c), 0.0), sq(static_cast<std::size_t>(c), 0.0);
    double count = 0.0;
    for (std::int64_t b = 0; b < data.size(); b += batch) {
      const auto acts = run_float_all(g, batch_slice(data.images, b, std::min(data.size(), b + batch)));
      const Tensor& x = acts.at(src);
      const std::int64_t n = x.dim(0), inner = static_cast<std::int64_t>(x.size()) / (n * c);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch)
          for (std::int64_t k = 0; k < inner; ++k) {
            const double v = x[(i * c + ch) * inner + k];
            sum[static_cast<std::size_t>(ch)] += v;
            sq[static_cast<std::size_t>(ch)] += v * v;
          }
      count += static_cast<double>(n * inner);
    }
    Tensor& p = *l.weights;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double mean = sum[static_cast<std::size_t>(ch)] / count;
      p[2 * c + ch] = mean;
      p[3 * c + ch] = std::max(0.0, sq[static_cast<std::size_t>(ch)] / count - mean * mean);
    }
  }
}

std::vector<double> train_float(Graph& g, const Dataset& data, const TrainConfig& cfg_in) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  if (!data.labels) fail(ErrorCode::kInvalidArgument, "float training needs labels");
  const std::int64_t n = data.size();
  if (n == 0) fail(ErrorCode::kEmptyTensor, "float training dataset is empty");
  const std::int64_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  cfg.period = std::max<std::int64_t>(1, steps_per_epoch * cfg.epochs);

  std::vector<double*> refs;
  for (auto& l : g.layers) {
    if (l.weights)
      for (std::size_t i = 0; i < trainable_weights(l); ++i) refs.push_back(&(*l.weights)[i]);
    if (l.bias)
      for (auto& v : l.bias->storage()) refs.push_back(&v);
  }

  TrainTape tape(g);
  OptimizerState opt;
  Rng rng(cfg.seed);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> epoch_loss;
  std::vector<double> grads;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    for (std::int64_t begin = 0; begin < n; begin += cfg.batch) {
      const std::int64_t end = std::min(n, begin + cfg.batch);
      const Dataset batch = take(data, {order.begin() + begin, order.begin() + end});
      const Tensor& z = tape.forward(batch.images);
      sum += cross_entropy(z, *batch.labels);
      const auto lg = tape.backward(cross_entropy_grad(z, *batch.labels));
      grads.clear();
      for (const auto& l : g.layers) {
        auto it = lg.find(l.id);
        if (l.weights)
          for (std::size_t i = 0; i < trainable_weights(l); ++i) grads.push_back(it != lg.end() ? (*it->second.weights)[i] : 0.0);
        if (l.bias)
          for (std::size_t i = 0; i < l.bias->size(); ++i) grads.push_back(it != lg.end() ? (*it->second.bias)[i] : 0.0);
      }
      adam_step(opt, refs, grads, cosine_lr(step, cfg), cfg);
      ++step;
    }
    epoch_loss.push_back(sum / static_cast<double>(steps_per_epoch));
    spdlog::info("float epoch {}: loss {:.4f}", epoch, epoch_loss.back());
  }
  std::vector<std::int64_t> subset(order.begin(), order.begin() + std::min<std::int64_t>(n, 2048));
  set_batch_norm_statistics(g, take(data, subset), 256);
  return epoch_loss;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const auto pred = argmax_rows(logits);
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
  return labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
}

double float_accuracy(const Graph& g, const Dataset& data, std::int64_t batch) {
  if (!data.labels) fail(ErrorCode::kInvalidArgument, "accuracy needs labels");
  std::int64_t hits = 0;
  for (std::int64_t begin = 0; begin < data.size(); begin += batch) {
    const std::int64_t end = std::min(data.size(), begin + batch);
    const auto pred = argmax_rows(run_float(g, batch_slice(data.images, begin, end)));
    for (std::int64_t i = begin; i < end; ++i) hits += pred[static_cast<std::size_t>(i - begin)] == (*data.labels)[static_cast<std::size_t>(i)];
  }
  return data.size() ? static_cast<double>(hits) / static_cast<double>(data.size()) : 0.0;
}

}  // namespace fatq
