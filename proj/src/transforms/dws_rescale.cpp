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

#include <algorithm>
#include <cmath>
#include <limits>

#include "fatq/transforms.hpp"

namespace fatq {

std::vector<double> per_channel_max_abs(const Tensor& w) {
  if (w.rank() == 0 || w.dim(0) == 0) return {};
  const std::int64_t channels = w.dim(0);
  const std::int64_t per = static_cast<std::int64_t>(w.size()) / channels;
  std::vector<double> out(static_cast<std::size_t>(channels));
  for (std::int64_t c = 0; c < channels; ++c) {
    out[static_cast<std::size_t>(c)] = max_abs(w.data().subspan(static_cast<std::size_t>(c * per),
                                                                static_cast<std::size_t>(per)));
  }
  return out;
}

nlohmann::json to_json(const DwsRescaleReport& report) {
  nlohmann::json j;
  j["patterns"] = nlohmann::json::array();
  for (const auto& p : report.patterns) {
    nlohmann::json jp;
    jp["dws_id"] = p.dws_id;
    jp["activation"] = p.has_activation ? std::string(layer_kind_name(p.activation)) : "none";
    jp["activation_id"] = p.activation_id;
    jp["conv_id"] = p.conv_id;
    jp["t0"] = p.t0;
    jp["scales"] = p.scales;
    jp["locked"] = p.locked;
    jp["x_max"] = p.x_max;
    jp["filter_max_abs"] = p.filter_max_abs;
    j["patterns"].push_back(std::move(jp));
  }
  j["skipped"] = nlohmann::json::array();
  for (const auto& s : report.skipped) j["skipped"].push_back({{"dws_id", s.dws_id}, {"reason", s.reason}});
  return j;
}

namespace {

std::optional<std::string> only_consumer(const Graph& g, const std::string& id, std::string& why) {
  const auto cons = g.consumers(id);
  for (const auto& c : cons) {
    if (g.layer(c).kernel.kind == LayerKind::kAdd) {
      why = "'" + id + "' feeds Add junction '" + c + "'";
      return std::nullopt;
    }
  }
  if (cons.size() != 1) {
    why = "'" + id + "' has " + std::to_string(cons.size()) + " consumers";
    return std::nullopt;
  }
  return cons.front();
}

std::optional<DwsPatternReport> match_pattern(const Graph& g, const Layer& dws, std::string& why) {
  DwsPatternReport p;
  p.dws_id = dws.id;
  if (g.output_id == dws.id) {
    why = "DWS layer is the graph output";
    return std::nullopt;
  }
  auto next = only_consumer(g, dws.id, why);
  if (!next) return std::nullopt;
  const Layer* l = &g.layer(*next);
  if (is_activation(l->kernel.kind)) {
    p.has_activation = true;
    p.activation = l->kernel.kind;
    p.activation_id = l->id;
    if (g.output_id == l->id) {
      why = "activation is the graph output";
      return std::nullopt;
    }
    next = only_consumer(g, l->id, why);
    if (!next) return std::nullopt;
    l = &g.layer(*next);
  }
  if (l->kernel.kind != LayerKind::kConv2D || l->kernel.groups != 1) {
    why = "followed by " + std::string(layer_kind_name(l->kernel.kind)) + " '" + l->id + "', not a dense Conv2D";
    return std::nullopt;
  }
  p.conv_id = l->id;
  return p;
}

}  // namespace

std::pair<Graph, DwsRescaleReport> dws_rescale(const Graph& g, const Dataset& calib,
                                               const DwsRescaleOptions& options) {
  DwsRescaleReport report;
  for (const auto& l : g.layers) {
    if (l.kernel.kind == LayerKind::kBatchNorm) {
      fail(ErrorCode::kInvalidArgument, "dws_rescale needs a BN-folded graph ('" + l.id + "' is BatchNorm)");
    }
    if (l.kernel.kind != LayerKind::kDWSConv2D) continue;
    std::string why;
    if (auto p = match_pattern(g, l, why)) {
      report.patterns.push_back(std::move(*p));
    } else {
      report.skipped.push_back({l.id, why});
    }
  }
  if (report.patterns.empty()) fail(ErrorCode::kNoPatternFound, "no DWS -> [ReLU|ReLU6] -> Conv2D pattern in graph");
  if (calib.size() == 0) fail(ErrorCode::kEmptyCalibration, "dws_rescale needs calibration data");

  // Pre-activation maxima per DWS channel, over all calibration examples.
  for (auto& p : report.patterns) {
    p.x_max.assign(static_cast<std::size_t>(g.layer(p.dws_id).weights->dim(0)),
                   -std::numeric_limits<double>::infinity());
  }
  for (std::int64_t begin = 0; begin < calib.size(); begin += options.batch) {
    const std::int64_t end = std::min(calib.size(), begin + options.batch);
    const auto acts = run_float_all(g, batch_slice(calib.images, begin, end));
    for (auto& p : report.patterns) {
      const Tensor& y = acts.at(p.dws_id);
      const std::int64_t n = y.dim(0), c = y.dim(1), inner = y.dim(2) * y.dim(3);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t k = 0; k < c; ++k) {
          double& m = p.x_max[static_cast<std::size_t>(k)];
          for (std::int64_t j = 0; j < inner; ++j) m = std::max(m, y[(i * c + k) * inner + j]);
        }
    }
  }

  Graph out = g;
  for (auto& p : report.patterns) {
    Layer& dws = out.layer(p.dws_id);
    Layer& conv = out.layer(p.conv_id);
    const std::size_t channels = p.x_max.size();
    const bool relu6 = p.has_activation && p.activation == LayerKind::kReLU6;
    p.filter_max_abs = per_channel_max_abs(*dws.weights);
    p.locked.assign(channels, false);
    for (std::size_t k = 0; k < channels; ++k) {
      if (p.filter_max_abs[k] == 0.0) p.locked[k] = true;
      if (relu6 && p.x_max[k] >= options.lock_limit) p.locked[k] = true;
    }
    // Control threshold: mean over live locked filters, else over all live filters.
    double sum = 0.0;
    int count = 0;
    for (std::size_t k = 0; k < channels; ++k) {
      if (p.locked[k] && p.filter_max_abs[k] > 0.0) {
        sum += p.filter_max_abs[k];
        ++count;
      }
    }
    if (count == 0) {
      for (double t : p.filter_max_abs) {
        if (t > 0.0) {
          sum += t;
          ++count;
        }
      }
    }
    p.t0 = count ? sum / count : 0.0;

    p.scales.assign(channels, 1.0);
    for (std::size_t k = 0; k < channels; ++k) {
      if (p.locked[k]) continue;
      double s = p.t0 / p.filter_max_abs[k];
      if (relu6 && p.x_max[k] > 0.0) s = std::min(s, options.saturation / p.x_max[k]);
      if (!(s > 0.0) || !std::isfinite(s)) {
        fail(ErrorCode::kNonPositiveScale, "channel " + std::to_string(k) + " of '" + p.dws_id + "' got scale " +
                                               std::to_string(s));
      }
      p.scales[k] = s;
    }

    Tensor& wd = *dws.weights;
    const std::int64_t per = static_cast<std::int64_t>(wd.size()) / static_cast<std::int64_t>(channels);
    Tensor& wc = *conv.weights;
    if (wc.dim(1) != static_cast<std::int64_t>(channels)) {
      fail(ErrorCode::kShapeMismatch, "conv '" + conv.id + "' input channels do not match DWS '" + dws.id + "'");
    }
    const std::int64_t spatial = wc.dim(2) * wc.dim(3);
    for (std::size_t k = 0; k < channels; ++k) {
      const double s = p.scales[k];
      if (s == 1.0) continue;
      for (std::int64_t i = 0; i < per; ++i) wd[static_cast<std::int64_t>(k) * per + i] *= s;
      if (dws.bias) (*dws.bias)[k] *= s;
      for (std::int64_t o = 0; o < wc.dim(0); ++o)
        for (std::int64_t i = 0; i < spatial; ++i) wc[(o * wc.dim(1) + static_cast<std::int64_t>(k)) * spatial + i] /= s;
    }
  }
  return {std::move(out), std::move(report)};
}

}  // namespace fatq
