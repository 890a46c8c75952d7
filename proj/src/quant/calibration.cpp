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

#include "fatq/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fatq {

const QuantOp* QuantPlan::op_for_layer(const std::string& layer_id) const {
  for (const auto& op : ops)
    if (op.layer_id == layer_id) return &op;
  return nullptr;
}

QuantPlan build_plan(const Graph& g) {
  validate(g);
  QuantPlan plan;
  plan.input_site = g.input_id;
  plan.activation_sites[g.input_id] = Signedness::kSigned;
  std::map<std::string, std::string> site_of{{g.input_id, g.input_id}};
  std::map<std::string, bool> fused;
  for (const auto& l : g.layers) {
    if (l.kernel.kind == LayerKind::kBatchNorm) {
      fail(ErrorCode::kInvalidArgument, "fold BatchNorm '" + l.id + "' before quantizing");
    }
    if (l.kernel.kind == LayerKind::kSoftmax) {
      if (l.id != g.output_id || g.layers.back().id != l.id) {
        fail(ErrorCode::kUnsupportedKind, "Softmax '" + l.id + "' is only supported as the graph output");
      }
      continue;
    }
    if (fused[l.id]) continue;

    QuantOp op;
    op.layer_id = l.id;
    op.kind = l.kernel.kind;
    for (const auto& in : l.inputs) op.input_sites.push_back(site_of.at(in));
    op.output_site = l.id;
    if (!is_activation(l.kernel.kind)) {
      const auto cons = g.consumers(l.id);
      if (cons.size() == 1 && l.id != g.output_id && is_activation(g.layer(cons[0]).kernel.kind)) {
        op.activation = g.layer(cons[0]).kernel.kind;
        op.activation_id = cons[0];
        op.output_site = cons[0];
        fused[cons[0]] = true;
      }
    }

    auto input_sign = [&](std::size_t i) { return plan.activation_sites.at(op.input_sites[i]); };
    if (op.activation || is_activation(op.kind)) {
      op.output_signedness = Signedness::kUnsigned;
    } else if (op.kind == LayerKind::kAvgPool) {
      op.output_signedness = input_sign(0);
    } else if (op.kind == LayerKind::kAdd) {
      op.output_signedness = (input_sign(0) == Signedness::kUnsigned && input_sign(1) == Signedness::kUnsigned)
                                 ? Signedness::kUnsigned
                                 : Signedness::kSigned;
    } else {
      op.output_signedness = Signedness::kSigned;
    }
    plan.activation_sites[op.output_site] = op.output_signedness;
    site_of[l.id] = op.output_site;
    if (op.activation) site_of[op.activation_id] = op.output_site;
    if (is_compute(op.kind)) plan.weight_layers.push_back(l.id);
    plan.ops.push_back(std::move(op));
  }
  plan.logits_site = site_of.at(g.logits_id());
  return plan;
}

void RangeStats::observe(std::span<const double> values) {
  if (values.empty()) return;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (!seen) {
    min = *lo;
    max = *hi;
    seen = true;
  } else {
    min = std::min(min, *lo);
    max = std::max(max, *hi);
  }
}

WeightStats weight_stats(const Tensor& w) {
  WeightStats s;
  if (w.empty()) fail(ErrorCode::kEmptyTensor, "weight tensor is empty");
  const auto [lo, hi] = std::minmax_element(w.data().begin(), w.data().end());
  s.min = *lo;
  s.max = *hi;
  s.max_abs = max_abs(w.data());
  const std::int64_t channels = w.dim(0);
  const auto per = w.size() / static_cast<std::size_t>(channels);
  for (std::int64_t c = 0; c < channels; ++c) {
    const auto row = w.data().subspan(static_cast<std::size_t>(c) * per, per);
    const auto [clo, chi] = std::minmax_element(row.begin(), row.end());
    s.channel_min.push_back(*clo);
    s.channel_max.push_back(*chi);
    s.channel_max_abs.push_back(max_abs(row));
  }
  return s;
}

CalibStats calibrate(const Graph& g, const Dataset& data, std::int64_t batch) {
  if (data.size() == 0) fail(ErrorCode::kEmptyCalibration, "calibration dataset is empty");
  const QuantPlan plan = build_plan(g);
  CalibStats stats;
  stats.samples = data.size();
  for (std::int64_t begin = 0; begin < data.size(); begin += batch) {
    const std::int64_t end = std::min(data.size(), begin + batch);
    const auto acts = run_float_all(g, batch_slice(data.images, begin, end));
    for (const auto& [site, sign] : plan.activation_sites) stats.activations[site].observe(acts.at(site).data());
  }
  for (const auto& id : plan.weight_layers) stats.weights[id] = weight_stats(*g.layer(id).weights);
  return stats;
}

QuantConfig QuantConfig::scalar(QuantMode mode, int bits) {
  return {bits, mode, Granularity::kPerTensor, Granularity::kPerTensor, Granularity::kPerTensor};
}

QuantConfig QuantConfig::vector(QuantMode mode, int bits) {
  return {bits, mode, Granularity::kPerChannel, Granularity::kPerChannel, Granularity::kPerChannel};
}

Granularity QuantConfig::granularity_for(LayerKind kind) const {
  switch (kind) {
    case LayerKind::kDWSConv2D: return dws;
    case LayerKind::kFullyConnected: return fc;
    default: return conv;
  }
}

SiteParams make_site_params(const Graph& g, const QuantPlan& plan, const CalibStats& stats,
                            const QuantConfig& config) {
  SiteParams out;
  for (const auto& [site, sign] : plan.activation_sites) {
    auto it = stats.activations.find(site);
    if (it == stats.activations.end() || !it->second.seen) {
      fail(ErrorCode::kMissingSiteParams, "no calibration statistics for site '" + site + "'");
    }
    const RangeStats& r = it->second;
    if (config.mode == QuantMode::kSymmetric) {
      const double t = sign == Signedness::kSigned ? std::max(std::abs(r.min), std::abs(r.max)) : std::max(r.max, 0.0);
      out.emplace(site, QuantParams::symmetric({t}, sign, config.bits));
    } else {
      const double lo = sign == Signedness::kUnsigned ? std::max(r.min, 0.0) : r.min;
      out.emplace(site, QuantParams::asymmetric({lo}, {r.max}, sign, config.bits));
    }
  }
  for (const auto& id : plan.weight_layers) {
    auto it = stats.weights.find(id);
    if (it == stats.weights.end()) fail(ErrorCode::kMissingSiteParams, "no weight statistics for '" + id + "'");
    const WeightStats& w = it->second;
    const bool per_channel = config.granularity_for(g.layer(id).kernel.kind) == Granularity::kPerChannel;
    QuantParams p;
    if (config.mode == QuantMode::kSymmetric) {
      p = per_channel ? QuantParams::symmetric(w.channel_max_abs, Signedness::kSigned, config.bits, 0)
                      : QuantParams::symmetric({w.max_abs}, Signedness::kSigned, config.bits);
    } else {
      p = per_channel ? QuantParams::asymmetric(w.channel_min, w.channel_max, Signedness::kSigned, config.bits, 0)
                      : QuantParams::asymmetric({w.min}, {w.max}, Signedness::kSigned, config.bits);
    }
    out.emplace(QuantPlan::weight_site(id), std::move(p));
  }
  return out;
}

nlohmann::json to_json(const CalibStats& stats) {
  nlohmann::json j;
  j["samples"] = stats.samples;
  j["activations"] = nlohmann::json::object();
  for (const auto& [site, r] : stats.activations) j["activations"][site] = {{"min", r.min}, {"max", r.max}};
  j["weights"] = nlohmann::json::object();
  for (const auto& [id, w] : stats.weights) {
    j["weights"][id] = {{"min", w.min},
                        {"max", w.max},
                        {"max_abs", w.max_abs},
                        {"channel_min", w.channel_min},
                        {"channel_max", w.channel_max},
                        {"channel_max_abs", w.channel_max_abs}};
  }
  return j;
}

CalibStats calib_stats_from_json(const nlohmann::json& j) {
  try {
    CalibStats s;
    s.samples = j.at("samples").get<std::int64_t>();
    for (const auto& [site, r] : j.at("activations").items()) {
      s.activations[site] = {r.at("min").get<double>(), r.at("max").get<double>(), true};
    }
    for (const auto& [id, w] : j.at("weights").items()) {
      WeightStats ws;
      ws.min = w.at("min").get<double>();
      ws.max = w.at("max").get<double>();
      ws.max_abs = w.at("max_abs").get<double>();
      ws.channel_min = w.at("channel_min").get<std::vector<double>>();
      ws.channel_max = w.at("channel_max").get<std::vector<double>>();
      ws.channel_max_abs = w.at("channel_max_abs").get<std::vector<double>>();
      s.weights[id] = std::move(ws);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, std::string("calibration stats: ") + e.what());
  }
}

namespace {
const char* granularity_name(Granularity g) { return g == Granularity::kPerChannel ? "per_channel" : "per_tensor"; }
Granularity parse_granularity(const std::string& s) {
  if (s == "per_channel") return Granularity::kPerChannel;
  if (s == "per_tensor") return Granularity::kPerTensor;
  fail(ErrorCode::kParseError, "unknown granularity '" + s + "'");
}
}  // namespace

nlohmann::json to_json(const QuantConfig& c) {
  return {{"bits", c.bits},
          {"mode", std::string(quant_mode_name(c.mode))},
          {"conv", granularity_name(c.conv)},
          {"dws", granularity_name(c.dws)},
          {"fc", granularity_name(c.fc)}};
}

QuantConfig quant_config_from_json(const nlohmann::json& j) {
  try {
    QuantConfig c;
    c.bits = j.at("bits").get<int>();
    c.mode = j.at("mode").get<std::string>() == "asymmetric" ? QuantMode::kAsymmetric : QuantMode::kSymmetric;
    c.conv = parse_granularity(j.at("conv").get<std::string>());
    c.dws = parse_granularity(j.at("dws").get<std::string>());
    c.fc = parse_granularity(j.at("fc").get<std::string>());
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, std::string("quant config: ") + e.what());
  }
}

}  // namespace fatq
