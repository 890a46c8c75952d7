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

#include "fatq/quant.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

namespace fatq {

namespace {

void check_bits(int bits) {
  if (bits < 2 || bits > 8) fail(ErrorCode::kInvalidArgument, "bit width must be in [2, 8], got " + std::to_string(bits));
}

double floor_threshold(double t, const char* what) {
  if (!std::isfinite(t)) fail(ErrorCode::kNonFiniteInput, std::string(what) + " is not finite");
  if (t < kThresholdFloor) {
    spdlog::warn("degenerate {} {:.3g} floored at {:.0e}", what, t, kThresholdFloor);
    return kThresholdFloor;
  }
  return t;
}

std::size_t broadcast_index(std::size_t channels, std::size_t c) { return channels == 1 ? 0 : c; }

}  // namespace

std::string_view signedness_name(Signedness s) { return s == Signedness::kSigned ? "signed" : "unsigned"; }
std::string_view quant_mode_name(QuantMode m) { return m == QuantMode::kSymmetric ? "symmetric" : "asymmetric"; }

std::size_t QuantParams::channels() const noexcept {
  return mode == QuantMode::kSymmetric ? t_max.size() : t_left.size();
}

QuantParams QuantParams::symmetric(std::vector<double> t_max, Signedness signedness, int bits, int axis) {
  check_bits(bits);
  if (t_max.empty()) fail(ErrorCode::kInvalidArgument, "symmetric params need at least one threshold");
  if (axis < 0 && t_max.size() != 1) fail(ErrorCode::kInvalidArgument, "per-tensor params take one threshold");
  QuantParams p;
  p.bits = bits;
  p.signedness = signedness;
  p.mode = QuantMode::kSymmetric;
  p.axis = axis;
  for (double& t : t_max) t = floor_threshold(t, "threshold");
  p.alpha.assign(t_max.size(), 1.0);
  p.t_max = std::move(t_max);
  return p;
}

QuantParams QuantParams::asymmetric(std::vector<double> t_left, std::vector<double> t_right, Signedness signedness,
                                    int bits, int axis) {
  check_bits(bits);
  if (t_left.empty() || t_left.size() != t_right.size()) {
    fail(ErrorCode::kInvalidArgument, "asymmetric params need matching left/right limits");
  }
  if (axis < 0 && t_left.size() != 1) fail(ErrorCode::kInvalidArgument, "per-tensor params take one limit pair");
  QuantParams p;
  p.bits = bits;
  p.signedness = signedness;
  p.mode = QuantMode::kAsymmetric;
  p.axis = axis;
  for (std::size_t c = 0; c < t_left.size(); ++c) {
    if (!std::isfinite(t_left[c]) || !std::isfinite(t_right[c])) fail(ErrorCode::kNonFiniteInput, "non-finite limit");
    const double r = floor_threshold(t_right[c] - t_left[c], "range width");
    t_right[c] = t_left[c] + r;
  }
  p.alpha_t.assign(t_left.size(), 0.0);
  p.alpha_r.assign(t_left.size(), 1.0);
  p.t_left = std::move(t_left);
  p.t_right = std::move(t_right);
  return p;
}

std::pair<std::int32_t, std::int32_t> code_range(const QuantParams& p) {
  if (p.mode == QuantMode::kSymmetric && p.signedness == Signedness::kSigned) {
    const std::int32_t m = (1 << (p.bits - 1)) - 1;
    return {-m, m};
  }
  return {0, (1 << p.bits) - 1};
}

std::vector<Thresholds> adjusted_thresholds(const QuantParams& p) {
  std::vector<Thresholds> out(p.channels());
  for (std::size_t c = 0; c < out.size(); ++c) {
    if (p.mode == QuantMode::kSymmetric) {
      const double hi = kAlphaRange.clip(p.alpha[c]) * p.t_max[c];
      out[c] = {p.signedness == Signedness::kSigned ? -hi : 0.0, hi};
    } else {
      const double r = p.t_right[c] - p.t_left[c];
      const double lo = p.t_left[c] + p.shift_range().clip(p.alpha_t[c]) * r;
      out[c] = {lo, lo + kAlphaWidthRange.clip(p.alpha_r[c]) * r};
    }
  }
  return out;
}

std::vector<QuantGrid> quant_grids(const QuantParams& p, RoundMode mode) {
  const auto [qmin, qmax] = code_range(p);
  const auto th = adjusted_thresholds(p);
  std::vector<QuantGrid> out(th.size());
  for (std::size_t c = 0; c < th.size(); ++c) {
    QuantGrid g{0.0, 0.0, static_cast<double>(qmin), static_cast<double>(qmax)};
    if (p.mode == QuantMode::kSymmetric) {
      g.scale = static_cast<double>(qmax) / th[c].hi;
    } else {
      g.scale = static_cast<double>(qmax) / (th[c].hi - th[c].lo);
      const double raw = -g.scale * th[c].lo;
      g.zero_point = std::clamp(mode == RoundMode::kNearest ? std::round(raw) : raw, g.qmin, g.qmax);
    }
    out[c] = g;
  }
  return out;
}

ChannelIndexer::ChannelIndexer(const Shape& shape, const QuantParams& p) {
  channels_ = p.channels();
  if (!p.per_channel() || channels_ == 1) {
    channels_ = 1;
    return;
  }
  const auto axis = static_cast<std::size_t>(p.axis);
  if (axis >= shape.size() || shape[axis] != static_cast<std::int64_t>(channels_)) {
    fail(ErrorCode::kShapeMismatch, "per-channel params with " + std::to_string(channels_) +
                                        " channels do not fit tensor " + shape_to_string(shape) + " on axis " +
                                        std::to_string(p.axis));
  }
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner_ *= static_cast<std::size_t>(shape[d]);
}

IntTensor quantize_tensor(const Tensor& x, const QuantParams& p) {
  const auto grids = quant_grids(p);
  const ChannelIndexer channel(x.shape(), p);
  IntTensor q(x.shape(), DType::kInt8Range);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (!std::isfinite(v)) fail(ErrorCode::kNonFiniteInput, "quantize_tensor: non-finite value");
    const QuantGrid& g = grids[channel(i)];
    q[i] = static_cast<std::int32_t>(std::clamp(std::round(g.scale * v) + g.zero_point, g.qmin, g.qmax));
  }
  return q;
}

Tensor dequantize(const IntTensor& q, const QuantParams& p) {
  const auto grids = quant_grids(p);
  const ChannelIndexer channel(q.shape(), p);
  Tensor x(q.shape());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const QuantGrid& g = grids[channel(i)];
    x[i] = (static_cast<double>(q[i]) - g.zero_point) / g.scale;
  }
  return x;
}

Tensor fake_quant_forward(const Tensor& x, const QuantParams& p, RoundMode mode) {
  const auto grids = quant_grids(p, mode);
  const ChannelIndexer channel(x.shape(), p);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (!std::isfinite(v)) fail(ErrorCode::kNonFiniteInput, "fake_quant_forward: non-finite value");
    const QuantGrid& g = grids[channel(i)];
    const double sv = g.scale * v;
    const double q = std::clamp((mode == RoundMode::kNearest ? std::round(sv) : sv) + g.zero_point, g.qmin, g.qmax);
    y[i] = (q - g.zero_point) / g.scale;
  }
  return y;
}

SteGrads ste_backward(const Tensor& grad_out, const Tensor& x, const QuantParams& p, RoundMode mode) {
  expect_same_shape(grad_out.shape(), x.shape(), "ste_backward");
  const auto grids = quant_grids(p, mode);
  const auto th = adjusted_thresholds(p);
  const ChannelIndexer channel(x.shape(), p);
  const std::size_t nc = p.channels();

  // Per-channel accumulators of dL/dS and dL/dzp.
  std::vector<double> d_scale(nc, 0.0), d_zero(nc, 0.0);
  SteGrads out{Tensor(x.shape()), {}, {}, {}};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = channel(i);
    const QuantGrid& g = grids[c];
    const double gy = grad_out[i];
    const double sv = g.scale * x[i];
    const double r = mode == RoundMode::kNearest ? std::round(sv) : sv;
    const double u = r + g.zero_point;
    const double s2 = g.scale * g.scale;
    if (u >= g.qmin && u <= g.qmax) {
      out.grad_x[i] = gy;
      // f = r / S with dr/dS = x under the straight-through rule.
      d_scale[c] += gy * (sv - r) / s2;
    } else {
      const double bound = u < g.qmin ? g.qmin : g.qmax;
      d_scale[c] += -gy * (bound - g.zero_point) / s2;
      d_zero[c] += -gy / g.scale;
    }
  }

  if (p.mode == QuantMode::kSymmetric) {
    out.grad_alpha.assign(nc, 0.0);
    for (std::size_t c = 0; c < nc; ++c) {
      if (!kAlphaRange.contains(p.alpha[c])) continue;
      // S = qmax / (clip(alpha) * T_max)
      const double t_hi = th[c].hi;
      out.grad_alpha[c] = d_scale[c] * (-grids[c].scale / t_hi) * p.t_max[c];
    }
  } else {
    out.grad_alpha_t.assign(nc, 0.0);
    out.grad_alpha_r.assign(nc, 0.0);
    for (std::size_t c = 0; c < nc; ++c) {
      const QuantGrid& g = grids[c];
      const double range = p.t_right[c] - p.t_left[c];
      const double width = th[c].hi - th[c].lo;
      const double raw_zp = -g.scale * th[c].lo;
      const double zp_arg = mode == RoundMode::kNearest ? std::round(raw_zp) : raw_zp;
      const bool zp_live = zp_arg >= g.qmin && zp_arg <= g.qmax;
      // zp = clip(round(-S * T_lo)); S = qmax / width
      const double dzp_dscale = zp_live ? -th[c].lo : 0.0;
      const double dzp_dlo = zp_live ? -g.scale : 0.0;
      const double total_dscale = d_scale[c] + d_zero[c] * dzp_dscale;
      if (kAlphaWidthRange.contains(p.alpha_r[c])) {
        out.grad_alpha_r[c] = total_dscale * (-g.scale / width) * range;
      }
      if (p.shift_range().contains(p.alpha_t[c])) {
        out.grad_alpha_t[c] = d_zero[c] * dzp_dlo * range;
      }
    }
  }
  return out;
}

double bias_scale(double s_in, double s_w) { return s_in * s_w; }

IntTensor quantize_bias(const Tensor& b, double s_in, std::span<const double> s_w) {
  if (s_w.size() != 1 && s_w.size() != b.size()) {
    fail(ErrorCode::kShapeMismatch, "bias has " + std::to_string(b.size()) + " entries but " +
                                        std::to_string(s_w.size()) + " weight scales");
  }
  IntTensor q(b.shape(), DType::kInt32Acc);
  const double lim = static_cast<double>(kInt32Max);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double s = bias_scale(s_in, s_w[broadcast_index(s_w.size(), i)]);
    if (!(s > 0.0)) fail(ErrorCode::kInvalidArgument, "bias scales must be positive");
    const double v = std::round(s * b[i]);
    q[i] = static_cast<std::int32_t>(std::isnan(v) ? 0.0 : std::clamp(v, -lim, lim));
  }
  return q;
}

nlohmann::json to_json(const QuantParams& p) {
  nlohmann::json j;
  j["bits"] = p.bits;
  j["signedness"] = std::string(signedness_name(p.signedness));
  j["mode"] = std::string(quant_mode_name(p.mode));
  j["axis"] = p.axis;
  auto clipped = [](const std::vector<double>& v, ClipRange r) {
    std::vector<double> out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [&](double a) { return r.clip(a); });
    return out;
  };
  if (p.mode == QuantMode::kSymmetric) {
    j["t_max"] = p.t_max;
    j["alpha"] = clipped(p.alpha, kAlphaRange);
  } else {
    j["t_left"] = p.t_left;
    j["t_right"] = p.t_right;
    j["alpha_t"] = clipped(p.alpha_t, p.shift_range());
    j["alpha_r"] = clipped(p.alpha_r, kAlphaWidthRange);
  }
  return j;
}

QuantParams quant_params_from_json(const nlohmann::json& j) {
  try {
    QuantParams p;
    p.bits = j.at("bits").get<int>();
    check_bits(p.bits);
    p.signedness = j.at("signedness").get<std::string>() == "unsigned" ? Signedness::kUnsigned : Signedness::kSigned;
    const auto mode = j.at("mode").get<std::string>();
    if (mode != "symmetric" && mode != "asymmetric") fail(ErrorCode::kParseError, "unknown quant mode '" + mode + "'");
    p.mode = mode == "symmetric" ? QuantMode::kSymmetric : QuantMode::kAsymmetric;
    p.axis = j.at("axis").get<int>();
    if (p.mode == QuantMode::kSymmetric) {
      p.t_max = j.at("t_max").get<std::vector<double>>();
      p.alpha = j.at("alpha").get<std::vector<double>>();
      if (p.alpha.size() != p.t_max.size()) fail(ErrorCode::kParseError, "alpha/t_max length mismatch");
    } else {
      p.t_left = j.at("t_left").get<std::vector<double>>();
      p.t_right = j.at("t_right").get<std::vector<double>>();
      p.alpha_t = j.at("alpha_t").get<std::vector<double>>();
      p.alpha_r = j.at("alpha_r").get<std::vector<double>>();
      const auto n = p.t_left.size();
      if (p.t_right.size() != n || p.alpha_t.size() != n || p.alpha_r.size() != n) {
        fail(ErrorCode::kParseError, "asymmetric param length mismatch");
      }
    }
    if (p.channels() == 0) fail(ErrorCode::kParseError, "quant params without thresholds");
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, std::string("quant params: ") + e.what());
  }
}

nlohmann::json to_json(const SiteParams& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [site, p] : params) j[site] = to_json(p);
  return j;
}

SiteParams site_params_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::kParseError, "site params must be a JSON object");
  SiteParams out;
  for (const auto& [site, jp] : j.items()) out.emplace(site, quant_params_from_json(jp));
  return out;
}

}  // namespace fatq
