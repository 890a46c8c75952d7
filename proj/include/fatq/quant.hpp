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
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fatq/tensor.hpp"

namespace fatq {

enum class Signedness { kSigned, kUnsigned };
enum class QuantMode { kSymmetric, kAsymmetric };

// kNearest is the real quantizer (forward rounds, backward treats round as
// identity). kSurrogate drops every round() from the forward expression; its
// backward is the exact gradient of that round-free function.
enum class RoundMode { kNearest, kSurrogate };

struct ClipRange {
  double lo;
  double hi;

  double clip(double v) const { return v < lo ? lo : (v > hi ? hi : v); }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

inline constexpr ClipRange kAlphaRange{0.5, 1.0};
inline constexpr ClipRange kAlphaShiftSigned{-0.2, 0.4};
inline constexpr ClipRange kAlphaShiftUnsigned{0.0, 0.4};
inline constexpr ClipRange kAlphaWidthRange{0.5, 1.0};
inline constexpr double kThresholdFloor = 1e-12;
inline constexpr std::int64_t kInt32Max = 2147483647;

// Thresholds and trainable scales for one quantized tensor site.
// Per-tensor params hold vectors of length 1; per-channel params hold one
// entry per channel along `axis`.
struct QuantParams {
  int bits = 8;
  Signedness signedness = Signedness::kSigned;
  QuantMode mode = QuantMode::kSymmetric;
  int axis = -1;  // -1: per tensor

  std::vector<double> t_max;    // symmetric base threshold
  std::vector<double> t_left;   // asymmetric base limits
  std::vector<double> t_right;

  // Trainables, stored unclipped and evaluated clipped.
  std::vector<double> alpha;    // symmetric threshold scale, init 1
  std::vector<double> alpha_t;  // asymmetric left-limit shift, init 0
  std::vector<double> alpha_r;  // asymmetric width scale, init 1

  bool per_channel() const noexcept { return axis >= 0; }
  std::size_t channels() const noexcept;
  ClipRange shift_range() const noexcept {
    return signedness == Signedness::kSigned ? kAlphaShiftSigned : kAlphaShiftUnsigned;
  }

  // Builders floor degenerate thresholds at kThresholdFloor (with a warning).
  static QuantParams symmetric(std::vector<double> t_max, Signedness signedness, int bits = 8, int axis = -1);
  static QuantParams asymmetric(std::vector<double> t_left, std::vector<double> t_right, Signedness signedness,
                                int bits = 8, int axis = -1);

  bool operator==(const QuantParams&) const = default;
};

using SiteParams = std::map<std::string, QuantParams>;

struct Thresholds {
  double lo;
  double hi;
};

// Effective (T_lo, T_hi) per channel after clipping the trainable scales.
std::vector<Thresholds> adjusted_thresholds(const QuantParams& p);

// Integer grid per channel. zero_point is integral under kNearest and real
// under kSurrogate.
struct QuantGrid {
  double scale;
  double zero_point;
  double qmin;
  double qmax;
};

std::vector<QuantGrid> quant_grids(const QuantParams& p, RoundMode mode = RoundMode::kNearest);

// Integer code range of a site: [-(2^(n-1)-1), 2^(n-1)-1] for signed
// symmetric, [0, 2^n-1] otherwise.
std::pair<std::int32_t, std::int32_t> code_range(const QuantParams& p);

// Channel of flat element `i` for the params' granularity.
class ChannelIndexer {
 public:
  ChannelIndexer(const Shape& shape, const QuantParams& p);
  std::size_t operator()(std::size_t i) const noexcept {
    return channels_ == 1 ? 0 : (i / inner_) % channels_;
  }

 private:
  std::size_t inner_ = 1;
  std::size_t channels_ = 1;
};

IntTensor quantize_tensor(const Tensor& x, const QuantParams& p);
Tensor dequantize(const IntTensor& q, const QuantParams& p);
Tensor fake_quant_forward(const Tensor& x, const QuantParams& p, RoundMode mode = RoundMode::kNearest);

struct SteGrads {
  Tensor grad_x;
  std::vector<double> grad_alpha;    // symmetric params
  std::vector<double> grad_alpha_t;  // asymmetric params
  std::vector<double> grad_alpha_r;
};

// Backward of fake_quant_forward: round has unit derivative and clip passes
// the gradient only inside its bounds (inclusive), for the value and for the
// trainable scales alike.
SteGrads ste_backward(const Tensor& grad_out, const Tensor& x, const QuantParams& p,
                      RoundMode mode = RoundMode::kNearest);

// int32 bias: clip(round(s_in * s_w[c] * b), +-(2^31 - 1)). `s_w` has one
// entry or one per element of b.
IntTensor quantize_bias(const Tensor& b, double s_in, std::span<const double> s_w);
double bias_scale(double s_in, double s_w);

nlohmann::json to_json(const QuantParams& p);
QuantParams quant_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SiteParams& params);
SiteParams site_params_from_json(const nlohmann::json& j);

std::string_view signedness_name(Signedness s);
std::string_view quant_mode_name(QuantMode m);

}  // namespace fatq
