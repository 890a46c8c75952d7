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

#include "fatq/kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace fatq {

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2D: return "Conv2D";
    case LayerKind::kDWSConv2D: return "DWSConv2D";
    case LayerKind::kFullyConnected: return "FullyConnected";
    case LayerKind::kBatchNorm: return "BatchNorm";
    case LayerKind::kReLU: return "ReLU";
    case LayerKind::kReLU6: return "ReLU6";
    case LayerKind::kAvgPool: return "AvgPool";
    case LayerKind::kSoftmax: return "Softmax";
    case LayerKind::kAdd: return "Add";
  }
  return "Unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto kind : {LayerKind::kConv2D, LayerKind::kDWSConv2D, LayerKind::kFullyConnected,
                    LayerKind::kBatchNorm, LayerKind::kReLU, LayerKind::kReLU6,
                    LayerKind::kAvgPool, LayerKind::kSoftmax, LayerKind::kAdd}) {
    if (layer_kind_name(kind) == name) return kind;
  }
  fail(ErrorCode::kUnsupportedKind, "unknown layer kind '" + std::string(name) + "'");
}

bool has_weights(LayerKind kind) {
  return is_compute(kind) || kind == LayerKind::kBatchNorm;
}

bool is_compute(LayerKind kind) {
  return kind == LayerKind::kConv2D || kind == LayerKind::kDWSConv2D ||
         kind == LayerKind::kFullyConnected;
}

bool is_activation(LayerKind kind) {
  return kind == LayerKind::kReLU || kind == LayerKind::kReLU6;
}

namespace {

struct ConvGeometry {
  std::int64_t n, c, h, w;     // input
  std::int64_t o, kh, kw;      // filters
  std::int64_t groups, cg, og; // channels per group (in / out)
  std::int64_t ho, wo;
  std::int64_t stride, pad;
};

ConvGeometry conv_geometry(const LayerKernel& k, const Shape& in, const Shape& w) {
  if (in.size() != 4) fail(ErrorCode::kShapeMismatch, "conv input must be NCHW, got " + shape_to_string(in));
  if (w.size() != 4) fail(ErrorCode::kShapeMismatch, "conv weight must be [O, I, kh, kw], got " + shape_to_string(w));
  if (k.stride < 1 || k.padding < 0) fail(ErrorCode::kInvalidArgument, "bad stride/padding");
  ConvGeometry g{};
  g.n = in[0]; g.c = in[1]; g.h = in[2]; g.w = in[3];
  g.o = w[0]; g.kh = w[2]; g.kw = w[3];
  g.stride = k.stride; g.pad = k.padding;
  if (k.kind == LayerKind::kDWSConv2D) {
    if (w[1] != 1 || w[0] != g.c) {
      fail(ErrorCode::kShapeMismatch, "DWSConv2D weight must be [C, 1, kh, kw] with C = " +
                                          std::to_string(g.c) + ", got " + shape_to_string(w));
    }
    g.groups = g.c;
  } else {
    g.groups = k.groups;
  }
  if (g.groups < 1 || g.c % g.groups != 0 || g.o % g.groups != 0 || w[1] != g.c / g.groups) {
    fail(ErrorCode::kShapeMismatch, "conv weight " + shape_to_string(w) + " incompatible with input " +
                                        shape_to_string(in) + " and groups " + std::to_string(g.groups));
  }
  g.cg = g.c / g.groups;
  g.og = g.o / g.groups;
  const std::int64_t hp = g.h + 2 * g.pad - g.kh;
  const std::int64_t wp = g.w + 2 * g.pad - g.kw;
  if (hp < 0 || wp < 0) fail(ErrorCode::kShapeMismatch, "conv kernel larger than padded input");
  g.ho = hp / g.stride + 1;
  g.wo = wp / g.stride + 1;
  return g;
}

// Output column range [lo, hi) for which ix = ox*stride - pad + kx stays inside [0, w).
inline void valid_range(std::int64_t k, std::int64_t stride, std::int64_t pad, std::int64_t extent,
                        std::int64_t out, std::int64_t& lo, std::int64_t& hi) {
  // ox*stride >= pad - k  and  ox*stride < extent + pad - k
  const std::int64_t a = pad - k;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  const std::int64_t b = extent + pad - k;  // exclusive bound on ox*stride
  hi = b <= 0 ? 0 : std::min(out, (b + stride - 1) / stride);
  if (lo > hi) lo = hi;
}

void check_bias(const Tensor* bias, std::int64_t channels) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != channels)) {
    fail(ErrorCode::kShapeMismatch, "bias shape " + shape_to_string(bias->shape()) +
                                        " expected [" + std::to_string(channels) + "]");
  }
}

Tensor conv_forward(const LayerKernel& k, const Tensor& x, const Tensor& w, const Tensor* b) {
  const auto g = conv_geometry(k, x.shape(), w.shape());
  check_bias(b, g.o);
  Tensor y({g.n, g.o, g.ho, g.wo});
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  double* yd = y.data().data();
  const std::int64_t plane_in = g.h * g.w;
  const std::int64_t plane_out = g.ho * g.wo;
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t o = 0; o < g.o; ++o) {
      double* out = yd + (n * g.o + o) * plane_out;
      const double bv = b ? (*b)[static_cast<std::size_t>(o)] : 0.0;
      std::fill(out, out + plane_out, bv);
      const std::int64_t grp = o / g.og;
      for (std::int64_t ci = 0; ci < g.cg; ++ci) {
        const std::int64_t c = grp * g.cg + ci;
        const double* in = xd + (n * g.c + c) * plane_in;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          std::int64_t oy0, oy1;
          valid_range(ky, g.stride, g.pad, g.h, g.ho, oy0, oy1);
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            std::int64_t ox0, ox1;
            valid_range(kx, g.stride, g.pad, g.w, g.wo, ox0, ox1);
            const double wv = wd[((o * g.cg + ci) * g.kh + ky) * g.kw + kx];
            for (std::int64_t oy = oy0; oy < oy1; ++oy) {
              const std::int64_t off = (oy * g.stride - g.pad + ky) * g.w - g.pad + kx;
              double* orow = out + oy * g.wo;
              for (std::int64_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * in[off + ox * g.stride];
            }
          }
        }
      }
    }
  }
  return y;
}

LayerGrads conv_backward(const LayerKernel& k, const Tensor& x, const Tensor& w, const Tensor* b,
                         const Tensor& gy) {
  const auto g = conv_geometry(k, x.shape(), w.shape());
  check_bias(b, g.o);
  expect_same_shape(gy.shape(), Shape{g.n, g.o, g.ho, g.wo}, "conv grad_out");
  LayerGrads grads;
  Tensor gx(x.shape());
  Tensor gw(w.shape());
  Tensor gb({g.o});
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  const double* gyd = gy.data().data();
  double* gxd = gx.data().data();
  double* gwd = gw.data().data();
  const std::int64_t plane_in = g.h * g.w;
  const std::int64_t plane_out = g.ho * g.wo;
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t o = 0; o < g.o; ++o) {
      const double* gout = gyd + (n * g.o + o) * plane_out;
      double s = 0.0;
      for (std::int64_t i = 0; i < plane_out; ++i) s += gout[i];
      gb[static_cast<std::size_t>(o)] += s;
      const std::int64_t grp = o / g.og;
      for (std::int64_t ci = 0; ci < g.cg; ++ci) {
        const std::int64_t c = grp * g.cg + ci;
        const double* in = xd + (n * g.c + c) * plane_in;
        double* gin = gxd + (n * g.c + c) * plane_in;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          std::int64_t oy0, oy1;
          valid_range(ky, g.stride, g.pad, g.h, g.ho, oy0, oy1);
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            std::int64_t ox0, ox1;
            valid_range(kx, g.stride, g.pad, g.w, g.wo, ox0, ox1);
            const std::int64_t widx = ((o * g.cg + ci) * g.kh + ky) * g.kw + kx;
            const double wv = wd[widx];
            double acc = 0.0;
            for (std::int64_t oy = oy0; oy < oy1; ++oy) {
              const std::int64_t off = (oy * g.stride - g.pad + ky) * g.w - g.pad + kx;
              const double* grow_out = gout + oy * g.wo;
              for (std::int64_t ox = ox0; ox < ox1; ++ox) {
                acc += in[off + ox * g.stride] * grow_out[ox];
                gin[off + ox * g.stride] += wv * grow_out[ox];
              }
            }
            gwd[widx] += acc;
          }
        }
      }
    }
  }
  grads.inputs.push_back(std::move(gx));
  grads.weights = std::move(gw);
  if (b) grads.bias = std::move(gb);
  return grads;
}

std::int64_t feature_count(const Shape& s) {
  if (s.empty()) fail(ErrorCode::kShapeMismatch, "FC input must have a batch dimension");
  std::int64_t f = 1;
  for (std::size_t i = 1; i < s.size(); ++i) f *= s[i];
  return f;
}

Tensor fc_forward(const Tensor& x, const Tensor& w, const Tensor* b) {
  const std::int64_t n = x.dim(0);
  const std::int64_t f = feature_count(x.shape());
  if (w.rank() != 2 || w.dim(1) != f) {
    fail(ErrorCode::kShapeMismatch, "FC weight " + shape_to_string(w.shape()) + " incompatible with " +
                                        std::to_string(f) + " input features");
  }
  const std::int64_t o = w.dim(0);
  check_bias(b, o);
  Tensor y({n, o});
  for (std::int64_t i = 0; i < n; ++i) {
    const double* xr = x.data().data() + i * f;
    for (std::int64_t j = 0; j < o; ++j) {
      const double* wr = w.data().data() + j * f;
      double acc = b ? (*b)[static_cast<std::size_t>(j)] : 0.0;
      for (std::int64_t k = 0; k < f; ++k) acc += wr[k] * xr[k];
      y[static_cast<std::size_t>(i * o + j)] = acc;
    }
  }
  return y;
}

LayerGrads fc_backward(const Tensor& x, const Tensor& w, const Tensor* b, const Tensor& gy) {
  const std::int64_t n = x.dim(0);
  const std::int64_t f = feature_count(x.shape());
  const std::int64_t o = w.dim(0);
  if (w.rank() != 2 || w.dim(1) != f) fail(ErrorCode::kShapeMismatch, "FC weight/input mismatch");
  expect_same_shape(gy.shape(), Shape{n, o}, "FC grad_out");
  Tensor gx(x.shape());
  Tensor gw(w.shape());
  Tensor gb({o});
  for (std::int64_t i = 0; i < n; ++i) {
    const double* xr = x.data().data() + i * f;
    double* gxr = gx.data().data() + i * f;
    for (std::int64_t j = 0; j < o; ++j) {
      const double g = gy[static_cast<std::size_t>(i * o + j)];
      if (g == 0.0) continue;
      const double* wr = w.data().data() + j * f;
      double* gwr = gw.data().data() + j * f;
      for (std::int64_t k = 0; k < f; ++k) {
        gxr[k] += g * wr[k];
        gwr[k] += g * xr[k];
      }
      gb[static_cast<std::size_t>(j)] += g;
    }
  }
  LayerGrads grads;
  grads.inputs.push_back(std::move(gx));
  grads.weights = std::move(gw);
  if (b) grads.bias = std::move(gb);
  return grads;
}

struct BnView {
  std::int64_t n, c, inner;
};

BnView bn_view(const Tensor& x, const Tensor& w) {
  if (x.rank() < 2) fail(ErrorCode::kShapeMismatch, "BatchNorm input needs a channel dimension");
  const std::int64_t c = x.dim(1);
  if (w.rank() != 2 || w.dim(0) != 4 || w.dim(1) != c) {
    fail(ErrorCode::kShapeMismatch, "BatchNorm parameters must be [4, " + std::to_string(c) + "], got " +
                                        shape_to_string(w.shape()));
  }
  std::int64_t inner = 1;
  for (std::size_t i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  return {x.dim(0), c, inner};
}

Tensor bn_forward(const LayerKernel& k, const Tensor& x, const Tensor& w) {
  const auto v = bn_view(x, w);
  Tensor y(x.shape());
  for (std::int64_t c = 0; c < v.c; ++c) {
    const double gamma = w[c], beta = w[v.c + c], mean = w[2 * v.c + c], var = w[3 * v.c + c];
    const double inv = 1.0 / std::sqrt(var + k.eps);
    for (std::int64_t n = 0; n < v.n; ++n) {
      const std::int64_t base = (n * v.c + c) * v.inner;
      for (std::int64_t i = 0; i < v.inner; ++i) {
        y[base + i] = (x[base + i] - mean) * inv * gamma + beta;
      }
    }
  }
  return y;
}

LayerGrads bn_backward(const LayerKernel& k, const Tensor& x, const Tensor& w, const Tensor& gy) {
  const auto v = bn_view(x, w);
  expect_same_shape(gy.shape(), x.shape(), "BatchNorm grad_out");
  Tensor gx(x.shape());
  Tensor gw(w.shape());
  for (std::int64_t c = 0; c < v.c; ++c) {
    const double gamma = w[c], mean = w[2 * v.c + c], var = w[3 * v.c + c];
    const double inv = 1.0 / std::sqrt(var + k.eps);
    double dgamma = 0, dbeta = 0, dxhat_sum = 0;
    for (std::int64_t n = 0; n < v.n; ++n) {
      const std::int64_t base = (n * v.c + c) * v.inner;
      for (std::int64_t i = 0; i < v.inner; ++i) {
        const double g = gy[base + i];
        const double centered = x[base + i] - mean;
        gx[base + i] = g * gamma * inv;
        dgamma += g * centered * inv;
        dbeta += g;
        dxhat_sum += g * centered;
      }
    }
    gw[c] = dgamma;
    gw[v.c + c] = dbeta;
    gw[2 * v.c + c] = -dbeta * gamma * inv;
    gw[3 * v.c + c] = -0.5 * gamma * dxhat_sum * inv * inv * inv;
  }
  LayerGrads grads;
  grads.inputs.push_back(std::move(gx));
  grads.weights = std::move(gw);
  return grads;
}

struct PoolGeometry {
  std::int64_t n, c, h, w, k, s, ho, wo;
};

PoolGeometry pool_geometry(const LayerKernel& k, const Shape& in) {
  if (in.size() != 4) fail(ErrorCode::kShapeMismatch, "AvgPool input must be NCHW");
  if (k.pool < 1 || k.stride < 1) fail(ErrorCode::kInvalidArgument, "AvgPool window/stride must be >= 1");
  PoolGeometry g{in[0], in[1], in[2], in[3], k.pool, k.stride, 0, 0};
  if (g.h < g.k || g.w < g.k) fail(ErrorCode::kShapeMismatch, "AvgPool window larger than input");
  g.ho = (g.h - g.k) / g.s + 1;
  g.wo = (g.w - g.k) / g.s + 1;
  return g;
}

Tensor pool_forward(const LayerKernel& k, const Tensor& x) {
  const auto g = pool_geometry(k, x.shape());
  Tensor y({g.n, g.c, g.ho, g.wo});
  const double inv = 1.0 / static_cast<double>(g.k * g.k);
  for (std::int64_t p = 0; p < g.n * g.c; ++p) {
    const double* in = x.data().data() + p * g.h * g.w;
    double* out = y.data().data() + p * g.ho * g.wo;
    for (std::int64_t oy = 0; oy < g.ho; ++oy) {
      for (std::int64_t ox = 0; ox < g.wo; ++ox) {
        double acc = 0.0;
        for (std::int64_t ky = 0; ky < g.k; ++ky)
          for (std::int64_t kx = 0; kx < g.k; ++kx) acc += in[(oy * g.s + ky) * g.w + ox * g.s + kx];
        out[oy * g.wo + ox] = acc * inv;
      }
    }
  }
  return y;
}

LayerGrads pool_backward(const LayerKernel& k, const Tensor& x, const Tensor& gy) {
  const auto g = pool_geometry(k, x.shape());
  expect_same_shape(gy.shape(), Shape{g.n, g.c, g.ho, g.wo}, "AvgPool grad_out");
  Tensor gx(x.shape());
  const double inv = 1.0 / static_cast<double>(g.k * g.k);
  for (std::int64_t p = 0; p < g.n * g.c; ++p) {
    double* gin = gx.data().data() + p * g.h * g.w;
    const double* gout = gy.data().data() + p * g.ho * g.wo;
    for (std::int64_t oy = 0; oy < g.ho; ++oy)
      for (std::int64_t ox = 0; ox < g.wo; ++ox) {
        const double v = gout[oy * g.wo + ox] * inv;
        for (std::int64_t ky = 0; ky < g.k; ++ky)
          for (std::int64_t kx = 0; kx < g.k; ++kx) gin[(oy * g.s + ky) * g.w + ox * g.s + kx] += v;
      }
  }
  LayerGrads grads;
  grads.inputs.push_back(std::move(gx));
  return grads;
}

Tensor softmax_forward(const Tensor& x) {
  const std::int64_t n = x.dim(0);
  const std::int64_t f = feature_count(x.shape());
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const double* xr = x.data().data() + i * f;
    double* yr = y.data().data() + i * f;
    const double m = *std::max_element(xr, xr + f);
    double s = 0.0;
    for (std::int64_t j = 0; j < f; ++j) s += (yr[j] = std::exp(xr[j] - m));
    for (std::int64_t j = 0; j < f; ++j) yr[j] /= s;
  }
  return y;
}

const Tensor& require(const Tensor* t, LayerKind kind, const char* what) {
  if (!t) fail(ErrorCode::kShapeMismatch, std::string(layer_kind_name(kind)) + " requires " + what);
  return *t;
}

void expect_inputs(TensorRefs inputs, std::size_t n, LayerKind kind) {
  if (inputs.size() != n) {
    fail(ErrorCode::kShapeMismatch, std::string(layer_kind_name(kind)) + " expects " + std::to_string(n) +
                                        " input(s), got " + std::to_string(inputs.size()));
  }
}

}  // namespace

Tensor forward(const LayerKernel& kernel, TensorRefs inputs, const Tensor* weights,
               const Tensor* bias) {
  const std::size_t arity = kernel.kind == LayerKind::kAdd ? 2 : 1;
  expect_inputs(inputs, arity, kernel.kind);
  const Tensor& x = *inputs[0];
  switch (kernel.kind) {
    case LayerKind::kConv2D:
    case LayerKind::kDWSConv2D:
      return conv_forward(kernel, x, require(weights, kernel.kind, "weights"), bias);
    case LayerKind::kFullyConnected:
      return fc_forward(x, require(weights, kernel.kind, "weights"), bias);
    case LayerKind::kBatchNorm:
      return bn_forward(kernel, x, require(weights, kernel.kind, "parameters"));
    case LayerKind::kReLU: {
      Tensor y(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::max(x[i], 0.0);
      return y;
    }
    case LayerKind::kReLU6: {
      Tensor y(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::min(std::max(x[i], 0.0), kReLU6Saturation);
      return y;
    }
    case LayerKind::kAvgPool:
      return pool_forward(kernel, x);
    case LayerKind::kSoftmax:
      return softmax_forward(x);
    case LayerKind::kAdd: {
      const Tensor& z = *inputs[1];
      expect_same_shape(x.shape(), z.shape(), "Add operands");
      Tensor y(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + z[i];
      return y;
    }
  }
  fail(ErrorCode::kUnsupportedKind, "forward");
}

Tensor forward(const LayerKernel& kernel, const Tensor& input, const Tensor* weights,
               const Tensor* bias) {
  const std::array<const Tensor*, 1> refs{&input};
  return forward(kernel, refs, weights, bias);
}

LayerGrads backward(const LayerKernel& kernel, TensorRefs inputs, const Tensor* weights,
                    const Tensor* bias, const Tensor& grad_out) {
  const std::size_t arity = kernel.kind == LayerKind::kAdd ? 2 : 1;
  expect_inputs(inputs, arity, kernel.kind);
  const Tensor& x = *inputs[0];
  switch (kernel.kind) {
    case LayerKind::kConv2D:
    case LayerKind::kDWSConv2D:
      return conv_backward(kernel, x, require(weights, kernel.kind, "weights"), bias, grad_out);
    case LayerKind::kFullyConnected:
      return fc_backward(x, require(weights, kernel.kind, "weights"), bias, grad_out);
    case LayerKind::kBatchNorm:
      return bn_backward(kernel, x, require(weights, kernel.kind, "parameters"), grad_out);
    case LayerKind::kReLU:
    case LayerKind::kReLU6: {
      expect_same_shape(grad_out.shape(), x.shape(), "activation grad_out");
      const double hi = kernel.kind == LayerKind::kReLU6 ? kReLU6Saturation
                                                         : std::numeric_limits<double>::infinity();
      Tensor gx(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] = (x[i] > 0.0 && x[i] < hi) ? grad_out[i] : 0.0;
      LayerGrads grads;
      grads.inputs.push_back(std::move(gx));
      return grads;
    }
    case LayerKind::kAvgPool:
      return pool_backward(kernel, x, grad_out);
    case LayerKind::kSoftmax: {
      expect_same_shape(grad_out.shape(), x.shape(), "Softmax grad_out");
      const Tensor y = softmax_forward(x);
      const std::int64_t n = x.dim(0);
      const std::int64_t f = feature_count(x.shape());
      Tensor gx(x.shape());
      for (std::int64_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < f; ++j) dot += grad_out[i * f + j] * y[i * f + j];
        for (std::int64_t j = 0; j < f; ++j) gx[i * f + j] = y[i * f + j] * (grad_out[i * f + j] - dot);
      }
      LayerGrads grads;
      grads.inputs.push_back(std::move(gx));
      return grads;
    }
    case LayerKind::kAdd: {
      expect_same_shape(grad_out.shape(), x.shape(), "Add grad_out");
      LayerGrads grads;
      grads.inputs.push_back(grad_out);
      grads.inputs.push_back(grad_out);
      return grads;
    }
  }
  fail(ErrorCode::kUnsupportedKind, "backward");
}

LayerGrads backward(const LayerKernel& kernel, const Tensor& input, const Tensor* weights,
                    const Tensor* bias, const Tensor& grad_out) {
  const std::array<const Tensor*, 1> refs{&input};
  return backward(kernel, refs, weights, bias, grad_out);
}

Shape output_shape(const LayerKernel& kernel, std::span<const Shape> inputs, const Tensor* weights) {
  if (inputs.empty()) fail(ErrorCode::kShapeMismatch, "no inputs");
  const Shape& in = inputs[0];
  switch (kernel.kind) {
    case LayerKind::kConv2D:
    case LayerKind::kDWSConv2D: {
      const auto g = conv_geometry(kernel, in, require(weights, kernel.kind, "weights").shape());
      return {g.n, g.o, g.ho, g.wo};
    }
    case LayerKind::kFullyConnected: {
      const Tensor& w = require(weights, kernel.kind, "weights");
      if (w.rank() != 2 || w.dim(1) != feature_count(in)) fail(ErrorCode::kShapeMismatch, "FC weight/input mismatch");
      return {in[0], w.dim(0)};
    }
    case LayerKind::kAvgPool: {
      const auto g = pool_geometry(kernel, in);
      return {g.n, g.c, g.ho, g.wo};
    }
    case LayerKind::kAdd:
      if (inputs.size() != 2) fail(ErrorCode::kShapeMismatch, "Add expects two inputs");
      expect_same_shape(inputs[0], inputs[1], "Add operands");
      return in;
    case LayerKind::kBatchNorm:
      bn_view(Tensor(in), require(weights, kernel.kind, "parameters"));
      return in;
    default:
      return in;
  }
}

std::vector<HistogramBin> histogram(const Tensor& t, int bins) {
  if (bins < 1) fail(ErrorCode::kInvalidArgument, "histogram needs at least one bin");
  if (t.empty()) fail(ErrorCode::kEmptyTensor, "histogram of an empty tensor");
  const auto [lo_it, hi_it] = std::minmax_element(t.data().begin(), t.data().end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) return {{lo, static_cast<std::int64_t>(t.size())}};
  const double width = (hi - lo) / bins;
  std::vector<HistogramBin> out(static_cast<std::size_t>(bins));
  for (int i = 0; i < bins; ++i) out[i] = {lo + i * width, 0};
  for (double v : t.data()) {
    auto idx = static_cast<std::int64_t>((v - lo) / width);
    idx = std::clamp<std::int64_t>(idx, 0, bins - 1);
    ++out[static_cast<std::size_t>(idx)].count;
  }
  return out;
}

}  // namespace fatq
