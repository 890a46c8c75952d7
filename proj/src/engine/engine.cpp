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

#include "fatq/engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "fatq/calibration.hpp"

namespace fatq {

namespace {

const QuantParams& require(const SiteParams& params, const std::string& site) {
  auto it = params.find(site);
  if (it == params.end()) fail(ErrorCode::kMissingSiteParams, "no quantization params for site '" + site + "'");
  return it->second;
}

SiteQuant site_quant(const QuantParams& p) {
  if (p.per_channel() && p.channels() != 1) {
    fail(ErrorCode::kInvalidArgument, "activation sites must be quantized per tensor");
  }
  const QuantGrid g = quant_grids(p)[0];
  return {g.scale, static_cast<std::int32_t>(g.zero_point), static_cast<std::int32_t>(g.qmin),
          static_cast<std::int32_t>(g.qmax)};
}

std::int32_t shift_for(const QuantParams& p) { return code_range(p).second > 127 ? 128 : 0; }

}  // namespace

QuantizedModel compile(const Graph& g, const SiteParams& params, const PointwiseScales* scales) {
  const QuantPlan plan = build_plan(g);
  const Graph baked = scales ? apply_pointwise_scales(g, *scales) : g;
  QuantizedModel m;
  m.input_shape = g.input_shape;
  m.input_site = plan.input_site;
  m.output_site = plan.logits_site;
  for (const auto& [site, sign] : plan.activation_sites) m.sites[site] = site_quant(require(params, site));

  for (const auto& op : plan.ops) {
    const Layer& l = baked.layer(op.layer_id);
    QuantizedLayer q;
    q.id = l.id;
    q.kernel = l.kernel;
    q.activation = op.activation;
    q.inputs = op.input_sites;
    q.output = op.output_site;
    const double s_out = m.sites.at(op.output_site).scale;

    if (is_compute(l.kernel.kind)) {
      const QuantParams& pw = require(params, QuantPlan::weight_site(l.id));
      const IntTensor codes = quantize_tensor(*l.weights, pw);
      const std::int32_t shift = shift_for(pw);
      q.weight_shape = l.weights->shape();
      q.weights.reserve(codes.size());
      for (std::int32_t c : codes.data()) q.weights.push_back(static_cast<std::int8_t>(c - shift));

      const auto grids = quant_grids(pw);
      const std::int64_t out_ch = l.weights->dim(0);
      const double s_in = m.sites.at(op.input_sites[0]).scale;
      std::vector<double> s_w;
      for (std::int64_t c = 0; c < out_ch; ++c) {
        const QuantGrid& grid = grids[grids.size() == 1 ? 0 : static_cast<std::size_t>(c)];
        s_w.push_back(grid.scale);
        q.weight_zero_points.push_back(static_cast<std::int32_t>(grid.zero_point) - shift);
        q.multipliers.push_back(s_out / bias_scale(s_in, grid.scale));
      }
      if (l.bias) {
        const IntTensor b = quantize_bias(*l.bias, s_in, s_w);
        q.bias.assign(b.data().begin(), b.data().end());
      }
    } else if (l.kernel.kind == LayerKind::kAdd) {
      for (const auto& in : op.input_sites) q.multipliers.push_back(s_out / m.sites.at(in).scale);
    } else if (l.kernel.kind == LayerKind::kAvgPool) {
      const double window = static_cast<double>(l.kernel.pool) * static_cast<double>(l.kernel.pool);
      q.multipliers.push_back(s_out / (m.sites.at(op.input_sites[0]).scale * window));
    } else if (is_activation(l.kernel.kind)) {
      q.multipliers.push_back(s_out / m.sites.at(op.input_sites[0]).scale);
    } else {
      fail(ErrorCode::kUnsupportedKind, "layer '" + l.id + "' of kind " + std::string(layer_kind_name(l.kernel.kind)) +
                                            " cannot be compiled");
    }
    m.layers.push_back(std::move(q));
  }
  return m;
}

namespace {

// Integer codes minus the site zero point.
std::vector<std::int64_t> centered(const IntTensor& q, std::int32_t zp) {
  std::vector<std::int64_t> out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = static_cast<std::int64_t>(q[i]) - zp;
  return out;
}

void check_acc(std::int64_t acc, const std::string& id) {
  if (acc > kInt32Max || acc < -kInt32Max) {
    fail(ErrorCode::kAccumulatorOverflow, "accumulator " + std::to_string(acc) + " in layer '" + id +
                                              "' exceeds the int32 range");
  }
}

struct Requantizer {
  const SiteQuant& out;
  std::optional<LayerKind> activation;

  std::int32_t operator()(double v) const {
    if (activation) {
      v = std::max(v, 0.0);
      if (*activation == LayerKind::kReLU6) v = std::min(v, out.scale * kReLU6Saturation);
    }
    const double q = std::clamp(std::round(v) + static_cast<double>(out.zero_point), static_cast<double>(out.qmin),
                                static_cast<double>(out.qmax));
    return static_cast<std::int32_t>(q);
  }
};

IntTensor run_compute(const QuantizedLayer& l, const IntTensor& x, const SiteQuant& in, const SiteQuant& out_site) {
  const Requantizer requant{out_site, l.activation};
  const std::vector<std::int64_t> xc = centered(x, in.zero_point);
  std::vector<std::int64_t> wc(l.weights.size());
  const std::int64_t out_ch = l.weight_shape[0];
  const std::size_t per = l.weights.size() / static_cast<std::size_t>(out_ch);
  for (std::size_t i = 0; i < wc.size(); ++i) wc[i] = static_cast<std::int64_t>(l.weights[i]) - l.weight_zero_points[i / per];
  auto bias = [&](std::int64_t o) -> std::int64_t { return l.bias.empty() ? 0 : l.bias[static_cast<std::size_t>(o)]; };

  if (l.kernel.kind == LayerKind::kFullyConnected) {
    const std::int64_t n = x.dim(0);
    const std::int64_t f = static_cast<std::int64_t>(x.size()) / n;
    if (f != l.weight_shape[1]) fail(ErrorCode::kShapeMismatch, "FC '" + l.id + "' expects " + std::to_string(l.weight_shape[1]) + " features");
    IntTensor y({n, out_ch}, DType::kInt8Range);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t o = 0; o < out_ch; ++o) {
        std::int64_t acc = 0;
        const std::int64_t* xr = xc.data() + i * f;
        const std::int64_t* wr = wc.data() + o * f;
        for (std::int64_t k = 0; k < f; ++k) acc += xr[k] * wr[k];
        acc += bias(o);
        check_acc(acc, l.id);
        y[static_cast<std::size_t>(i * out_ch + o)] = requant(l.multipliers[static_cast<std::size_t>(o)] * static_cast<double>(acc));
      }
    return y;
  }

  const Shape in_shapes[] = {x.shape()};
  const Tensor w_shape_only(l.weight_shape, 0.0);
  const Shape ys = output_shape(l.kernel, in_shapes, &w_shape_only);
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t ho = ys[2], wo = ys[3];
  const std::int64_t kh = l.weight_shape[2], kw = l.weight_shape[3];
  const std::int64_t groups = l.kernel.kind == LayerKind::kDWSConv2D ? c : l.kernel.groups;
  const std::int64_t cg = c / groups, og = out_ch / groups;
  const std::int64_t stride = l.kernel.stride, pad = l.kernel.padding;
  IntTensor y(ys, DType::kInt8Range);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < out_ch; ++o) {
      const std::int64_t grp = o / og;
      const double mult = l.multipliers[static_cast<std::size_t>(o)];
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          std::int64_t acc = 0;
          for (std::int64_t ci = 0; ci < cg; ++ci) {
            const std::int64_t ch = grp * cg + ci;
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              const std::int64_t iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= w) continue;
                acc += xc[static_cast<std::size_t>(((b * c + ch) * h + iy) * w + ix)] *
                       wc[static_cast<std::size_t>(((o * cg + ci) * kh + ky) * kw + kx)];
              }
            }
          }
          acc += bias(o);
          check_acc(acc, l.id);
          y[static_cast<std::size_t>(((b * out_ch + o) * ho + oy) * wo + ox)] = requant(mult * static_cast<double>(acc));
        }
    }
  return y;
}

IntTensor run_pool(const QuantizedLayer& l, const IntTensor& x, const SiteQuant& in, const SiteQuant& out_site) {
  const Requantizer requant{out_site, l.activation};
  const Shape in_shapes[] = {x.shape()};
  const Shape ys = output_shape(l.kernel, in_shapes, nullptr);
  const std::int64_t h = x.dim(2), w = x.dim(3), ho = ys[2], wo = ys[3];
  const std::int64_t k = l.kernel.pool, s = l.kernel.stride;
  IntTensor y(ys, DType::kInt8Range);
  for (std::int64_t p = 0; p < ys[0] * ys[1]; ++p)
    for (std::int64_t oy = 0; oy < ho; ++oy)
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        std::int64_t acc = 0;
        for (std::int64_t ky = 0; ky < k; ++ky)
          for (std::int64_t kx = 0; kx < k; ++kx) {
            acc += static_cast<std::int64_t>(x[static_cast<std::size_t>((p * h + oy * s + ky) * w + ox * s + kx)]) -
                   in.zero_point;
          }
        check_acc(acc, l.id);
        y[static_cast<std::size_t>((p * ho + oy) * wo + ox)] = requant(l.multipliers[0] * static_cast<double>(acc));
      }
  return y;
}

Int8Trace run(const QuantizedModel& m, const Tensor& input) {
  Shape expected{0};
  expected.insert(expected.end(), m.input_shape.begin(), m.input_shape.end());
  if (input.rank() != expected.size() || !std::equal(m.input_shape.begin(), m.input_shape.end(), input.shape().begin() + 1)) {
    fail(ErrorCode::kShapeMismatch, "input " + shape_to_string(input.shape()) + " does not match model input " +
                                        shape_to_string(m.input_shape));
  }
  Int8Trace t;
  const SiteQuant& in_q = m.sites.at(m.input_site);
  IntTensor q0(input.shape(), DType::kInt8Range);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double v = input[i];
    if (!std::isfinite(v)) fail(ErrorCode::kNonFiniteInput, "run_int8: non-finite input");
    q0[i] = static_cast<std::int32_t>(std::clamp(std::round(in_q.scale * v) + in_q.zero_point, static_cast<double>(in_q.qmin),
                                                 static_cast<double>(in_q.qmax)));
  }
  t.codes.emplace(m.input_site, std::move(q0));

  for (const auto& l : m.layers) {
    const SiteQuant& out = m.sites.at(l.output);
    const IntTensor& x = t.codes.at(l.inputs.at(0));
    const SiteQuant& in = m.sites.at(l.inputs[0]);
    IntTensor y;
    switch (l.kernel.kind) {
      case LayerKind::kConv2D:
      case LayerKind::kDWSConv2D:
      case LayerKind::kFullyConnected: y = run_compute(l, x, in, out); break;
      case LayerKind::kAvgPool: y = run_pool(l, x, in, out); break;
      case LayerKind::kAdd: {
        const IntTensor& x2 = t.codes.at(l.inputs.at(1));
        const SiteQuant& in2 = m.sites.at(l.inputs[1]);
        expect_same_shape(x.shape(), x2.shape(), "Add operands");
        const Requantizer requant{out, l.activation};
        y = IntTensor(x.shape(), DType::kInt8Range);
        for (std::size_t i = 0; i < x.size(); ++i) {
          y[i] = requant(l.multipliers[0] * static_cast<double>(x[i] - in.zero_point) +
                         l.multipliers[1] * static_cast<double>(x2[i] - in2.zero_point));
        }
        break;
      }
      case LayerKind::kReLU:
      case LayerKind::kReLU6: {
        const Requantizer requant{out, l.kernel.kind};
        y = IntTensor(x.shape(), DType::kInt8Range);
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = requant(l.multipliers[0] * static_cast<double>(x[i] - in.zero_point));
        break;
      }
      default:
        fail(ErrorCode::kUnsupportedKind, "cannot execute layer '" + l.id + "'");
    }
    t.codes.insert_or_assign(l.output, std::move(y));
  }

  const IntTensor& z = t.codes.at(m.output_site);
  const SiteQuant& zq = m.sites.at(m.output_site);
  t.logits = Tensor(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    t.logits[i] = (static_cast<double>(z[i]) - static_cast<double>(zq.zero_point)) / zq.scale;
  }
  return t;
}

// Little-endian blob writer/reader with 8-byte alignment.
class BlobWriter {
 public:
  template <typename T>
  nlohmann::json put(std::span<const T> values) {
    while (bytes_.size() % 8) bytes_.push_back(0);
    const std::size_t offset = bytes_.size();
    for (const T& v : values) {
      using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
                                   std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
      const U u = std::bit_cast<U>(v);
      for (std::size_t b = 0; b < sizeof(T); ++b) bytes_.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
    }
    return {{"offset", offset}, {"count", values.size()}};
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

template <typename T>
std::vector<T> get_blob(std::span<const std::uint8_t> blobs, const nlohmann::json& ref) {
  const auto offset = ref.at("offset").get<std::size_t>();
  const auto count = ref.at("count").get<std::size_t>();
  if (offset % 8 || offset > blobs.size() || count > (blobs.size() - offset) / sizeof(T)) {
    fail(ErrorCode::kCorrupt, "blob reference outside the data section");
  }
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
  std::vector<T> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    U u = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) u |= static_cast<U>(static_cast<U>(blobs[offset + i * sizeof(T) + b]) << (8 * b));
    out[i] = std::bit_cast<T>(u);
  }
  return out;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(in[at + static_cast<std::size_t>(b)]) << (8 * b);
  return v;
}

constexpr char kMagic[4] = {'F', 'A', 'T', 'Q'};

}  // namespace

Tensor run_int8(const QuantizedModel& m, const Tensor& input) { return run(m, input).logits; }

Int8Trace run_int8_traced(const QuantizedModel& m, const Tensor& input) { return run(m, input); }

std::vector<std::uint8_t> export_model(const QuantizedModel& m) {
  BlobWriter blobs;
  nlohmann::json j;
  j["input_shape"] = m.input_shape;
  j["input_site"] = m.input_site;
  j["output_site"] = m.output_site;
  j["metadata"] = m.metadata;
  j["sites"] = nlohmann::json::object();
  for (const auto& [id, s] : m.sites) {
    j["sites"][id] = {{"scale", blobs.put(std::span<const double>(&s.scale, 1))},
                      {"zero_point", s.zero_point},
                      {"qmin", s.qmin},
                      {"qmax", s.qmax}};
  }
  j["layers"] = nlohmann::json::array();
  for (const auto& l : m.layers) {
    nlohmann::json e{{"id", l.id},
                     {"kind", std::string(layer_kind_name(l.kernel.kind))},
                     {"stride", l.kernel.stride},
                     {"padding", l.kernel.padding},
                     {"groups", l.kernel.groups},
                     {"pool", l.kernel.pool},
                     {"activation", l.activation ? std::string(layer_kind_name(*l.activation)) : std::string()},
                     {"inputs", l.inputs},
                     {"output", l.output},
                     {"weight_shape", l.weight_shape},
                     {"weights", blobs.put(std::span<const std::int8_t>(l.weights))},
                     {"weight_zero_points", blobs.put(std::span<const std::int32_t>(l.weight_zero_points))},
                     {"bias", blobs.put(std::span<const std::int32_t>(l.bias))},
                     {"multipliers", blobs.put(std::span<const double>(l.multipliers))}};
    j["layers"].push_back(std::move(e));
  }
  const std::string manifest = j.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kEngineFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out.insert(out.end(), manifest.begin(), manifest.end());
  while (out.size() % 8) out.push_back(0);
  out.insert(out.end(), blobs.bytes().begin(), blobs.bytes().end());
  return out;
}

QuantizedModel import_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    fail(ErrorCode::kCorrupt, "not a FATQ stream (missing magic or header)");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kEngineFormatVersion) {
    fail(ErrorCode::kBadVersion, "unsupported FATQ version " + std::to_string(version));
  }
  const std::size_t len = get_u32(bytes, 8);
  if (len > bytes.size() - 12) fail(ErrorCode::kCorrupt, "FATQ manifest truncated");
  std::size_t data_start = 12 + len;
  data_start += (8 - data_start % 8) % 8;
  if (data_start > bytes.size()) fail(ErrorCode::kCorrupt, "FATQ data section truncated");
  const auto blobs = bytes.subspan(data_start);
  try {
    const auto j = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(len));
    QuantizedModel m;
    m.input_shape = j.at("input_shape").get<Shape>();
    m.input_site = j.at("input_site").get<std::string>();
    m.output_site = j.at("output_site").get<std::string>();
    m.metadata = j.at("metadata").get<std::string>();
    for (const auto& [id, s] : j.at("sites").items()) {
      const auto scale = get_blob<double>(blobs, s.at("scale"));
      if (scale.size() != 1) fail(ErrorCode::kCorrupt, "site scale blob must hold one value");
      m.sites[id] = {scale[0], s.at("zero_point").get<std::int32_t>(), s.at("qmin").get<std::int32_t>(),
                     s.at("qmax").get<std::int32_t>()};
    }
    for (const auto& e : j.at("layers")) {
      QuantizedLayer l;
      l.id = e.at("id").get<std::string>();
      l.kernel.kind = parse_layer_kind(e.at("kind").get<std::string>());
      l.kernel.stride = e.at("stride").get<int>();
      l.kernel.padding = e.at("padding").get<int>();
      l.kernel.groups = e.at("groups").get<int>();
      l.kernel.pool = e.at("pool").get<int>();
      const auto act = e.at("activation").get<std::string>();
      if (!act.empty()) l.activation = parse_layer_kind(act);
      l.inputs = e.at("inputs").get<std::vector<std::string>>();
      l.output = e.at("output").get<std::string>();
      l.weight_shape = e.at("weight_shape").get<Shape>();
      l.weights = get_blob<std::int8_t>(blobs, e.at("weights"));
      l.weight_zero_points = get_blob<std::int32_t>(blobs, e.at("weight_zero_points"));
      l.bias = get_blob<std::int32_t>(blobs, e.at("bias"));
      l.multipliers = get_blob<double>(blobs, e.at("multipliers"));
      for (const auto& in : l.inputs)
        if (!m.sites.count(in)) fail(ErrorCode::kCorrupt, "layer '" + l.id + "' reads unknown site '" + in + "'");
      if (!m.sites.count(l.output)) fail(ErrorCode::kCorrupt, "layer '" + l.id + "' writes unknown site");
      if (is_compute(l.kernel.kind)) {
        if (l.weight_shape.size() < 2 || static_cast<std::int64_t>(l.weights.size()) != num_elements(l.weight_shape) ||
            static_cast<std::int64_t>(l.weight_zero_points.size()) != l.weight_shape[0] ||
            l.multipliers.size() != l.weight_zero_points.size() ||
            (!l.bias.empty() && l.bias.size() != l.weight_zero_points.size())) {
          fail(ErrorCode::kCorrupt, "inconsistent tensors for layer '" + l.id + "'");
        }
      } else if (l.multipliers.size() != (l.kernel.kind == LayerKind::kAdd ? 2u : 1u)) {
        fail(ErrorCode::kCorrupt, "inconsistent multipliers for layer '" + l.id + "'");
      }
      m.layers.push_back(std::move(l));
    }
    if (!m.sites.count(m.input_site) || !m.sites.count(m.output_site)) fail(ErrorCode::kCorrupt, "unknown input/output site");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorrupt, std::string("FATQ manifest: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCorrupt) throw;
    fail(ErrorCode::kCorrupt, e.what());
  }
}

void save_quantized(const QuantizedModel& m, const std::filesystem::path& path) {
  const auto bytes = export_model(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "short write to " + path.string());
}

QuantizedModel load_quantized(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return import_model(bytes);
}

}  // namespace fatq
