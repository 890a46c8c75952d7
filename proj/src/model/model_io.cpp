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

#include "fatq/model_io.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "fatq/rng.hpp"

namespace fatq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<unsigned char> read_file(const fs::path& path, ErrorCode missing) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(missing, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) fail(ErrorCode::kIo, "short write to '" + path.string() + "'");
}

template <typename T>
T byteswap_value(T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  std::reverse(b, b + sizeof(T));
  std::memcpy(&v, b, sizeof(T));
  return v;
}

std::vector<unsigned char> encode_f64_le(std::span<const double> values) {
  std::vector<unsigned char> out(values.size() * sizeof(double));
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = values[i];
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    std::memcpy(out.data() + i * sizeof(double), &v, sizeof(double));
  }
  return out;
}

std::string blob_name(std::size_t index, const std::string& id, const char* suffix) {
  std::string clean;
  for (char c : id) clean += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') ? c : '_';
  char prefix[16];
  std::snprintf(prefix, sizeof(prefix), "%03zu_", index);
  return prefix + clean + suffix;
}

json kernel_params(const LayerKernel& k) {
  json p = json::object();
  switch (k.kind) {
    case LayerKind::kConv2D:
      p["groups"] = k.groups;
      [[fallthrough]];
    case LayerKind::kDWSConv2D:
      p["stride"] = k.stride;
      p["padding"] = k.padding;
      break;
    case LayerKind::kAvgPool:
      p["pool"] = k.pool;
      p["stride"] = k.stride;
      break;
    case LayerKind::kBatchNorm:
      p["eps"] = k.eps;
      break;
    default:
      break;
  }
  return p;
}

LayerKernel parse_kernel(const std::string& kind, const json& p) {
  LayerKernel k;
  k.kind = parse_layer_kind(kind);
  k.stride = p.value("stride", 1);
  k.padding = p.value("padding", 0);
  k.groups = p.value("groups", 1);
  k.pool = p.value("pool", 2);
  k.eps = p.value("eps", 1e-5);
  if (k.kind == LayerKind::kAvgPool && !p.contains("stride")) k.stride = k.pool;
  if (k.kind == LayerKind::kBatchNorm && !(k.eps > 0.0)) fail(ErrorCode::kParseError, "BatchNorm eps must be > 0");
  return k;
}

Tensor load_blob(const fs::path& dir, const json& name, const json& shape_json, const std::string& id) {
  if (!name.is_string() || !shape_json.is_array()) fail(ErrorCode::kParseError, "layer '" + id + "': bad blob entry");
  const fs::path path = dir / name.get<std::string>();
  if (!fs::exists(path)) fail(ErrorCode::kDanglingRef, "layer '" + id + "' references missing blob '" + path.string() + "'");
  Shape shape = shape_json.get<Shape>();
  const auto bytes = read_file(path, ErrorCode::kDanglingRef);
  const auto expected = static_cast<std::size_t>(num_elements(shape)) * sizeof(double);
  if (bytes.size() != expected) {
    fail(ErrorCode::kBlobSizeMismatch, "blob '" + path.string() + "' has " + std::to_string(bytes.size()) +
                                           " bytes, shape " + shape_to_string(shape) + " needs " +
                                           std::to_string(expected));
  }
  std::vector<double> data(expected / sizeof(double));
  for (std::size_t i = 0; i < data.size(); ++i) {
    double v;
    std::memcpy(&v, bytes.data() + i * sizeof(double), sizeof(double));
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    data[i] = v;
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

Graph load_model(const fs::path& manifest_path) {
  const auto bytes = read_file(manifest_path, ErrorCode::kIo);
  json m;
  try {
    m = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, "manifest '" + manifest_path.string() + "': " + e.what());
  }
  const fs::path dir = manifest_path.parent_path();
  Graph g;
  try {
    if (m.at("version").get<int>() != kManifestVersion) {
      fail(ErrorCode::kParseError, "unsupported manifest version " + m.at("version").dump());
    }
    g.input_id = m.at("input_id").get<std::string>();
    g.output_id = m.at("output_id").get<std::string>();
    g.input_shape = m.at("input_shape").get<Shape>();
    for (const auto& jl : m.at("layers")) {
      Layer l;
      l.id = jl.at("id").get<std::string>();
      l.kernel = parse_kernel(jl.at("kind").get<std::string>(), jl.value("params", json::object()));
      l.inputs = jl.at("inputs").get<std::vector<std::string>>();
      if (jl.contains("weights") && !jl["weights"].is_null()) {
        l.weights = load_blob(dir, jl["weights"], jl.value("weights_shape", json()), l.id);
      }
      if (jl.contains("bias") && !jl["bias"].is_null()) {
        l.bias = load_blob(dir, jl["bias"], jl.value("bias_shape", json()), l.id);
      }
      g.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, "manifest '" + manifest_path.string() + "': " + e.what());
  }
  validate(g);
  return g;
}

void save_model(const Graph& g, const fs::path& dir, const std::string& config_hash) {
  validate(g);
  fs::create_directories(dir);
  json m;
  m["version"] = kManifestVersion;
  m["input_id"] = g.input_id;
  m["output_id"] = g.output_id;
  m["input_shape"] = g.input_shape;
  if (!config_hash.empty()) m["config_hash"] = config_hash;
  json layers = json::array();
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const Layer& l = g.layers[i];
    json jl;
    jl["id"] = l.id;
    jl["kind"] = std::string(layer_kind_name(l.kernel.kind));
    jl["params"] = kernel_params(l.kernel);
    jl["inputs"] = l.inputs;
    jl["weights"] = nullptr;
    jl["bias"] = nullptr;
    if (l.weights) {
      const auto name = blob_name(i, l.id, ".weights.f64");
      const auto bytes = encode_f64_le(l.weights->data());
      write_file(dir / name, bytes.data(), bytes.size());
      jl["weights"] = name;
      jl["weights_shape"] = l.weights->shape();
    }
    if (l.bias) {
      const auto name = blob_name(i, l.id, ".bias.f64");
      const auto bytes = encode_f64_le(l.bias->data());
      write_file(dir / name, bytes.data(), bytes.size());
      jl["bias"] = name;
      jl["bias_shape"] = l.bias->shape();
    }
    layers.push_back(std::move(jl));
  }
  m["layers"] = std::move(layers);
  const std::string text = m.dump(2) + "\n";
  write_file(dir / "manifest.json", text.data(), text.size());
}

namespace {

struct IdxHeader {
  int type;
  Shape dims;
  std::size_t payload_offset;
};

IdxHeader parse_idx_header(const std::vector<unsigned char>& b, const fs::path& path) {
  if (b.size() < 4) fail(ErrorCode::kTruncated, "'" + path.string() + "' shorter than an IDX header");
  if (b[0] != 0 || b[1] != 0) fail(ErrorCode::kBadMagic, "'" + path.string() + "' lacks the IDX magic");
  const int type = b[2];
  const int ndim = b[3];
  static const std::set<int> kTypes{0x08, 0x09, 0x0B, 0x0C, 0x0D, 0x0E};
  if (!kTypes.count(type)) fail(ErrorCode::kBadMagic, "'" + path.string() + "' has unknown IDX type code");
  if (ndim == 0) fail(ErrorCode::kBadMagic, "'" + path.string() + "' declares zero dimensions");
  if (b.size() < 4 + 4 * static_cast<std::size_t>(ndim)) fail(ErrorCode::kTruncated, "'" + path.string() + "' header truncated");
  IdxHeader h{type, {}, 4 + 4 * static_cast<std::size_t>(ndim)};
  for (int i = 0; i < ndim; ++i) {
    const unsigned char* p = b.data() + 4 + 4 * i;
    h.dims.push_back((std::int64_t{p[0]} << 24) | (std::int64_t{p[1]} << 16) | (std::int64_t{p[2]} << 8) | p[3]);
  }
  return h;
}

std::size_t idx_width(int type) {
  switch (type) {
    case 0x08: case 0x09: return 1;
    case 0x0B: return 2;
    case 0x0C: case 0x0D: return 4;
    default: return 8;
  }
}

std::vector<double> decode_idx(const std::vector<unsigned char>& b, const IdxHeader& h, const fs::path& path,
                               bool scale_bytes) {
  const auto n = static_cast<std::size_t>(num_elements(h.dims));
  const std::size_t width = idx_width(h.type);
  if (b.size() < h.payload_offset + n * width) {
    fail(ErrorCode::kTruncated, "'" + path.string() + "' payload shorter than declared dimensions");
  }
  std::vector<double> out(n);
  const unsigned char* p = b.data() + h.payload_offset;
  for (std::size_t i = 0; i < n; ++i, p += width) {
    std::uint64_t raw = 0;
    for (std::size_t k = 0; k < width; ++k) raw = (raw << 8) | p[k];
    switch (h.type) {
      case 0x08: out[i] = scale_bytes ? static_cast<double>(raw) / 255.0 : static_cast<double>(raw); break;
      case 0x09: out[i] = static_cast<std::int8_t>(raw); break;
      case 0x0B: out[i] = static_cast<std::int16_t>(raw); break;
      case 0x0C: out[i] = static_cast<std::int32_t>(raw); break;
      case 0x0D: {
        const auto bits = static_cast<std::uint32_t>(raw);
        float f;
        std::memcpy(&f, &bits, 4);
        out[i] = f;
        break;
      }
      default: {
        double d;
        std::memcpy(&d, &raw, 8);
        out[i] = d;
      }
    }
  }
  return out;
}

void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

}  // namespace

Tensor read_idx(const fs::path& path) {
  const auto bytes = read_file(path, ErrorCode::kIo);
  const auto h = parse_idx_header(bytes, path);
  auto data = decode_idx(bytes, h, path, true);
  Shape shape = h.dims;
  if (shape.size() == 3) shape.insert(shape.begin() + 1, 1);
  return Tensor(std::move(shape), std::move(data));
}

std::vector<int> read_idx_labels(const fs::path& path) {
  const auto bytes = read_file(path, ErrorCode::kIo);
  const auto h = parse_idx_header(bytes, path);
  if (h.dims.size() != 1) fail(ErrorCode::kParseError, "'" + path.string() + "' is not a 1-d label file");
  const auto raw = decode_idx(bytes, h, path, false);
  std::vector<int> labels(raw.size());
  std::transform(raw.begin(), raw.end(), labels.begin(), [](double v) { return static_cast<int>(v); });
  return labels;
}

void write_idx_images(const fs::path& path, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 1) fail(ErrorCode::kShapeMismatch, "IDX images must be [N, 1, H, W]");
  std::vector<unsigned char> out{0, 0, 0x08, 3};
  put_u32_be(out, static_cast<std::uint32_t>(images.dim(0)));
  put_u32_be(out, static_cast<std::uint32_t>(images.dim(2)));
  put_u32_be(out, static_cast<std::uint32_t>(images.dim(3)));
  for (double v : images.data()) {
    out.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  write_file(path, out.data(), out.size());
}

void write_idx_labels(const fs::path& path, const std::vector<int>& labels) {
  std::vector<unsigned char> out{0, 0, 0x08, 1};
  put_u32_be(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) fail(ErrorCode::kInvalidArgument, "label out of ubyte range");
    out.push_back(static_cast<unsigned char>(l));
  }
  write_file(path, out.data(), out.size());
}

Dataset load_dataset(const fs::path& images, const std::optional<fs::path>& labels) {
  Dataset ds;
  ds.images = read_idx(images);
  if (ds.images.rank() != 4) fail(ErrorCode::kShapeMismatch, "image file must decode to [N, C, H, W]");
  for (double v : ds.images.data())
    if (!std::isfinite(v)) fail(ErrorCode::kNonFiniteInput, "non-finite pixel in '" + images.string() + "'");
  if (labels) {
    ds.labels = read_idx_labels(*labels);
    if (static_cast<std::int64_t>(ds.labels->size()) != ds.size()) {
      fail(ErrorCode::kShapeMismatch, "label count does not match image count");
    }
    for (int l : *ds.labels)
      if (l < 0) fail(ErrorCode::kParseError, "negative label");
  }
  return ds;
}

Dataset take(const Dataset& ds, const std::vector<std::int64_t>& indices) {
  Shape s = ds.images.shape();
  const std::int64_t row = ds.size() ? static_cast<std::int64_t>(ds.images.size()) / ds.size() : 0;
  s[0] = static_cast<std::int64_t>(indices.size());
  std::vector<double> data;
  data.reserve(indices.size() * static_cast<std::size_t>(row));
  std::optional<std::vector<int>> labels;
  if (ds.labels) labels.emplace();
  for (auto i : indices) {
    if (i < 0 || i >= ds.size()) fail(ErrorCode::kInvalidArgument, "index out of range");
    auto first = ds.images.data().begin() + i * row;
    data.insert(data.end(), first, first + row);
    if (labels) labels->push_back((*ds.labels)[static_cast<std::size_t>(i)]);
  }
  return {Tensor(std::move(s), std::move(data)), std::move(labels)};
}

namespace {

std::vector<std::int64_t> sample_indices(std::int64_t n, std::int64_t k, std::uint64_t seed) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first k slots are the sample.
  for (std::int64_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace

Dataset select_calibration(const Dataset& ds, std::int64_t k, std::uint64_t seed) {
  if (k < 1) fail(ErrorCode::kInvalidArgument, "calibration size must be positive");
  if (k > ds.size()) {
    fail(ErrorCode::kKTooLarge, "calibration size " + std::to_string(k) + " exceeds dataset size " +
                                    std::to_string(ds.size()));
  }
  Dataset out = take(ds, sample_indices(ds.size(), k, seed));
  out.labels.reset();
  return out;
}

Dataset select_fraction(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) fail(ErrorCode::kInvalidArgument, "fraction must be in (0, 1]");
  const auto k = std::max<std::int64_t>(1, std::llround(fraction * static_cast<double>(ds.size())));
  return take(ds, sample_indices(ds.size(), std::min(k, ds.size()), seed));
}

}  // namespace fatq
