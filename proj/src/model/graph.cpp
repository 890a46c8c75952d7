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

#include "fatq/graph.hpp"

#include <algorithm>
#include <set>

namespace fatq {

const Layer* Graph::find(const std::string& id) const {
  for (const auto& l : layers)
    if (l.id == id) return &l;
  return nullptr;
}

const Layer& Graph::layer(const std::string& id) const {
  if (const Layer* l = find(id)) return *l;
  fail(ErrorCode::kDanglingRef, "no layer '" + id + "'");
}

Layer& Graph::layer(const std::string& id) {
  return const_cast<Layer&>(static_cast<const Graph&>(*this).layer(id));
}

std::size_t Graph::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].id == id) return i;
  fail(ErrorCode::kDanglingRef, "no layer '" + id + "'");
}

std::vector<std::string> Graph::consumers(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& l : layers)
    if (std::find(l.inputs.begin(), l.inputs.end(), id) != l.inputs.end()) out.push_back(l.id);
  return out;
}

std::string Graph::logits_id() const {
  const Layer& out = layer(output_id);
  if (out.kernel.kind == LayerKind::kSoftmax) return out.inputs.at(0);
  return output_id;
}

void validate(const Graph& g) {
  if (g.layers.empty()) fail(ErrorCode::kParseError, "graph has no layers");
  std::set<std::string> defined{g.input_id};
  std::set<std::string> all_ids;
  for (const auto& l : g.layers) all_ids.insert(l.id);
  std::map<std::string, Shape> shapes;
  Shape in_shape{1};
  in_shape.insert(in_shape.end(), g.input_shape.begin(), g.input_shape.end());
  shapes[g.input_id] = in_shape;
  for (const auto& l : g.layers) {
    if (l.id.empty() || l.id == g.input_id) fail(ErrorCode::kParseError, "invalid layer id '" + l.id + "'");
    if (defined.count(l.id)) fail(ErrorCode::kParseError, "duplicate layer id '" + l.id + "'");
    const std::size_t arity = l.kernel.kind == LayerKind::kAdd ? 2 : 1;
    if (l.inputs.size() != arity) {
      fail(ErrorCode::kShapeMismatch, "layer '" + l.id + "' expects " + std::to_string(arity) + " input(s)");
    }
    std::vector<Shape> ins;
    for (const auto& ref : l.inputs) {
      if (!defined.count(ref)) {
        if (all_ids.count(ref)) {
          fail(ErrorCode::kCyclicGraph, "layer '" + l.id + "' reads '" + ref + "' before it is defined");
        }
        fail(ErrorCode::kDanglingRef, "layer '" + l.id + "' reads unknown id '" + ref + "'");
      }
      ins.push_back(shapes.at(ref));
    }
    if (has_weights(l.kernel.kind) && !l.weights) {
      fail(ErrorCode::kDanglingRef, "layer '" + l.id + "' has no weights");
    }
    if (!g.input_shape.empty()) {
      shapes[l.id] = output_shape(l.kernel, ins, l.weights ? &*l.weights : nullptr);
    } else {
      shapes[l.id] = {};
    }
    defined.insert(l.id);
  }
  if (!defined.count(g.output_id) || g.output_id == g.input_id) {
    fail(ErrorCode::kDanglingRef, "output id '" + g.output_id + "' is not a layer");
  }
}

Activations run_float_all(const Graph& g, const Tensor& input) {
  Activations acts;
  acts.emplace(g.input_id, input);
  std::vector<const Tensor*> refs;
  for (const auto& l : g.layers) {
    refs.clear();
    for (const auto& in : l.inputs) {
      auto it = acts.find(in);
      if (it == acts.end()) fail(ErrorCode::kDanglingRef, "layer '" + l.id + "' reads unknown id '" + in + "'");
      refs.push_back(&it->second);
    }
    acts.insert_or_assign(l.id, forward(l.kernel, refs, l.weights ? &*l.weights : nullptr,
                                        l.bias ? &*l.bias : nullptr));
  }
  return acts;
}

Tensor run_float(const Graph& g, const Tensor& input) {
  // Drop intermediates as soon as their last consumer ran.
  std::map<std::string, std::size_t> last_use;
  for (std::size_t i = 0; i < g.layers.size(); ++i)
    for (const auto& in : g.layers[i].inputs) last_use[in] = i;
  const std::string logits = g.logits_id();
  std::map<std::string, Tensor> live;
  live.emplace(g.input_id, input);
  std::vector<const Tensor*> refs;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    refs.clear();
    for (const auto& in : l.inputs) {
      auto it = live.find(in);
      if (it == live.end()) fail(ErrorCode::kDanglingRef, "layer '" + l.id + "' reads unknown id '" + in + "'");
      refs.push_back(&it->second);
    }
    Tensor y = forward(l.kernel, refs, l.weights ? &*l.weights : nullptr, l.bias ? &*l.bias : nullptr);
    if (l.id == logits) return y;
    for (const auto& in : l.inputs)
      if (last_use[in] == i) live.erase(in);
    live.insert_or_assign(l.id, std::move(y));
  }
  fail(ErrorCode::kDanglingRef, "logits layer '" + logits + "' never produced");
}

Tensor batch_slice(const Tensor& t, std::int64_t begin, std::int64_t end) {
  if (t.rank() == 0 || begin < 0 || end > t.dim(0) || begin > end) {
    fail(ErrorCode::kInvalidArgument, "bad batch slice");
  }
  Shape s = t.shape();
  const std::int64_t row = s[0] == 0 ? 0 : num_elements(s) / s[0];
  s[0] = end - begin;
  std::vector<double> data(t.data().begin() + begin * row, t.data().begin() + end * row);
  return Tensor(std::move(s), std::move(data));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::int64_t n = logits.dim(0);
  const std::int64_t f = n == 0 ? 0 : static_cast<std::int64_t>(logits.size()) / n;
  std::vector<int> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto row = logits.data().subspan(static_cast<std::size_t>(i * f), static_cast<std::size_t>(f));
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace fatq
