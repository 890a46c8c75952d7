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

#include "fatq/simulator.hpp"

#include <algorithm>

namespace fatq {

PointwiseScales identity_pointwise_scales(const Graph& g) {
  PointwiseScales out;
  for (const auto& l : g.layers) {
    if (!is_compute(l.kernel.kind)) continue;
    PointwiseScale s{Tensor(l.weights->shape(), 1.0), std::nullopt};
    if (l.bias) s.bias = Tensor(l.bias->shape(), 1.0);
    out.emplace(l.id, std::move(s));
  }
  return out;
}

namespace {

Tensor clip_tensor(const Tensor& t, const ClipRange& r) {
  Tensor out = t;
  for (auto& v : out.storage()) v = r.clip(v);
  return out;
}

Tensor scaled(const Tensor& t, const Tensor& s) {
  expect_same_shape(t.shape(), s.shape(), "pointwise scale");
  Tensor out = t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= kPointwiseRange.clip(s[i]);
  return out;
}

// d loss / d s for y = t * clip(s): zero where s sits outside the clip range.
Tensor scale_grad(const Tensor& grad_y, const Tensor& t, const Tensor& s) {
  Tensor out(s.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = kPointwiseRange.contains(s[i]) ? grad_y[i] * t[i] : 0.0;
  }
  return out;
}

void accumulate(std::map<std::string, Tensor>& grads, const std::string& site, Tensor g) {
  auto [it, inserted] = grads.try_emplace(site, std::move(g));
  if (inserted) return;
  for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
}

void add_site_grad(SimGrads& out, const std::string& site, const SteGrads& g) {
  out.sites[site] = {g.grad_alpha, g.grad_alpha_t, g.grad_alpha_r};
}

}  // namespace

PointwiseScales clipped(const PointwiseScales& scales) {
  PointwiseScales out;
  for (const auto& [id, s] : scales) {
    PointwiseScale c{clip_tensor(s.weights, kPointwiseRange), std::nullopt};
    if (s.bias) c.bias = clip_tensor(*s.bias, kPointwiseRange);
    out.emplace(id, std::move(c));
  }
  return out;
}

Graph apply_pointwise_scales(const Graph& g, const PointwiseScales& scales) {
  Graph out = g;
  for (const auto& [id, s] : scales) {
    Layer& l = out.layer(id);
    if (!l.weights) fail(ErrorCode::kInvalidArgument, "pointwise scales given for weightless layer '" + id + "'");
    *l.weights = scaled(*l.weights, s.weights);
    if (s.bias) {
      if (!l.bias) fail(ErrorCode::kInvalidArgument, "pointwise bias scales given for bias-free layer '" + id + "'");
      *l.bias = scaled(*l.bias, *s.bias);
    }
  }
  return out;
}

nlohmann::json to_json(const PointwiseScales& scales) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, s] : scales) {
    const PointwiseScale c{clip_tensor(s.weights, kPointwiseRange),
                           s.bias ? std::optional<Tensor>(clip_tensor(*s.bias, kPointwiseRange)) : std::nullopt};
    nlohmann::json e{{"weights_shape", c.weights.shape()}, {"weights", c.weights.storage()}};
    if (c.bias) {
      e["bias_shape"] = c.bias->shape();
      e["bias"] = c.bias->storage();
    }
    j[id] = std::move(e);
  }
  return j;
}

PointwiseScales pointwise_scales_from_json(const nlohmann::json& j) {
  try {
    PointwiseScales out;
    for (const auto& [id, e] : j.items()) {
      PointwiseScale s{Tensor(e.at("weights_shape").get<Shape>(), e.at("weights").get<std::vector<double>>()),
                       std::nullopt};
      if (e.contains("bias")) s.bias = Tensor(e.at("bias_shape").get<Shape>(), e.at("bias").get<std::vector<double>>());
      out.emplace(id, std::move(s));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, std::string("pointwise scales: ") + e.what());
  }
}

QuantSimulator::QuantSimulator(const Graph& g, const SiteParams& params, const PointwiseScales* scales,
                               RoundMode mode)
    : g_(&g), params_(&params), scales_(scales), mode_(mode), plan_(build_plan(g)) {
  for (const auto& [site, sign] : plan_.activation_sites) this->site(site);
  for (const auto& id : plan_.weight_layers) this->site(QuantPlan::weight_site(id));
}

const QuantParams& QuantSimulator::site(const std::string& id) const {
  auto it = params_->find(id);
  if (it == params_->end()) fail(ErrorCode::kMissingSiteParams, "no quantization params for site '" + id + "'");
  return it->second;
}

Tensor QuantSimulator::forward(const Tensor& input) {
  values_.clear();
  tape_.assign(plan_.ops.size(), {});
  input_ = input;
  values_[plan_.input_site] = fake_quant_forward(input, site(plan_.input_site), mode_);

  for (std::size_t k = 0; k < plan_.ops.size(); ++k) {
    const QuantOp& op = plan_.ops[k];
    const Layer& l = g_->layer(op.layer_id);
    OpTape& t = tape_[k];
    std::vector<const Tensor*> ins;
    for (const auto& s : op.input_sites) ins.push_back(&values_.at(s));

    if (is_compute(op.kind)) {
      const QuantParams& pw = site(QuantPlan::weight_site(l.id));
      const PointwiseScale* ps = nullptr;
      if (scales_) {
        auto it = scales_->find(l.id);
        if (it != scales_->end()) ps = &it->second;
      }
      t.w_eff = ps ? scaled(*l.weights, ps->weights) : *l.weights;
      t.w_hat = fake_quant_forward(*t.w_eff, pw, mode_);
      if (l.bias) {
        t.b_eff = (ps && ps->bias) ? scaled(*l.bias, *ps->bias) : *l.bias;
        if (mode_ == RoundMode::kSurrogate) {
          t.b_hat = t.b_eff;
        } else {
          // Snap to the int32 grid the engine uses: step 1 / (S_in * S_w[c]).
          const double s_in = quant_grids(site(op.input_sites[0]))[0].scale;
          std::vector<double> s_w;
          for (const auto& grid : quant_grids(pw)) s_w.push_back(grid.scale);
          const IntTensor q = quantize_bias(*t.b_eff, s_in, s_w);
          Tensor b(q.shape());
          for (std::size_t i = 0; i < b.size(); ++i) {
            b[i] = q[i] / bias_scale(s_in, s_w[s_w.size() == 1 ? 0 : i]);
          }
          t.b_hat = std::move(b);
        }
      }
      t.pre_activation = fatq::forward(l.kernel, ins, &*t.w_hat, t.b_hat ? &*t.b_hat : nullptr);
    } else {
      t.pre_activation = fatq::forward(l.kernel, ins, nullptr, nullptr);
    }

    if (op.activation) {
      t.site_input = fatq::forward(LayerKernel{.kind = *op.activation}, t.pre_activation);
    } else {
      t.site_input = t.pre_activation;
    }
    values_[op.output_site] = fake_quant_forward(t.site_input, site(op.output_site), mode_);
  }
  return values_.at(plan_.logits_site);
}

SimGrads QuantSimulator::backward(const Tensor& grad_logits) const {
  if (tape_.empty() && !plan_.ops.empty()) fail(ErrorCode::kInvalidArgument, "backward called before forward");
  SimGrads out;
  std::map<std::string, Tensor> grads;
  expect_same_shape(grad_logits.shape(), values_.at(plan_.logits_site).shape(), "logits gradient");
  grads.emplace(plan_.logits_site, grad_logits);

  for (std::size_t k = plan_.ops.size(); k-- > 0;) {
    const QuantOp& op = plan_.ops[k];
    const Layer& l = g_->layer(op.layer_id);
    const OpTape& t = tape_[k];
    auto it = grads.find(op.output_site);
    Tensor gy = it != grads.end() ? std::move(it->second) : Tensor(t.site_input.shape(), 0.0);

    const SteGrads sg = ste_backward(gy, t.site_input, site(op.output_site), mode_);
    add_site_grad(out, op.output_site, sg);
    Tensor g_pre = op.activation
                       ? std::move(fatq::backward(LayerKernel{.kind = *op.activation}, t.pre_activation, nullptr, nullptr,
                                            sg.grad_x)
                                       .inputs[0])
                       : sg.grad_x;

    std::vector<const Tensor*> ins;
    for (const auto& s : op.input_sites) ins.push_back(&values_.at(s));
    LayerGrads lg = fatq::backward(l.kernel, ins, t.w_hat ? &*t.w_hat : nullptr, t.b_hat ? &*t.b_hat : nullptr, g_pre);

    if (is_compute(op.kind)) {
      const std::string wsite = QuantPlan::weight_site(l.id);
      const SteGrads wg = ste_backward(*lg.weights, *t.w_eff, site(wsite), mode_);
      add_site_grad(out, wsite, wg);
      if (scales_) {
        auto sit = scales_->find(l.id);
        if (sit != scales_->end()) {
          PointwiseScale gs{scale_grad(wg.grad_x, *l.weights, sit->second.weights), std::nullopt};
          if (sit->second.bias && lg.bias) gs.bias = scale_grad(*lg.bias, *l.bias, *sit->second.bias);
          out.scales.emplace(l.id, std::move(gs));
        }
      }
    }
    for (std::size_t i = 0; i < op.input_sites.size(); ++i) accumulate(grads, op.input_sites[i], std::move(lg.inputs[i]));
  }

  auto it = grads.find(plan_.input_site);
  const Tensor gin = it != grads.end() ? it->second : Tensor(input_.shape(), 0.0);
  add_site_grad(out, plan_.input_site, ste_backward(gin, input_, site(plan_.input_site), mode_));
  return out;
}

std::map<std::string, IntTensor> QuantSimulator::site_codes() const {
  std::map<std::string, IntTensor> out;
  if (values_.empty()) return out;
  out.emplace(plan_.input_site, quantize_tensor(input_, site(plan_.input_site)));
  for (std::size_t k = 0; k < plan_.ops.size(); ++k) {
    const QuantOp& op = plan_.ops[k];
    out.emplace(op.output_site, quantize_tensor(tape_[k].site_input, site(op.output_site)));
  }
  return out;
}

}  // namespace fatq
