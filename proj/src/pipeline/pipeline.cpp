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

#include "fatq/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <spdlog/spdlog.h>

#include "fatq/engine.hpp"
#include "fatq/float_train.hpp"
#include "fatq/simulator.hpp"
#include "fatq/synthetic_digits.hpp"
#include "fatq/toy_models.hpp"
#include "fatq/transforms.hpp"

namespace fatq {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view granularity_preset_name(GranularityPreset g) {
  switch (g) {
    case GranularityPreset::kScalar: return "scalar";
    case GranularityPreset::kVector: return "vector";
    case GranularityPreset::kMixed: return "mixed";
  }
  return "?";
}

GranularityPreset parse_granularity_preset(std::string_view name) {
  for (auto g : {GranularityPreset::kScalar, GranularityPreset::kVector, GranularityPreset::kMixed}) {
    if (granularity_preset_name(g) == name) return g;
  }
  fail(ErrorCode::kInvalidArgument, "unknown granularity '" + std::string(name) + "'");
}

QuantConfig make_quant_config(QuantMode mode, GranularityPreset granularity, int bits) {
  switch (granularity) {
    case GranularityPreset::kScalar: return QuantConfig::scalar(mode, bits);
    case GranularityPreset::kVector: return QuantConfig::vector(mode, bits);
    case GranularityPreset::kMixed: break;
  }
  QuantConfig c;
  c.bits = bits;
  c.mode = mode;
  return c;
}

PipelineConfig::PipelineConfig() {
  float_train.batch = 64;
  float_train.epochs = 4;
  float_train.lr = 3e-3;
  float_train.lr_min = 1e-5;
  float_train.groups = TrainGroups::kNone;
}

fs::path PipelineConfig::model_manifest() const {
  return model ? *model : workdir / artifacts::kModelDir / "manifest.json";
}

fs::path PipelineConfig::data_path() const { return data_dir ? *data_dir : workdir / artifacts::kDataDir; }

json to_json(const PipelineConfig& c) {
  return {{"mode", std::string(quant_mode_name(c.mode))},
          {"granularity", std::string(granularity_preset_name(c.granularity))},
          {"bits", c.bits},
          {"fold_bn", c.fold_bn},
          {"dws_rescale", c.dws_rescale},
          {"train", to_json(c.train)},
          {"float_train", to_json(c.float_train)},
          {"calib_size", c.calib_size},
          {"train_fraction", c.train_fraction},
          {"seed", c.seed},
          {"synth_train", c.synth_train},
          {"synth_test", c.synth_test},
          {"eval_limit", c.eval_limit}};
}

namespace {

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::kIo, "short write to " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
}

void require(const fs::path& path, const char* stage) {
  if (!fs::exists(path)) {
    fail(ErrorCode::kMissingPrerequisite,
         "missing '" + path.string() + "'; run `quantcli " + stage + "` first");
  }
}

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage) { return seed * 0x9E3779B97F4A7C15ull + stage; }

Dataset calibration_subset(const PipelineConfig& cfg, const Dataset& train) {
  return select_calibration(train, cfg.calib_size, stage_seed(cfg.seed, 3));
}

Graph load_transformed(const PipelineConfig& cfg) {
  const fs::path manifest = cfg.path(artifacts::kTransformedDir) / "manifest.json";
  require(manifest, "transform");
  return load_model(manifest);
}

struct LoadedParams {
  SiteParams params;
  std::optional<PointwiseScales> scales;
  std::string source;
};

// Fine-tuned params when they belong to the current calibration, else the
// calibration-only params.
LoadedParams load_params(const PipelineConfig& cfg, bool prefer_finetuned = true) {
  require(cfg.path(artifacts::kCalib), "calibrate");
  const std::string calib_text = read_text(cfg.path(artifacts::kCalib));
  if (prefer_finetuned && fs::exists(cfg.path(artifacts::kParams))) {
    const json p = read_json(cfg.path(artifacts::kParams));
    if (p.value("calib_hash", std::string()) == fnv1a_hex(calib_text)) {
      LoadedParams out{site_params_from_json(p.at("params")), std::nullopt, "finetuned"};
      if (p.contains("pointwise_scales") && !p["pointwise_scales"].is_null()) {
        out.scales = pointwise_scales_from_json(p["pointwise_scales"]);
      }
      return out;
    }
    spdlog::warn("{} was produced from a different calibration; using calibration-only params",
                 cfg.path(artifacts::kParams).string());
  }
  try {
    return {site_params_from_json(json::parse(calib_text).at("params")), std::nullopt, "calibrated"};
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, std::string("calib.json: ") + e.what());
  }
}

json path_report(double acc, bool labeled, double rmse) {
  json j{{"rmse", rmse}};
  j["accuracy"] = labeled ? json(acc) : json(nullptr);
  return j;
}

}  // namespace

std::string config_hash(const PipelineConfig& cfg) { return fnv1a_hex(to_json(cfg).dump()); }

Dataset load_train_set(const PipelineConfig& cfg) {
  const fs::path dir = cfg.data_path();
  require(dir / artifacts::kTrainImages, "synth-data");
  const fs::path labels = dir / artifacts::kTrainLabels;
  return load_dataset(dir / artifacts::kTrainImages, fs::exists(labels) ? std::optional(labels) : std::nullopt);
}

Dataset load_test_set(const PipelineConfig& cfg) {
  const fs::path dir = cfg.data_path();
  require(dir / artifacts::kTestImages, "synth-data");
  const fs::path labels = dir / artifacts::kTestLabels;
  Dataset ds = load_dataset(dir / artifacts::kTestImages, fs::exists(labels) ? std::optional(labels) : std::nullopt);
  if (cfg.eval_limit > 0 && cfg.eval_limit < ds.size()) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(cfg.eval_limit));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
    ds = take(ds, idx);
  }
  return ds;
}

void cmd_synth_data(const PipelineConfig& cfg) {
  const fs::path dir = cfg.data_path();
  fs::create_directories(dir);
  const Dataset train = make_synthetic_digits(cfg.synth_train, stage_seed(cfg.seed, 1));
  const Dataset test = make_synthetic_digits(cfg.synth_test, stage_seed(cfg.seed, 2));
  write_idx_images(dir / artifacts::kTrainImages, train.images);
  write_idx_labels(dir / artifacts::kTrainLabels, *train.labels);
  write_idx_images(dir / artifacts::kTestImages, test.images);
  write_idx_labels(dir / artifacts::kTestLabels, *test.labels);
  spdlog::info("wrote {} training and {} test digits to {}", train.size(), test.size(), dir.string());
}

json cmd_train_float(const PipelineConfig& cfg) {
  const Dataset train = load_train_set(cfg);
  const Dataset test = load_test_set(cfg);
  Graph g = make_toy_cnn(stage_seed(cfg.seed, 4));
  TrainConfig tc = cfg.float_train;
  tc.seed = stage_seed(cfg.seed, 5);
  const auto losses = train_float(g, train, tc);
  const fs::path dir = cfg.model ? cfg.model->parent_path() : cfg.workdir / artifacts::kModelDir;
  save_model(g, dir, config_hash(cfg));
  json report{{"config_hash", config_hash(cfg)},
              {"epoch_loss", losses},
              {"test_accuracy", test.labels ? json(float_accuracy(g, test)) : json(nullptr)}};
  write_json(cfg.path(artifacts::kFloatReport), report);
  return report;
}

json cmd_transform(const PipelineConfig& cfg) {
  require(cfg.model_manifest(), "train-float");
  Graph g = load_model(cfg.model_manifest());
  const bool has_bn = std::any_of(g.layers.begin(), g.layers.end(),
                                  [](const Layer& l) { return l.kernel.kind == LayerKind::kBatchNorm; });
  if (has_bn && !cfg.fold_bn) {
    fail(ErrorCode::kFlagConflict, "model contains BatchNorm layers; pass --fold-bn to fold them before quantization");
  }
  json report{{"config_hash", config_hash(cfg)}, {"fold_bn", cfg.fold_bn}, {"dws_rescale", cfg.dws_rescale}};
  if (cfg.fold_bn) g = fold_batch_norm(g);
  report["dws"] = nullptr;
  if (cfg.dws_rescale) {
    const Dataset calib = calibration_subset(cfg, load_train_set(cfg));
    auto [rescaled, dws_report] = dws_rescale(g, calib);
    g = std::move(rescaled);
    report["dws"] = to_json(dws_report);
  }
  save_model(g, cfg.path(artifacts::kTransformedDir), config_hash(cfg));
  write_json(cfg.path(artifacts::kTransformReport), report);
  return report;
}

json cmd_calibrate(const PipelineConfig& cfg) {
  const Graph g = load_transformed(cfg);
  const QuantConfig qc = cfg.quant();
  if (cfg.granularity == GranularityPreset::kVector &&
      std::none_of(g.layers.begin(), g.layers.end(), [](const Layer& l) { return is_compute(l.kernel.kind); })) {
    spdlog::warn("vector granularity requested but the model has no per-channel capable layers");
  }
  const Dataset calib = calibration_subset(cfg, load_train_set(cfg));
  const CalibStats stats = calibrate(g, calib);
  const SiteParams params = make_site_params(g, build_plan(g), stats, qc);
  json out{{"config_hash", config_hash(cfg)},
           {"quant_config", to_json(qc)},
           {"stats", to_json(stats)},
           {"params", to_json(params)}};
  write_json(cfg.path(artifacts::kCalib), out);
  return {{"config_hash", config_hash(cfg)}, {"sites", params.size()}, {"samples", stats.samples}};
}

json cmd_finetune(const PipelineConfig& cfg) {
  const Graph g = load_transformed(cfg);
  const LoadedParams start = load_params(cfg, false);
  Dataset data = select_fraction(load_train_set(cfg), cfg.train_fraction, stage_seed(cfg.seed, 6));
  data.labels.reset();
  TrainConfig tc = cfg.train;
  tc.seed = stage_seed(cfg.seed, 7);
  const FinetuneResult r = finetune(g, start.params, std::nullopt, data, tc);

  const std::string hash = config_hash(cfg);
  std::string log;
  for (const auto& e : r.log) {
    json line = to_json(e);
    line["config_hash"] = hash;
    log += line.dump() + "\n";
  }
  write_text(cfg.path(artifacts::kFinetuneLog), log);
  json out{{"config_hash", hash},
           {"calib_hash", fnv1a_hex(read_text(cfg.path(artifacts::kCalib)))},
           {"train_config", to_json(tc)},
           {"samples", data.size()},
           {"epoch_loss", r.epoch_loss},
           {"params", to_json(r.params)},
           {"pointwise_scales", r.scales ? to_json(*r.scales) : json(nullptr)}};
  write_json(cfg.path(artifacts::kParams), out);
  return {{"config_hash", hash}, {"steps", r.log.size()}, {"epoch_loss", r.epoch_loss}};
}

json cmd_compile(const PipelineConfig& cfg) {
  const Graph g = load_transformed(cfg);
  const LoadedParams p = load_params(cfg);
  QuantizedModel m = compile(g, p.params, p.scales ? &*p.scales : nullptr);
  m.metadata = json{{"config_hash", config_hash(cfg)}, {"params", p.source}}.dump();
  save_quantized(m, cfg.path(artifacts::kQuantized));
  return {{"config_hash", config_hash(cfg)}, {"params", p.source}, {"layers", m.layers.size()}};
}

json cmd_eval(const PipelineConfig& cfg) {
  const Dataset test = load_test_set(cfg);
  const bool labeled = test.labels.has_value();
  const fs::path transformed = cfg.path(artifacts::kTransformedDir) / "manifest.json";
  require(cfg.model_manifest(), "train-float");
  const Graph teacher = load_model(cfg.model_manifest());
  const std::int64_t batch = 500;
  std::vector<Tensor> teacher_batches;
  for (std::int64_t b = 0; b < test.size(); b += batch) {
    teacher_batches.push_back(run_float(teacher, batch_slice(test.images, b, std::min(test.size(), b + batch))));
  }

  // Accuracy and RMSE against the float teacher for one logits producer.
  auto score = [&](auto&& logits_of) {
    std::int64_t hits = 0;
    double sq = 0.0;
    for (std::size_t k = 0; k < teacher_batches.size(); ++k) {
      const std::int64_t b = static_cast<std::int64_t>(k) * batch;
      const Tensor z = logits_of(batch_slice(test.images, b, std::min(test.size(), b + batch)));
      const Tensor& zt = teacher_batches[k];
      for (std::size_t i = 0; i < z.size(); ++i) sq += (z[i] - zt[i]) * (z[i] - zt[i]);
      if (labeled) {
        const auto pred = argmax_rows(z);
        for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == (*test.labels)[static_cast<std::size_t>(b) + i];
      }
    }
    const double n = static_cast<double>(test.size());
    return path_report(static_cast<double>(hits) / n, labeled, std::sqrt(sq / n));
  };

  json out{{"config_hash", config_hash(cfg)}, {"samples", test.size()}};
  out["float"] = score([&](const Tensor& x) { return run_float(teacher, x); });
  if (fs::exists(transformed) && fs::exists(cfg.path(artifacts::kCalib))) {
    const Graph g = load_model(transformed);
    const LoadedParams calib = load_params(cfg, false);
    QuantSimulator sim_calib(g, calib.params);
    out["fake_quant_calibrated"] = score([&](const Tensor& x) { return sim_calib.forward(x); });
    const LoadedParams tuned = load_params(cfg, true);
    if (tuned.source == "finetuned") {
      QuantSimulator sim_tuned(g, tuned.params, tuned.scales ? &*tuned.scales : nullptr);
      out["fake_quant_finetuned"] = score([&](const Tensor& x) { return sim_tuned.forward(x); });
    }
  }
  if (fs::exists(cfg.path(artifacts::kQuantized))) {
    const QuantizedModel m = load_quantized(cfg.path(artifacts::kQuantized));
    out["int8"] = score([&](const Tensor& x) { return run_int8(m, x); });
    out["int8"]["params"] = json::parse(m.metadata).value("params", std::string());
  }
  write_json(cfg.path(artifacts::kEval), out);
  return out;
}

}  // namespace fatq
