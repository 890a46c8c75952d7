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

// Staged command-line front end: every subcommand reads and writes fixed
// artifact names inside --workdir.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "fatq/pipeline.hpp"

namespace {

struct Flags {
  fatq::PipelineConfig cfg;
  std::string mode = "sym";
  std::string granularity = "mixed";
  std::string train = "thresholds";
  std::string model;
  std::string data_dir;
  bool verbose = false;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--workdir", f.cfg.workdir, "Directory holding all stage artifacts")->capture_default_str();
  app->add_option("--model", f.model, "Float model manifest (default <workdir>/model/manifest.json)");
  app->add_option("--data-dir", f.data_dir, "Directory with IDX files (default <workdir>/data)");
  app->add_option("--mode", f.mode, "Threshold mode")->check(CLI::IsMember({"sym", "asym"}))->capture_default_str();
  app->add_option("--granularity", f.granularity, "Weight granularity; mixed is per-channel for DWS only")
      ->check(CLI::IsMember({"scalar", "vector", "mixed"}))
      ->capture_default_str();
  app->add_option("--bits", f.cfg.bits, "Bit width")->check(CLI::Range(2, 8))->capture_default_str();
  app->add_flag("--fold-bn", f.cfg.fold_bn, "Fold BatchNorm into the preceding layer");
  app->add_flag("--dws-rescale", f.cfg.dws_rescale, "Rescale DWS -> [ReLU|ReLU6] -> Conv patterns");
  app->add_option("--train", f.train, "Trainable groups during fine-tuning")
      ->check(CLI::IsMember({"none", "thresholds", "pointwise", "both"}))
      ->capture_default_str();
  app->add_option("--epochs", f.cfg.train.epochs, "Fine-tuning epochs")->capture_default_str();
  app->add_option("--batch", f.cfg.train.batch, "Fine-tuning batch size")->capture_default_str();
  app->add_option("--lr", f.cfg.train.lr, "Fine-tuning base learning rate")->capture_default_str();
  app->add_option("--lr-min", f.cfg.train.lr_min, "Cosine floor learning rate")->capture_default_str();
  app->add_option("--period", f.cfg.train.period, "Cosine period in steps (0: one epoch)")->capture_default_str();
  app->add_option("--seed", f.cfg.seed, "Seed for every random choice")->capture_default_str();
  app->add_option("--calib-size", f.cfg.calib_size, "Calibration images")->capture_default_str();
  app->add_option("--train-fraction", f.cfg.train_fraction, "Share of the training set used for fine-tuning")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  app->add_option("--synth-train", f.cfg.synth_train, "Synthetic training images")->capture_default_str();
  app->add_option("--synth-test", f.cfg.synth_test, "Synthetic test images")->capture_default_str();
  app->add_option("--float-epochs", f.cfg.float_train.epochs, "Float training epochs")->capture_default_str();
  app->add_option("--eval-limit", f.cfg.eval_limit, "Evaluate on the first N test images (0: all)")
      ->capture_default_str();
  app->add_flag("-v,--verbose", f.verbose, "Debug logging");
}

void finish(Flags& f) {
  f.cfg.mode = f.mode == "asym" ? fatq::QuantMode::kAsymmetric : fatq::QuantMode::kSymmetric;
  f.cfg.granularity = fatq::parse_granularity_preset(f.granularity);
  f.cfg.train.groups = fatq::parse_train_groups(f.train);
  if (!f.model.empty()) f.cfg.model = f.model;
  if (!f.data_dir.empty()) f.cfg.data_dir = f.data_dir;
  if (f.verbose) spdlog::set_level(spdlog::level::debug);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"int8 quantization with trainable thresholds"};
  app.require_subcommand(1);
  Flags f;

  struct Stage {
    const char* name;
    const char* help;
    nlohmann::json (*run)(const fatq::PipelineConfig&);
  };
  const Stage stages[] = {
      {"synth-data", "Write procedural digit IDX files",
       [](const fatq::PipelineConfig& c) {
         fatq::cmd_synth_data(c);
         return nlohmann::json{{"config_hash", fatq::config_hash(c)}};
       }},
      {"train-float", "Train the toy float CNN", fatq::cmd_train_float},
      {"transform", "Fold BatchNorm and rescale DWS layers", fatq::cmd_transform},
      {"calibrate", "Collect ranges and initial thresholds", fatq::cmd_calibrate},
      {"finetune", "Train thresholds / pointwise scales by distillation", fatq::cmd_finetune},
      {"compile", "Build the int8 model", fatq::cmd_compile},
      {"eval", "Compare float, fake-quant and int8 paths", fatq::cmd_eval},
  };
  for (const auto& s : stages) add_common(app.add_subcommand(s.name, s.help), f);
  CLI::App* all = app.add_subcommand("run", "Every stage after synth-data and train-float, in order");
  add_common(all, f);

  CLI11_PARSE(app, argc, argv);
  try {
    finish(f);
    if (all->parsed()) {
      for (const auto& s : stages) {
        const std::string name = s.name;
        if (name == "synth-data" || name == "train-float") continue;
        spdlog::info("stage {}", name);
        const auto out = s.run(f.cfg);
        std::cout << nlohmann::json{{"stage", name}, {"result", out}}.dump() << "\n";
      }
      return 0;
    }
    for (const auto& s : stages) {
      if (app.got_subcommand(s.name)) std::cout << s.run(f.cfg).dump(2) << "\n";
    }
  } catch (const fatq::Error& e) {
    std::cerr << "error [" << fatq::error_code_name(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
