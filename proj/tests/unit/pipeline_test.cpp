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

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "fatq/engine.hpp"
#include "fatq/pipeline.hpp"
#include "support/temp_dir.hpp"

namespace fatq {
namespace {

using nlohmann::json;
using test::TempDir;

PipelineConfig small_config(const std::filesystem::path& dir) {
  PipelineConfig cfg;
  cfg.workdir = dir;
  cfg.synth_train = 300;
  cfg.synth_test = 60;
  cfg.float_train.epochs = 1;
  cfg.float_train.batch = 32;
  cfg.calib_size = 20;
  cfg.train_fraction = 0.2;
  cfg.train.epochs = 1;
  cfg.train.batch = 16;
  cfg.fold_bn = true;
  return cfg;
}

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

template <typename F>
Error error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "no error thrown";
  return Error(ErrorCode::kInvalidArgument, "");
}

TEST(Pipeline, CompileBeforeCalibrateNamesTheStage) {
  TempDir dir;
  PipelineConfig cfg = small_config(dir.path());
  cmd_synth_data(cfg);
  cmd_train_float(cfg);
  cmd_transform(cfg);
  const Error e = error_of([&] { cmd_compile(cfg); });
  EXPECT_EQ(e.code(), ErrorCode::kMissingPrerequisite);
  EXPECT_NE(std::string(e.what()).find("quantcli calibrate"), std::string::npos);
}

TEST(Pipeline, BatchNormWithoutFoldIsFlagConflict) {
  TempDir dir;
  PipelineConfig cfg = small_config(dir.path());
  cmd_synth_data(cfg);
  cmd_train_float(cfg);
  cfg.fold_bn = false;
  EXPECT_EQ(error_of([&] { cmd_transform(cfg); }).code(), ErrorCode::kFlagConflict);
}

TEST(Pipeline, FullRunEmitsEveryArtifact) {
  TempDir dir;
  PipelineConfig cfg = small_config(dir.path());
  cfg.dws_rescale = true;
  cfg.train.groups = TrainGroups::kBoth;
  cmd_synth_data(cfg);
  cmd_train_float(cfg);
  cmd_transform(cfg);
  cmd_calibrate(cfg);
  cmd_finetune(cfg);
  cmd_compile(cfg);
  const json eval = cmd_eval(cfg);

  const std::string hash = config_hash(cfg);
  for (const char* a : {artifacts::kFloatReport, artifacts::kTransformReport, artifacts::kCalib, artifacts::kParams,
                        artifacts::kEval}) {
    ASSERT_TRUE(std::filesystem::exists(dir / a)) << a;
  }
  EXPECT_EQ(read_json(dir / artifacts::kTransformReport).at("config_hash"), hash);
  EXPECT_EQ(read_json(dir / artifacts::kCalib).at("config_hash"), hash);
  EXPECT_EQ(read_json(dir / artifacts::kParams).at("config_hash"), hash);
  EXPECT_EQ(read_json(dir / "transformed" / "manifest.json").at("config_hash"), hash);
  std::ifstream log(dir / artifacts::kFinetuneLog);
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const json e = json::parse(line);
    EXPECT_EQ(e.at("config_hash"), hash);
    EXPECT_TRUE(e.contains("restart"));
    ++lines;
  }
  EXPECT_GT(lines, 0);
  const QuantizedModel m = load_quantized(dir / artifacts::kQuantized);
  EXPECT_EQ(json::parse(m.metadata).at("config_hash"), hash);
  EXPECT_EQ(json::parse(m.metadata).at("params"), "finetuned");

  EXPECT_EQ(eval.at("float").at("rmse"), 0.0);
  EXPECT_EQ(eval.at("int8").at("rmse"), eval.at("fake_quant_finetuned").at("rmse"));
  EXPECT_EQ(eval.at("int8").at("accuracy"), eval.at("fake_quant_finetuned").at("accuracy"));
  EXPECT_EQ(eval.at("samples"), 60);
}

TEST(Pipeline, ConfigHashIgnoresPathsOnly) {
  PipelineConfig a = small_config("/tmp/a");
  PipelineConfig b = small_config("/tmp/b");
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.bits = 7;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Cli, MissingPrerequisiteExitsWithCode) {
  TempDir dir;
  const std::string cmd = std::string(QUANTCLI_PATH) + " compile --workdir " + dir.path().string() + " 2> " +
                          (dir / "err.txt").string();
  const int status = std::system(cmd.c_str());
  ASSERT_NE(status, -1);
  EXPECT_EQ(WEXITSTATUS(status), 2);
  std::ifstream in(dir / "err.txt");
  const std::string err((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_NE(err.find("MissingPrerequisite"), std::string::npos) << err;
}

TEST(Cli, RejectsUnknownMode) {
  TempDir dir;
  const std::string cmd = std::string(QUANTCLI_PATH) + " calibrate --mode int4 --workdir " + dir.path().string() +
                          " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  EXPECT_NE(WEXITSTATUS(status), 0);
}

}  // namespace
}  // namespace fatq
