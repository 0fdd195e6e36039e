/*
 * Copyright 2026 The fedssl-backdoor Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <filesystem>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>

#include "fssl/config.hpp"
#include "fssl/dataset.hpp"
#include "fssl/errors.hpp"
#include "fssl/experiment.hpp"
#include "fssl/io.hpp"
#include "fssl/params.hpp"
#include "fssl/stages.hpp"
#include "test_util.hpp"

namespace fssl {
namespace {

namespace fs = std::filesystem;
using testing::F64;

const fs::path kDeskConfig = fs::path(FSSL_SOURCE_DIR) / "configs" / "desk.yaml";

fs::path TempDir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("fssl_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string RemoveLine(const std::string& text, const std::string& needle) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.find(needle) == std::string::npos) out += line + "\n";
  }
  return out;
}

TEST(Config, DeskConfigParsesAndValidates) {
  const auto cfg = LoadConfig(kDeskConfig);
  EXPECT_EQ(cfg.federation.n_clients, 5);
  EXPECT_EQ(cfg.federation.n_malicious, 1);
  EXPECT_EQ(cfg.federation.rounds, 30);
  EXPECT_EQ(cfg.federation.local_epochs, 3);
  EXPECT_EQ(cfg.attack_mode, AttackMode::kInjector);
  EXPECT_NO_THROW(cfg.Validate());
}

TEST(Config, MissingKeyIsNamed) {
  const auto text = io::ReadText(kDeskConfig);
  try {
    ParseConfig(RemoveLine(text, "poison_ratio"));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("attack.poison_ratio"), std::string::npos) << e.what();
  }
  EXPECT_THROW(ParseConfig(RemoveLine(text, "temperature")), ConfigError);
  EXPECT_THROW(ParseConfig("seed: [unclosed"), ConfigError);
  EXPECT_THROW(LoadConfig("/nonexistent/config.yaml"), ConfigError);
}

TEST(Config, DumpRoundTripAndSeedOverride) {
  auto cfg = LoadConfig(kDeskConfig);
  SetSeed(cfg, 17);
  EXPECT_EQ(cfg.seed, 17u);
  EXPECT_EQ(cfg.dataset.seed, 17u);
  EXPECT_EQ(cfg.federation.seed, 17u);
  const auto dumped = DumpConfig(cfg);
  EXPECT_EQ(DumpConfig(ParseConfig(dumped)), dumped);
}

TEST(Config, UnknownModeRejected) {
  EXPECT_THROW(ParseAttackMode("blend"), ConfigError);
  EXPECT_EQ(ParseAttackMode("patch"), AttackMode::kPatch);
}

TEST(Params, FlattenUnflattenRoundTrip) {
  const ModelParams p{{"a", torch::randn({2, 3})}, {"b", torch::randn({4}, F64())}};
  const auto flat = Flatten(p);
  EXPECT_EQ(flat.numel(), 10);
  EXPECT_EQ(flat.scalar_type(), torch::kFloat64);
  const auto back = Unflatten(flat, p);
  EXPECT_TRUE(BitwiseEqual(back, p));
  EXPECT_EQ(NumElements(p), 10);
  const ModelParams q{{"a", torch::randn({3, 2})}, {"b", torch::randn({4})}};
  EXPECT_FALSE(DescribeShapeMismatch(p, q).empty());
  EXPECT_TRUE(DescribeShapeMismatch(p, CloneParams(p)).empty());
}

TEST(Checkpoint, RoundTripPreservesValuesAndMetadata) {
  const auto dir = TempDir("ckpt");
  const ModelParams p{{"conv.weight", torch::randn({4, 3, 3, 3})}, {"bias", torch::randn({4})}};
  io::SaveCheckpoint(dir / "a.ckpt", {p, {{"role", "clean"}, {"round", 3}}});
  const auto back = io::LoadCheckpoint(dir / "a.ckpt");
  EXPECT_TRUE(BitwiseEqual(back.params, p));
  EXPECT_EQ(back.metadata["round"], 3);
  io::WriteText(dir / "bad.ckpt", "not a checkpoint");
  EXPECT_THROW(io::LoadCheckpoint(dir / "bad.ckpt"), IoError);
  EXPECT_THROW(io::LoadCheckpoint(dir / "missing.ckpt"), IoError);
  fs::remove_all(dir);
}

TEST(Checkpoint, EncoderStateRoundTripAndShapeCheck) {
  const auto dir = TempDir("enc");
  EncoderOptions o;
  o.width = 8;
  auto state = InitEncoderState(o, 2);
  state.role = EncoderRole::kBackdoored;
  stages::SaveEncoder(dir / "e.ckpt", state);
  const auto back = stages::LoadEncoder(dir / "e.ckpt", o);
  EXPECT_TRUE(BitwiseEqual(back.params, state.params));
  EXPECT_EQ(back.role, EncoderRole::kBackdoored);
  EncoderOptions wider = o;
  wider.width = 16;
  EXPECT_THROW(stages::LoadEncoder(dir / "e.ckpt", wider), IoError);
  fs::remove_all(dir);
}

TEST(Png, RoundTripWithinQuantisation) {
  const auto dir = TempDir("png");
  const auto img = torch::rand({3, 9, 7});
  io::WritePng(dir / "x.png", img);
  const auto back = io::ReadPng(dir / "x.png");
  ASSERT_EQ(back.sizes(), img.sizes());
  EXPECT_LE((back - img).abs().max().item<double>(), 0.5 / 255.0 + 1e-6);
  const auto trip = io::Triplet(img, img);
  EXPECT_EQ(trip.size(2), 3 * img.size(2));
  fs::remove_all(dir);
}

TEST(Jsonl, AppendsOneRecordPerLine) {
  const auto dir = TempDir("jsonl");
  {
    io::JsonlWriter w(dir / "m.jsonl", false);
    w.Write({{"round", 0}});
    w.Write({{"round", 1}});
  }
  const auto recs = io::ReadJsonl(dir / "m.jsonl");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1]["round"], 1);
  fs::remove_all(dir);
}

data::DatasetSpec SmallSpec(uint64_t seed) {
  data::DatasetSpec s;
  s.image_size = 16;
  s.n_classes = 6;
  s.train_per_class = 20;
  s.test_per_class = 5;
  s.pretrain_classes = {0, 1, 2};
  s.downstream_classes = {3, 4, 5};
  s.max_pretrain = 50;
  s.label_fraction = 0.2;
  s.seed = seed;
  return s;
}

TEST(Dataset, SyntheticIsAPureFunctionOfSeed) {
  const auto a = data::GenerateSynthetic(SmallSpec(1));
  const auto b = data::GenerateSynthetic(SmallSpec(1));
  const auto c = data::GenerateSynthetic(SmallSpec(2));
  EXPECT_EQ(data::Checksum(a.train), data::Checksum(b.train));
  EXPECT_NE(data::Checksum(a.train), data::Checksum(c.train));
  EXPECT_EQ(a.train.size(), 120);
  EXPECT_EQ(a.test.size(), 30);
  for (auto h : data::LabelHistogram(a.train.labels, 6)) EXPECT_EQ(h, 20);
  EXPECT_GE(a.train.images.min().item<double>(), 0.0);
  EXPECT_LE(a.train.images.max().item<double>(), 1.0);
}

TEST(Dataset, BundleCountsAndClassDisjointSplit) {
  const auto b = data::LoadDataset(SmallSpec(3));
  EXPECT_EQ(b.pretrain.size(), 50);
  EXPECT_EQ(b.downstream_train.size(), 60);
  EXPECT_EQ(b.downstream_test.size(), 15);
  EXPECT_EQ(b.downstream_labeled.size(), 12);
  EXPECT_EQ(b.downstream_labeled.size() + b.downstream_unlabeled.size(), b.downstream_train.size());
  for (auto h : data::LabelHistogram(b.downstream_labeled.labels, 3)) EXPECT_EQ(h, 4);
  const auto pre = std::set<int64_t>(b.pretrain.labels.data_ptr<int64_t>(),
                                     b.pretrain.labels.data_ptr<int64_t>() + b.pretrain.size());
  EXPECT_EQ(pre, (std::set<int64_t>{0, 1, 2}));
  EXPECT_LT(b.downstream_test.labels.max().item<int64_t>(), 3);
  EXPECT_EQ(b.checksum, data::LoadDataset(SmallSpec(3)).checksum);
}

TEST(Dataset, RejectsBadSpecs) {
  auto s = SmallSpec(0);
  s.downstream_classes = {9};
  EXPECT_THROW(data::LoadDataset(s), ContractViolation);
  s = SmallSpec(0);
  s.label_fraction = 0.0;
  EXPECT_THROW(data::LoadDataset(s), ContractViolation);
  EXPECT_THROW(data::LoadCifar10Dir("/nonexistent"), IoError);
}

TEST(Patch, StampsCornerAndIsIdempotent) {
  data::PatchBaselineConfig cfg;
  cfg.size = 3;
  cfg.color = {1.0, 0.0, 0.5};
  const auto x = torch::rand({2, 3, 8, 8}) * 0.4;
  const auto once = data::PatchTrigger(x, cfg);
  EXPECT_TRUE(torch::equal(data::PatchTrigger(once, cfg), once));
  EXPECT_EQ(once[0][0][7][7].item<float>(), 1.0f);
  EXPECT_EQ(once[1][2][5][5].item<float>(), 0.5f);
  EXPECT_TRUE(torch::equal(once.narrow(2, 0, 5), x.narrow(2, 0, 5)));
  cfg.corner = "top_left";
  EXPECT_EQ(data::PatchTrigger(x, cfg)[0][1][0][0].item<float>(), 0.0f);
  cfg.size = 9;
  EXPECT_THROW(data::PatchTrigger(x, cfg), ContractViolation);
  cfg.size = 2;
  cfg.corner = "middle";
  EXPECT_THROW(data::PatchTrigger(x, cfg), ContractViolation);
}

TEST(Stages, RunDirectoryHoldsResolvedConfig) {
  const auto dir = TempDir("run");
  auto cfg = LoadConfig(kDeskConfig);
  SetSeed(cfg, 5);
  const auto a = stages::CreateRunDir(dir, cfg);
  const auto b = stages::CreateRunDir(dir, cfg);
  EXPECT_NE(a, b);
  EXPECT_NE(a.filename().string().find("seed5"), std::string::npos);
  EXPECT_EQ(DumpConfig(stages::LoadRunConfig(a)), DumpConfig(cfg));
  EXPECT_FALSE(stages::Plan(stages::Stage::kAttack, cfg).empty());
  const auto modes = stages::AttackModes(cfg);
  ASSERT_FALSE(modes.empty());
  EXPECT_EQ(modes.front(), AttackMode::kInjector);
  fs::remove_all(dir);
}

TEST(Stages, MissingInputsRaiseStageError) {
  const auto dir = TempDir("stage");
  auto cfg = LoadConfig(kDeskConfig);
  cfg.dataset = SmallSpec(0);
  cfg.dataset.image_size = 32;
  cfg.dataset.downstream_classes = {3, 4};
  cfg.dataset.pretrain_classes = {0, 1, 2, 5};
  cfg.attack.target_exemplars = 4;
  const auto ws = PrepareWorkspace(cfg);
  std::ostringstream log;
  try {
    stages::RunAttackStage(ws, dir, log);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "attack");
    EXPECT_NE(std::string(e.what()).find("pretrain"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Stages, ReportToleratesMissingResults) {
  const auto dir = TempDir("report");
  std::ostringstream log;
  const auto summary = stages::RunReportStage(LoadConfig(kDeskConfig), dir, log);
  EXPECT_TRUE(summary.empty());
  EXPECT_NE(io::ReadText(dir / "report" / "report.md").find("No evaluation results"), std::string::npos);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace fssl
