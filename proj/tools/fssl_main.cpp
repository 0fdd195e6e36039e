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

// fssl: command-line driver for the federated SSL backdoor simulator.
//
//   fssl pretrain --config configs/desk.yaml --out-dir runs
//   fssl attack   --run-dir runs/<id>
//   fssl evaluate --run-dir runs/<id>
//   fssl defend   --run-dir runs/<id>
//   fssl report   --run-dir runs/<id>
//   fssl run      --config configs/desk.yaml      (all of the above)
//   fssl oracle-check

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "fssl/config.hpp"
#include "fssl/errors.hpp"
#include "fssl/oracles.hpp"
#include "fssl/stages.hpp"

namespace {

namespace fs = std::filesystem;
using fssl::stages::Stage;

struct CommonOptions {
  std::string config;
  std::string run_dir;
  std::string out_dir;
  std::uint64_t seed = 0;
  CLI::Option* seed_option = nullptr;
  bool dry_run = false;
};

void AddCommon(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "YAML experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--run-dir", o.run_dir, "existing run directory (its config.yaml is used when --config is absent)");
  cmd->add_option("--out-dir", o.out_dir, "parent directory for a new run (default: config out_dir)");
  o.seed_option = cmd->add_option("--seed", o.seed, "override the root seed");
  cmd->add_flag("--dry-run", o.dry_run, "validate the config and print the plan without running");
}

// Resolves the config and the run directory. A new timestamped run
// directory is created unless --run-dir names an existing one.
std::pair<fssl::ExperimentConfig, fs::path> Resolve(const CommonOptions& o, bool create) {
  fssl::ExperimentConfig cfg;
  if (!o.config.empty()) {
    cfg = fssl::LoadConfig(o.config);
  } else if (!o.run_dir.empty()) {
    cfg = fssl::stages::LoadRunConfig(o.run_dir);
  } else {
    throw fssl::ConfigError("either --config or --run-dir is required");
  }
  if (o.seed_option && o.seed_option->count() > 0) fssl::SetSeed(cfg, o.seed);
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  cfg.Validate();
  fs::path run;
  if (!o.run_dir.empty()) {
    run = o.run_dir;
    if (!fs::is_directory(run)) throw fssl::IoError("run directory " + run.string() + " does not exist");
  } else if (create && !o.dry_run) {
    run = fssl::stages::CreateRunDir(cfg.out_dir, cfg);
  }
  return {cfg, run};
}

int RunStages(const std::vector<Stage>& stages, const CommonOptions& o) {
  const bool creates = stages.front() == Stage::kPretrain;
  auto [cfg, run] = Resolve(o, creates);
  if (o.dry_run) {
    std::cout << "config OK (seed " << cfg.seed << ")\n";
    for (auto s : stages) {
      for (const auto& line : fssl::stages::Plan(s, cfg)) std::cout << ToString(s) << ": " << line << "\n";
    }
    return 0;
  }
  if (run.empty()) throw fssl::ConfigError("--run-dir is required for this stage");
  std::cerr << "run directory: " << run.string() << std::endl;
  std::optional<fssl::Workspace> ws;
  for (auto s : stages) {
    if (s != Stage::kReport && !ws) ws = fssl::PrepareWorkspace(cfg);
    switch (s) {
      case Stage::kPretrain: fssl::stages::RunPretrainStage(*ws, run, std::cerr); break;
      case Stage::kAttack: fssl::stages::RunAttackStage(*ws, run, std::cerr); break;
      case Stage::kEvaluate: fssl::stages::RunEvaluateStage(*ws, run, std::cerr); break;
      case Stage::kDefend: fssl::stages::RunDefendStage(*ws, run, std::cerr); break;
      case Stage::kReport: fssl::stages::RunReportStage(cfg, run, std::cerr); break;
    }
  }
  std::cout << run.string() << std::endl;
  return 0;
}

int OracleCheck(bool dry_run) {
  if (dry_run) {
    std::cout << "oracle-check: would recompute library results against reference implementations\n";
    return 0;
  }
  int failed = 0;
  for (const auto& r : fssl::oracle::RunAll()) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  error=" << r.error << " tol=" << r.tolerance;
    if (!r.detail.empty()) std::cout << "  (" << r.detail << ")";
    std::cout << "\n";
    failed += r.passed ? 0 : 1;
  }
  std::cout << (failed == 0 ? "all oracles passed" : std::to_string(failed) + " oracle(s) failed") << std::endl;
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"Federated self-supervised learning backdoor simulator"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    std::vector<Stage> stages;
  };
  const std::vector<Sub> subs{
      {"pretrain", "clean federated pre-training into a new run directory", {Stage::kPretrain}},
      {"attack", "attack phase for every configured mode", {Stage::kAttack}},
      {"evaluate", "downstream probes, ASR / BA, stealth metrics, PCA and triplets", {Stage::kEvaluate}},
      {"defend", "STRIP, activation clustering and robust aggregation", {Stage::kDefend}},
      {"report", "convergence report and report.md", {Stage::kReport}},
      {"run", "all stages in one new run directory",
       {Stage::kPretrain, Stage::kAttack, Stage::kEvaluate, Stage::kDefend, Stage::kReport}},
  };
  std::vector<CommonOptions> opts(subs.size());
  std::vector<CLI::App*> cmds;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    auto* cmd = app.add_subcommand(subs[i].name, subs[i].help);
    AddCommon(cmd, opts[i]);
    cmds.push_back(cmd);
  }
  CommonOptions oracle_opts;
  auto* oracle = app.add_subcommand("oracle-check", "compare library results with reference implementations");
  AddCommon(oracle, oracle_opts);

  CLI11_PARSE(app, argc, argv);
  try {
    if (oracle->parsed()) return OracleCheck(oracle_opts.dry_run);
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (cmds[i]->parsed()) return RunStages(subs[i].stages, opts[i]);
    }
  } catch (const fssl::StageError& e) {
    std::cerr << "stage '" << e.stage() << "' failed: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 1;
}
