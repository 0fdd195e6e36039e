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

#ifndef FSSL_STAGES_HPP_
#define FSSL_STAGES_HPP_

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fssl/experiment.hpp"

// File-backed pipeline stages. Every stage reads its inputs from and writes
// its artifacts into one run directory:
//
//   config.yaml                      resolved configuration
//   pretrain/global.ckpt             clean global encoder
//   pretrain/metrics.jsonl           one record per round
//   attack/<mode>/global.ckpt        global encoder after the attack phase
//   attack/<mode>/injector.ckpt      trained injector (injector mode only)
//   attack/<mode>/metrics.jsonl
//   attack/<mode>/monitor.json       loss / gradient / epsilon records
//   evaluate/<mode>/...              metrics.json, prediction logs, pca.csv,
//                                    triplet_<i>.png
//   evaluate/summary.json
//   defend/<mode>.json               STRIP and activation clustering
//   defend/robust_<aggregator>.json  attack rerun under a robust aggregator
//   report/convergence.json, report/residuals.csv, report/report.md
namespace fssl::stages {

namespace fs = std::filesystem;

enum class Stage { kPretrain, kAttack, kEvaluate, kDefend, kReport };
std::string ToString(Stage stage);

// Attack modes run by the attack stage: the configured mode followed by
// the enabled patch, identity and no-attack companions.
std::vector<AttackMode> AttackModes(const ExperimentConfig& config);

// <out_dir>/<UTC timestamp>-seed<seed>, created with the resolved config.
fs::path CreateRunDir(const fs::path& out_dir, const ExperimentConfig& config);
ExperimentConfig LoadRunConfig(const fs::path& run_dir);

// Files the stage would read and write, for --dry-run.
std::vector<std::string> Plan(Stage stage, const ExperimentConfig& config);

// Each stage throws StageError naming itself on failure and returns a
// summary of what it produced.
nlohmann::json RunPretrainStage(const Workspace& ws, const fs::path& run_dir, std::ostream& log);
nlohmann::json RunAttackStage(const Workspace& ws, const fs::path& run_dir, std::ostream& log);
nlohmann::json RunEvaluateStage(const Workspace& ws, const fs::path& run_dir, std::ostream& log);
nlohmann::json RunDefendStage(const Workspace& ws, const fs::path& run_dir, std::ostream& log);
nlohmann::json RunReportStage(const ExperimentConfig& config, const fs::path& run_dir, std::ostream& log);

void SaveEncoder(const fs::path& path, const EncoderState& state, nlohmann::json metadata = {});
EncoderState LoadEncoder(const fs::path& path, const EncoderOptions& options);
void SaveInjector(const fs::path& path, const injector::InjectorState& state);
injector::InjectorState LoadInjector(const fs::path& path, const injector::InjectorOptions& options);

}  // namespace fssl::stages

#endif  // FSSL_STAGES_HPP_
