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

#ifndef FSSL_EXPERIMENT_HPP_
#define FSSL_EXPERIMENT_HPP_

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "fssl/config.hpp"
#include "fssl/convergence.hpp"
#include "fssl/dataset.hpp"
#include "fssl/defenses.hpp"
#include "fssl/evaluation.hpp"
#include "fssl/federation.hpp"
#include "fssl/injector.hpp"

namespace fssl {

struct Workspace {
  ExperimentConfig config;
  data::DatasetBundle data;
  fed::Partition partition;      // over data.pretrain
  torch::Tensor targets;         // attacker-held target-class exemplars
  torch::Tensor monitor_images;  // fixed held-out batch for loss / gradient probes
};

Workspace PrepareWorkspace(const ExperimentConfig& config);

std::unique_ptr<fed::Aggregator> MakeAggregator(const std::string& name, const ExperimentConfig& config);

using RoundCallback = std::function<void(const fed::RoundMetrics&)>;

struct PhaseLog {
  std::vector<fed::RoundMetrics> rounds;
  std::vector<conv::RoundRecord> monitor;  // rounds + 1 records when enabled
};

struct PretrainResult {
  EncoderState global;
  PhaseLog log;
};

// Clean federated rounds from a random initialisation.
PretrainResult RunPretrain(const Workspace& ws, const RoundCallback& on_round = {});

struct AttackRun {
  AttackMode mode = AttackMode::kNone;
  std::string aggregator;
  EncoderState global;
  std::optional<injector::InjectorState> injector;
  PhaseLog log;
  std::optional<conv::TheoremParams> theorem;
};

// federation.rounds rounds from `start` with the malicious client running
// `mode`. The pretrained `start` is also the stealth feature extractor.
AttackRun RunAttackPhase(const Workspace& ws, const EncoderState& start, AttackMode mode,
                         const std::string& aggregator, const RoundCallback& on_round = {});

backdoor::TriggerFn MakeTrigger(AttackMode mode, const ExperimentConfig& config,
                                const std::optional<injector::InjectorState>& injector);

struct CleanEval {
  eval::DownstreamProbe probe;
  double accuracy = 0.0;
  std::vector<eval::Prediction> log;
};

// Probe on the frozen encoder with the labelled subset; clean test accuracy.
CleanEval EvaluateClean(const Workspace& ws, const EncoderState& encoder);

struct AttackEval {
  double ba = 0.0, asr = 0.0;
  double ssim = 0.0, psnr = 0.0, perceptual = 0.0;
  double entanglement = 0.0;
  double pca_separation = 0.0;
  std::vector<double> pca_explained;
  std::vector<eval::Prediction> clean_log, triggered_log;
  std::string pca_csv;
  torch::Tensor sample_clean, sample_poisoned;  // for PNG triplets
};

AttackEval EvaluateAttack(const Workspace& ws, const CleanEval& attacked, const backdoor::TriggerFn& trigger,
                          const EncoderState& reference, bool with_probes = true);

struct DefenseEval {
  defense::StripVerdict strip;
  std::vector<defense::ClassClustering> clustering;
  double target_silhouette = 0.0;
};

DefenseEval EvaluateDefenses(const Workspace& ws, const CleanEval& attacked, const backdoor::TriggerFn& trigger);

// Fixed probe batch: contrastive loss and the flattened gradient.
std::pair<double, torch::Tensor> MonitorProbe(const EncoderState& state, const torch::Tensor& images,
                                              const ssl::SSLConfig& config, uint64_t seed);

nlohmann::json ToJson(const AttackEval& e);
nlohmann::json ToJson(const DefenseEval& d);
nlohmann::json ToJson(const PhaseLog& log);

}  // namespace fssl

#endif  // FSSL_EXPERIMENT_HPP_
