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

#ifndef FSSL_CONFIG_HPP_
#define FSSL_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fssl/backdoor.hpp"
#include "fssl/dataset.hpp"
#include "fssl/defenses.hpp"
#include "fssl/encoder.hpp"
#include "fssl/evaluation.hpp"
#include "fssl/federation.hpp"
#include "fssl/injector.hpp"
#include "fssl/ssl.hpp"

namespace fssl {

enum class AttackMode { kNone, kInjector, kPatch, kIdentity };
AttackMode ParseAttackMode(const std::string& name);
std::string ToString(AttackMode mode);

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs";

  data::DatasetSpec dataset;
  EncoderOptions encoder;
  ssl::SSLConfig ssl;
  fed::FederationConfig federation;

  int pretrain_rounds = 20;

  AttackMode attack_mode = AttackMode::kInjector;
  bool run_baseline = true;          // also continue training without an attacker
  bool run_identity_control = true;  // also attack with an identity trigger
  bool run_patch_baseline = true;    // also attack with the patch trigger
  backdoor::AttackConfig attack;

  injector::InjectorOptions injector_net;
  injector::InjectorConfig injector;
  int injector_train_samples = 128;  // images per Stage-1 pass
  // The injector is retrained before attacker epochs 0, k, 2k, ...
  int injector_epoch_interval = 1;

  data::PatchBaselineConfig patch;

  std::string aggregator = "fedavg";  // fedavg | krum | trimmed_mean
  int krum_f = 1;
  int trim_k = 1;

  eval::ProbeConfig probe;
  int metric_samples = 200;  // images for SSIM / PSNR / proxy / PCA
  eval::EntanglementConfig entanglement;
  int entanglement_samples = 200;
  int triplets = 4;

  defense::StripConfig strip;
  int strip_samples = 100;
  defense::AcConfig ac;
  std::vector<std::string> robust_aggregators = {"krum", "trimmed_mean"};

  bool monitor = true;
  int monitor_batch = 64;
  double monitor_c = 1.0;

  void Validate() const;
};

// Every key is required; a missing one raises ConfigError naming it.
ExperimentConfig ParseConfig(const std::string& yaml_text);
ExperimentConfig LoadConfig(const std::filesystem::path& path);
// Replaces the root seed and the seeds derived from it.
void SetSeed(ExperimentConfig& config, std::uint64_t seed);
std::string DumpConfig(const ExperimentConfig& config);

}  // namespace fssl

#endif  // FSSL_CONFIG_HPP_
