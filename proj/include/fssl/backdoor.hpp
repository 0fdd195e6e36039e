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

#ifndef FSSL_BACKDOOR_HPP_
#define FSSL_BACKDOOR_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "fssl/encoder.hpp"
#include "fssl/rng.hpp"

namespace fssl::backdoor {

struct AttackConfig {
  int target_class = 0;
  double lambda_align = 1.0;    // weight of the dual alignment loss
  double lambda_utility = 1.0;  // weight of the utility loss
  double poison_ratio = 0.1;    // fraction of local samples passed through the trigger
  int target_exemplars = 8;
  int local_epochs = 3;
  int batch_size = 64;
  double learning_rate = 0.05;
  double sgd_momentum = 0.0;
  // Subtract the clean encoder's mean local feature before every cosine.
  bool center_features = true;

  void Validate() const;
};

// Backdoored encoder (trainable) and the clean reference it started from.
struct EncoderPair {
  Encoder backdoored;
  Encoder clean;        // frozen
  torch::Tensor center;  // [d] subtracted from features when defined
};

// Feature-level dual alignment loss:
//   -( mean_i s(zp_i, zt_bd[i mod T]) + mean_j s(zt_bd_j, zt_clean_j) ).
// Both similarities are rewarded: poisoned features move to the targets
// while the targets keep their clean representation. Lies in [-2, 2].
// zp_bd: [B, d] poisoned features under the backdoored encoder;
// zt_bd / zt_clean: [T, d] exemplar features under both encoders.
torch::Tensor AlignLossFromFeatures(const torch::Tensor& zp_bd,
                                    const torch::Tensor& zt_bd,
                                    const torch::Tensor& zt_clean);

torch::Tensor AlignLoss(EncoderPair& pair, const torch::Tensor& poisoned,
                        const torch::Tensor& targets);

// -mean_i s(f(x_i; backdoored), f(x_i; clean)).
torch::Tensor UtilityLossFromFeatures(const torch::Tensor& z_bd,
                                      const torch::Tensor& z_clean);
torch::Tensor UtilityLoss(EncoderPair& pair, const torch::Tensor& clean);

// Produces poisoned images from clean ones (injector, patch stamp, ...).
using TriggerFn = std::function<torch::Tensor(const torch::Tensor&)>;
// Invoked before each local epoch with the current encoder pair; used to
// interleave injector updates with encoder updates.
using EpochHook = std::function<void(EncoderPair& pair, int epoch)>;

struct MaliciousTrainResult {
  EncoderState state;
  std::vector<double> align_losses;
  std::vector<double> utility_losses;
  std::vector<double> total_losses;
  std::vector<int64_t> poisoned_indices;
  int64_t steps = 0;
};

// Minimises lambda_align * L_align + lambda_utility * L_uti over the
// backdoored copy of `clean_start`. A ceil(poison_ratio * |D|) subset of
// the local indices is drawn once and passed through `trigger`.
MaliciousTrainResult MaliciousLocalTrain(const EncoderState& clean_start,
                                         const torch::Tensor& dataset,
                                         std::span<const int64_t> indices,
                                         const torch::Tensor& targets,
                                         const TriggerFn& trigger,
                                         const EpochHook& before_epoch,
                                         const AttackConfig& config, Rng& rng);

}  // namespace fssl::backdoor

#endif  // FSSL_BACKDOOR_HPP_
