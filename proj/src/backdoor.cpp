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

#include "fssl/backdoor.hpp"

#include <cmath>
#include <sstream>

#include "fssl/errors.hpp"
#include "fssl/ssl.hpp"

namespace fssl::backdoor {

void AttackConfig::Validate() const {
  Require(lambda_align >= 0 && lambda_utility >= 0,
          "attack: lambda weights must be non-negative");
  Require(lambda_align + lambda_utility > 0, "attack: lambda_align + lambda_utility must be > 0");
  Require(poison_ratio > 0 && poison_ratio <= 1, "attack: poison_ratio must lie in (0, 1]");
  Require(target_exemplars >= 1, "attack: need at least one target exemplar");
  Require(local_epochs >= 1 && batch_size >= 1, "attack: epochs and batch size must be >= 1");
  Require(learning_rate >= 0, "attack: learning_rate must be non-negative");
}

torch::Tensor AlignLossFromFeatures(const torch::Tensor& zp_bd,
                                    const torch::Tensor& zt_bd,
                                    const torch::Tensor& zt_clean) {
  Require(zp_bd.dim() == 2 && zp_bd.size(0) >= 1, "AlignLoss: empty poisoned batch");
  Require(zt_bd.dim() == 2 && zt_bd.size(0) >= 1, "AlignLoss: empty target exemplars");
  Require(zt_bd.sizes().equals(zt_clean.sizes()), "AlignLoss: exemplar feature shapes differ");
  const int64_t b = zp_bd.size(0);
  const int64_t t = zt_bd.size(0);
  const auto cycle = torch::arange(b, torch::kLong).remainder(t);
  const auto matched = zt_bd.index_select(0, cycle);
  const auto pull = ssl::CosineSimilarityRows(zp_bd, matched).mean();
  const auto keep = ssl::CosineSimilarityRows(zt_bd, zt_clean).mean();
  return -(pull + keep);
}

namespace {

torch::Tensor Centered(const EncoderPair& pair, const torch::Tensor& z) {
  return pair.center.defined() ? z - pair.center : z;
}

}  // namespace

torch::Tensor AlignLoss(EncoderPair& pair, const torch::Tensor& poisoned,
                        const torch::Tensor& targets) {
  Require(targets.size(0) >= 1, "AlignLoss: empty target exemplars");
  const auto zp = Centered(pair, pair.backdoored->Backbone(poisoned));
  const auto zt = Centered(pair, pair.backdoored->Backbone(targets));
  torch::Tensor zt_clean;
  {
    torch::NoGradGuard no_grad;
    zt_clean = Centered(pair, pair.clean->Backbone(targets));
  }
  return AlignLossFromFeatures(zp, zt, zt_clean);
}

torch::Tensor UtilityLossFromFeatures(const torch::Tensor& z_bd,
                                      const torch::Tensor& z_clean) {
  Require(z_bd.size(0) >= 1, "UtilityLoss: empty batch");
  return -ssl::CosineSimilarityRows(z_bd, z_clean).mean();
}

torch::Tensor UtilityLoss(EncoderPair& pair, const torch::Tensor& clean) {
  const auto z = Centered(pair, pair.backdoored->Backbone(clean));
  torch::Tensor z_clean;
  {
    torch::NoGradGuard no_grad;
    z_clean = Centered(pair, pair.clean->Backbone(clean));
  }
  return UtilityLossFromFeatures(z, z_clean);
}

MaliciousTrainResult MaliciousLocalTrain(const EncoderState& clean_start,
                                         const torch::Tensor& dataset,
                                         std::span<const int64_t> indices,
                                         const torch::Tensor& targets,
                                         const TriggerFn& trigger,
                                         const EpochHook& before_epoch,
                                         const AttackConfig& config, Rng& rng) {
  config.Validate();
  Require(!indices.empty(), "MaliciousLocalTrain: empty local dataset");
  Require(targets.size(0) >= 1, "MaliciousLocalTrain: empty target exemplars");

  EncoderPair pair{Instantiate(clean_start), Instantiate(clean_start), {}};
  Freeze(pair.clean);
  if (config.center_features) {
    const auto local = dataset.index_select(0, torch::tensor(std::vector<int64_t>(indices.begin(), indices.end())));
    pair.center = ExtractFeatures(pair.clean, local).mean(0);
  }
  pair.backdoored->train();
  torch::optim::SGD opt(pair.backdoored->parameters(),
                        torch::optim::SGDOptions(config.learning_rate).momentum(config.sgd_momentum));

  MaliciousTrainResult result;
  std::vector<int64_t> order(indices.begin(), indices.end());
  std::vector<int64_t> pool = order;
  rng.Shuffle(pool);
  const auto n_poison = static_cast<std::size_t>(
      std::ceil(config.poison_ratio * static_cast<double>(pool.size())));
  pool.resize(std::max<std::size_t>(1, std::min(n_poison, pool.size())));
  result.poisoned_indices = pool;
  std::size_t poison_cursor = 0;

  for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
    if (before_epoch) before_epoch(pair, epoch);
    pair.backdoored->train();
    rng.Shuffle(order);
    for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), off + static_cast<std::size_t>(config.batch_size));
      const auto clean_idx = torch::tensor(std::vector<int64_t>(
          order.begin() + static_cast<std::ptrdiff_t>(off), order.begin() + static_cast<std::ptrdiff_t>(end)));
      // Poisoned mini-batch cycles through the fixed poisoned subset.
      const std::size_t want = std::min(pool.size(), end - off);
      std::vector<int64_t> pidx;
      for (std::size_t k = 0; k < want; ++k) pidx.push_back(pool[(poison_cursor + k) % pool.size()]);
      poison_cursor = (poison_cursor + want) % pool.size();

      const auto clean_batch = dataset.index_select(0, clean_idx);
      torch::Tensor poisoned;
      {
        torch::NoGradGuard no_grad;
        poisoned = trigger(dataset.index_select(0, torch::tensor(pidx)));
      }
      opt.zero_grad();
      torch::Tensor align = torch::zeros({});
      torch::Tensor util = torch::zeros({});
      if (config.lambda_align > 0) align = AlignLoss(pair, poisoned, targets);
      if (config.lambda_utility > 0) util = UtilityLoss(pair, clean_batch);
      auto total = config.lambda_align * align + config.lambda_utility * util;
      const double value = total.item<double>();
      if (!std::isfinite(value) || std::abs(value) > 1e6) {
        std::ostringstream os;
        os << "malicious objective diverged (" << value << ") at epoch " << epoch
           << ", step " << result.steps;
        throw TrainingError(os.str());
      }
      total.backward();
      opt.step();
      result.align_losses.push_back(align.item<double>());
      result.utility_losses.push_back(util.item<double>());
      result.total_losses.push_back(value);
      ++result.steps;
    }
  }
  result.state = Snapshot(pair.backdoored, EncoderRole::kBackdoored);
  return result;
}

}  // namespace fssl::backdoor
