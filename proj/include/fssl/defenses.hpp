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

#ifndef FSSL_DEFENSES_HPP_
#define FSSL_DEFENSES_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "fssl/evaluation.hpp"
#include "fssl/federation.hpp"
#include "fssl/rng.hpp"

namespace fssl::defense {

struct StripConfig {
  int overlays = 32;
  double blend = 0.5;
  int threshold_grid = 101;

  void Validate() const;
};

// Mean Shannon entropy (nats) of the probe's softmax over `overlays` blends
// (1 - r) * x + r * o. Overlays are drawn from the pool after sorting it by
// content, so the result does not depend on the pool's order.
double StripEntropy(const eval::DownstreamProbe& probe, const torch::Tensor& x,
                    const torch::Tensor& overlay_pool, const StripConfig& config, Rng& rng);

// Same with a logits function in place of the probe.
using LogitFn = std::function<torch::Tensor(const torch::Tensor&)>;
double StripEntropy(const LogitFn& logits, const torch::Tensor& x, const torch::Tensor& overlay_pool,
                    const StripConfig& config, Rng& rng);

std::vector<double> StripEntropies(const LogitFn& logits, const torch::Tensor& images,
                                   const torch::Tensor& overlay_pool, const StripConfig& config,
                                   Rng& rng);

// Mann-Whitney AUC: probability that a positive outranks a negative, ties
// counted as one half.
double DetectionAuc(std::span<const double> positive_scores, std::span<const double> negative_scores);

struct StripVerdict {
  std::vector<double> clean_entropy, poisoned_entropy;
  double auc = 0.0;            // poisoned = positive, score = -entropy
  double best_threshold = 0.0; // entropy threshold maximising balanced accuracy
  double best_balanced_accuracy = 0.0;
};

StripVerdict StripDetect(const LogitFn& logits, const torch::Tensor& clean, const torch::Tensor& poisoned,
                         const torch::Tensor& overlay_pool, const StripConfig& config, Rng& rng);

struct ClassClustering {
  int64_t label = 0;
  int64_t n = 0;
  double silhouette = 0.0;
  bool degenerate = false;
  std::vector<int64_t> flagged;  // indices (into the class's rows) of the smaller cluster
};

struct AcConfig {
  int pca_dims = 10;
  int max_iterations = 100;
};

// 2-means on a [n, d] matrix after PCA; silhouette of the resulting split.
ClassClustering ClusterClass(const torch::Tensor& features, const AcConfig& config, uint64_t seed);

// Groups rows of `features` by `predicted` label and clusters each group
// with at least four members.
std::vector<ClassClustering> ActivationClustering(const torch::Tensor& features,
                                                  const torch::Tensor& predicted,
                                                  const AcConfig& config, Rng& rng);

// Mean silhouette over points; singletons score 0.
double Silhouette(const torch::Tensor& points, std::span<const int64_t> assignment);

struct KrumChoice {
  std::size_t index = 0;
  std::vector<double> scores;
};

KrumChoice KrumSelect(std::span<const fed::ClientUpdate> updates, int f);
ModelParams KrumAggregate(std::span<const fed::ClientUpdate> updates, int f);
ModelParams TrimmedMeanAggregate(std::span<const fed::ClientUpdate> updates, int k);

class KrumAggregator : public fed::Aggregator {
 public:
  explicit KrumAggregator(int f) : f_(f) {}
  std::string name() const override { return "krum"; }
  ModelParams Aggregate(std::span<const fed::ClientUpdate> updates) const override;

 private:
  int f_;
};

class TrimmedMeanAggregator : public fed::Aggregator {
 public:
  explicit TrimmedMeanAggregator(int k) : k_(k) {}
  std::string name() const override { return "trimmed_mean"; }
  ModelParams Aggregate(std::span<const fed::ClientUpdate> updates) const override;

 private:
  int k_;
};

nlohmann::json ToJson(const StripVerdict& v);
nlohmann::json ToJson(const ClassClustering& c);

}  // namespace fssl::defense

#endif  // FSSL_DEFENSES_HPP_
