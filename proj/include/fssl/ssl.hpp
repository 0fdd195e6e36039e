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

#ifndef FSSL_SSL_HPP_
#define FSSL_SSL_HPP_

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "fssl/encoder.hpp"
#include "fssl/rng.hpp"

namespace fssl::ssl {

// Strengths of the SimCLR-style augmentation pipeline:
// random resized crop -> horizontal flip -> colour jitter -> grayscale.
struct AugmentConfig {
  double crop_scale_min = 0.2;
  double crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;
  double flip_prob = 0.5;
  double jitter_prob = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double grayscale_prob = 0.2;

  void Validate() const;
  // No crop, no flip, no jitter, no grayscale.
  static AugmentConfig Identity();
};

struct SSLConfig {
  int batch_size = 64;
  double learning_rate = 0.001;
  double sgd_momentum = 0.0;
  double temperature = 0.5;
  int local_epochs = 3;
  // Momentum-encoder decay. Kept for momentum-based objectives; the
  // contrastive objective implemented here does not read it.
  double momentum_decay = 0.99;
  AugmentConfig augment;

  void Validate() const;
};

// Transform parameters actually drawn for one view. Identity values
// (factor 1, shift 0) are recorded for stages that were skipped.
struct AugmentParams {
  double crop_x = 0.0, crop_y = 0.0, crop_w = 1.0, crop_h = 1.0;  // fractions
  bool flipped = false;
  bool jittered = false;
  double brightness = 1.0, contrast = 1.0, saturation = 1.0, hue_shift = 0.0;
  bool grayscale = false;

  bool operator==(const AugmentParams&) const = default;
};

struct AugmentedPair {
  torch::Tensor first, second;  // [3, H, W]
  AugmentParams first_params, second_params;
};

AugmentParams DrawAugmentParams(const AugmentConfig& config, Rng& rng);

// Applies per-sample parameters to a [N, 3, H, W] batch in [0, 1].
torch::Tensor ApplyAugment(const torch::Tensor& images,
                           std::span<const AugmentParams> params);

std::pair<torch::Tensor, AugmentParams> AugmentView(const torch::Tensor& image,
                                                    const AugmentConfig& config,
                                                    Rng& rng);
std::pair<torch::Tensor, std::vector<AugmentParams>> AugmentBatch(
    const torch::Tensor& images, const AugmentConfig& config, Rng& rng);
AugmentedPair MakeAugmentedPair(const torch::Tensor& image,
                                const AugmentConfig& config, Rng& rng);

struct Cosine {
  double value = 0.0;
  bool degenerate = false;  // one of the inputs had zero norm; value is 0
};

Cosine CosineSimilarity(std::span<const double> u, std::span<const double> v);

// Row-wise cosine similarity of two [N, d] tensors (differentiable). Rows
// with zero norm give 0.
torch::Tensor CosineSimilarityRows(const torch::Tensor& a, const torch::Tensor& b);

// NT-Xent over the 2N views; inputs are L2-normalised internally.
torch::Tensor ContrastiveLoss(const torch::Tensor& z1, const torch::Tensor& z2,
                              double temperature);

struct LocalTrainResult {
  EncoderState state;
  std::vector<double> batch_losses;
  std::vector<double> epoch_losses;  // mean loss per epoch
  int64_t steps = 0;
};

// Per-step loss for one contrastive mini-batch: two fresh views per image.
torch::Tensor ContrastiveBatchLoss(Encoder& encoder, const torch::Tensor& batch,
                                   const SSLConfig& config, Rng& rng);

// e epochs of mini-batch SGD on the contrastive objective over `indices`
// of `dataset` ([M, 3, H, W]).
LocalTrainResult BenignLocalTrain(const EncoderState& start,
                                  const torch::Tensor& dataset,
                                  std::span<const int64_t> indices,
                                  const SSLConfig& config, Rng& rng);

}  // namespace fssl::ssl

#endif  // FSSL_SSL_HPP_
