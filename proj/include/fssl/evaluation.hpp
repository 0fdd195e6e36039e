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

#ifndef FSSL_EVALUATION_HPP_
#define FSSL_EVALUATION_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "fssl/encoder.hpp"
#include "fssl/rng.hpp"

namespace fssl::eval {

struct ProbeConfig {
  int hidden = 64;
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 1e-2;  // Adam
};

// Frozen encoder + 2-layer perceptron head over standardised backbone
// features.
struct DownstreamProbe {
  Encoder encoder{nullptr};
  torch::nn::Sequential head{nullptr};
  torch::Tensor feature_mean, feature_std;
  int n_classes = 0;
  std::vector<double> train_accuracy;  // percent, one entry per epoch

  torch::Tensor LogitsFromFeatures(const torch::Tensor& features) const;
  torch::Tensor Logits(const torch::Tensor& images) const;
  torch::Tensor Predict(const torch::Tensor& images) const;
  // Penultimate activations of the head.
  torch::Tensor Hidden(const torch::Tensor& images) const;
};

// Head trained with cross-entropy on features of `images`; the encoder is
// frozen first.
DownstreamProbe TrainProbe(Encoder encoder, const torch::Tensor& images,
                           const torch::Tensor& labels, int n_classes,
                           const ProbeConfig& config, Rng& rng);

// Same as TrainProbe but from precomputed features (used for stub tests).
DownstreamProbe TrainProbeOnFeatures(const torch::Tensor& features,
                                     const torch::Tensor& labels, int n_classes,
                                     const ProbeConfig& config, Rng& rng);

struct Prediction {
  int64_t id = 0;
  int64_t true_label = 0;
  int64_t predicted = 0;
  bool triggered = false;
};

double AccuracyPercent(std::span<const Prediction> log);

std::vector<Prediction> PredictAll(const DownstreamProbe& probe, const torch::Tensor& images,
                                   const torch::Tensor& labels, bool triggered);

using Trigger = std::function<torch::Tensor(const torch::Tensor&)>;

struct AsrResult {
  double percent = 0.0;
  std::vector<Prediction> log;  // triggered predictions, target class excluded
};

// Share of triggered non-target test images predicted as `target_class`.
AsrResult ComputeAsr(const DownstreamProbe& probe, const torch::Tensor& images,
                     const torch::Tensor& labels, const Trigger& trigger, int target_class);

// Windowed SSIM (11x11 Gaussian, sigma 1.5, K1 = 0.01, K2 = 0.03, L = 1),
// averaged over valid windows and channels. [3,H,W] or [N,3,H,W]; batches
// return the mean over images.
double Ssim(const torch::Tensor& a, const torch::Tensor& b);
// Per-image SSIM for [N,3,H,W].
torch::Tensor SsimPerImage(const torch::Tensor& a, const torch::Tensor& b);

// Reported instead of +inf for identical images.
inline constexpr double kPsnrCap = 100.0;

double Psnr(const torch::Tensor& a, const torch::Tensor& b);
torch::Tensor PsnrPerImage(const torch::Tensor& a, const torch::Tensor& b);

// Mean over images of ||F(a) - F(b)||_2 / feature_dim on backbone features.
double PerceptualProxy(Encoder& encoder, const torch::Tensor& a, const torch::Tensor& b);
double PerceptualProxyFromFeatures(const torch::Tensor& fa, const torch::Tensor& fb);

struct EntanglementConfig {
  double train_fraction = 0.7;
  int epochs = 15;
  int batch_size = 32;
  double learning_rate = 2e-3;
  int width = 16;
};

struct EntanglementResult {
  double accuracy = 0.0;  // held-out, in [0, 1]
  int64_t n_train = 0, n_test = 0;
};

// Trains a small CNN to tell set A from set B and reports held-out
// accuracy. ~0.5 means the sets are entangled.
EntanglementResult EntanglementProbe(const torch::Tensor& set_a, const torch::Tensor& set_b,
                                     const EntanglementConfig& config, Rng& rng);

struct PcaResult {
  torch::Tensor coords;                // [n, k]
  torch::Tensor components;            // [d, k], orthonormal columns
  torch::Tensor mean;                  // [d]
  std::vector<double> explained_ratio; // k entries
};

// Mean-centred projection on the top principal directions (eigh of the
// covariance, float64). Each direction's largest-magnitude coordinate is
// made positive.
PcaResult PcaEmbed(const torch::Tensor& features, int out_dims = 2);

// ||mean_a - mean_b|| / pooled standard deviation, where the pooled
// variance is the average of both sets' per-axis variances.
double CentroidSeparation(const torch::Tensor& coords_a, const torch::Tensor& coords_b);

nlohmann::json ToJson(const Prediction& p);

}  // namespace fssl::eval

#endif  // FSSL_EVALUATION_HPP_
