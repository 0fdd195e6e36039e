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

#ifndef FSSL_INJECTOR_HPP_
#define FSSL_INJECTOR_HPP_

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "fssl/encoder.hpp"
#include "fssl/ot_distance.hpp"
#include "fssl/params.hpp"
#include "fssl/rng.hpp"
#include "fssl/ssl.hpp"

namespace fssl::injector {

struct InjectorOptions {
  int width = 16;  // channels of the first U-Net level
  // Scale applied to the default initialisation of the output convolution.
  double output_init_scale = 0.1;
  // When positive, x' = clamp(x + m * tanh(r(x)), 0, 1) bounds every pixel
  // change by m. Zero selects the unbounded logit-space residual.
  double max_perturbation = 0.0;
  // Residual low-pass: average-pool by this factor, then bilinear upsample.
  // 1 keeps the full-resolution residual.
  int residual_pool = 1;
};

// Two-level U-Net with skip connections predicting a residual r(x). By
// default the residual acts in logit space, so the output
// sigmoid(logit(x) + r(x)) always lies in (0, 1) and equals x when r = 0.
class InjectorNetImpl : public torch::nn::Module {
 public:
  explicit InjectorNetImpl(InjectorOptions options = {});
  torch::Tensor forward(const torch::Tensor& images);
  const InjectorOptions& options() const { return options_; }

 private:
  InjectorOptions options_;
  torch::nn::Sequential enc1_{nullptr}, enc2_{nullptr}, bottleneck_{nullptr};
  torch::nn::ConvTranspose2d up2_{nullptr}, up1_{nullptr};
  torch::nn::Sequential dec2_{nullptr}, dec1_{nullptr};
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(InjectorNet);

struct InjectorState {
  InjectorOptions options;
  ModelParams params;
};

InjectorNet MakeInjector(const InjectorOptions& options, std::uint64_t seed);
InjectorNet Instantiate(const InjectorState& state);
InjectorState Snapshot(const InjectorNet& net);

// x' = I(x) for a [N, 3, H, W] or [3, H, W] tensor, without autograd.
torch::Tensor Inject(InjectorNet& net, const torch::Tensor& images, int64_t chunk = 256);

struct InjectorConfig {
  double alpha = 1.0;           // disentanglement weight (enters with a minus sign)
  double beta = 1.0;            // alignment weight
  double stealth_weight = 1.0;  // 0 ablates the stealthiness term
  int epochs = 1;               // passes over the local data per call
  int batch_size = 32;
  double learning_rate = 1e-3;  // Adam
  int swd_slices = 128;
  int identity_pretrain_steps = 200;
  double identity_pretrain_lr = 1e-3;

  void Validate() const;
};

// Sliced Wasserstein distance between the frozen extractor's backbone
// features of the poisoned and the clean batch.
torch::Tensor StealthLoss(Encoder& extractor, const torch::Tensor& poisoned,
                          const torch::Tensor& clean, const ot::SlicedWDConfig& swd);

struct ObjectiveTerms {
  torch::Tensor total, stealth, disentangle, align;
};

// Everything the injector objective reads besides the injector itself.
struct ObjectiveContext {
  Encoder* stealth_extractor = nullptr;  // frozen F
  Encoder* clean = nullptr;              // frozen reference encoder
  Encoder* backdoored = nullptr;         // current backdoored encoder, fixed during the step
  torch::Tensor targets;                 // target exemplars [T, 3, H, W]
  ssl::AugmentConfig augment;
  torch::Tensor center;                  // feature center for L_align, may be undefined
};

// stealth_weight * L_ste - alpha * L_dis + beta * L_align on one batch.
// `augmented` is the augmented counterpart of `batch` used by L_dis.
ObjectiveTerms InjectorObjective(InjectorNet& net, const torch::Tensor& batch,
                                 const torch::Tensor& augmented,
                                 const ObjectiveContext& ctx,
                                 const InjectorConfig& config, std::uint64_t swd_seed);

struct InjectorTrainResult {
  std::vector<double> total, stealth, disentangle, align;
  int64_t steps = 0;
};

// Adam on the injector objective over `data`; encoders stay fixed.
InjectorTrainResult TrainInjector(InjectorNet& net, const torch::Tensor& data,
                                  const ObjectiveContext& ctx,
                                  const InjectorConfig& config, Rng& rng);

// Brief reconstruction pre-training so the injector starts near identity.
double PretrainIdentity(InjectorNet& net, const torch::Tensor& data, int steps,
                        double learning_rate, int batch_size, Rng& rng);

}  // namespace fssl::injector

#endif  // FSSL_INJECTOR_HPP_
