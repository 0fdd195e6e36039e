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

#ifndef FSSL_ENCODER_HPP_
#define FSSL_ENCODER_HPP_

#include <cstdint>
#include <string>

#include <torch/torch.h>

#include "fssl/params.hpp"

namespace fssl {

enum class EncoderArch {
  kConv4,     // four conv blocks + global average pool (desk default)
  kResNet18,  // CIFAR-style ResNet-18 with GroupNorm
  kMlp,       // flatten + dense layers; stub scale for tests
};

EncoderArch ParseEncoderArch(const std::string& name);
std::string ToString(EncoderArch arch);

struct EncoderOptions {
  EncoderArch arch = EncoderArch::kConv4;
  int width = 16;            // base channel count (hidden units for kMlp)
  int projection_dim = 32;   // output of the 2-layer projection head
  int image_size = 32;       // needed by kMlp only
  int mlp_feature_dim = 16;  // backbone output of kMlp
};

// f(x; theta). Backbone() gives the representation used by downstream
// probes and attack alignment; forward() adds the projection head used by
// the contrastive objective.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(EncoderOptions options = {});

  torch::Tensor Backbone(const torch::Tensor& images);
  torch::Tensor Project(const torch::Tensor& features);
  torch::Tensor forward(const torch::Tensor& images) { return Project(Backbone(images)); }

  int64_t feature_dim() const { return feature_dim_; }
  const EncoderOptions& options() const { return options_; }

 private:
  void Build();

  EncoderOptions options_;
  int64_t feature_dim_ = 0;
  torch::nn::Sequential backbone_{nullptr};
  torch::nn::Sequential projector_{nullptr};
};
TORCH_MODULE(Encoder);

enum class EncoderRole { kClean, kBackdoored };

// Value snapshot of an encoder: architecture + parameters + role.
struct EncoderState {
  EncoderOptions options;
  ModelParams params;
  EncoderRole role = EncoderRole::kClean;
};

// Fresh encoder with weights drawn deterministically from `seed`.
Encoder MakeEncoder(const EncoderOptions& options, std::uint64_t seed);
EncoderState InitEncoderState(const EncoderOptions& options, std::uint64_t seed);

// Materialises a module holding a copy of the state's parameters.
Encoder Instantiate(const EncoderState& state);
EncoderState Snapshot(const Encoder& encoder, EncoderRole role);

// Freezes every parameter of `encoder` and puts it in eval mode.
void Freeze(Encoder& encoder);

// Backbone features for a (possibly large) image tensor, evaluated in
// chunks without autograd.
torch::Tensor ExtractFeatures(Encoder& encoder, const torch::Tensor& images,
                              int64_t chunk = 256);

}  // namespace fssl

#endif  // FSSL_ENCODER_HPP_
