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

#include "fssl/encoder.hpp"

#include "fssl/errors.hpp"

namespace fssl {
namespace nn = torch::nn;
namespace {

int64_t Groups(int64_t channels) { return channels % 4 == 0 ? 4 : 1; }

void AppendConvBlock(nn::Sequential& seq, int64_t in, int64_t out, bool pool) {
  seq->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)));
  seq->push_back(nn::GroupNorm(nn::GroupNormOptions(Groups(out), out)));
  seq->push_back(nn::ReLU());
  if (pool) seq->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
}

class BasicBlockImpl : public nn::Module {
 public:
  BasicBlockImpl(int64_t in, int64_t out, int64_t stride) {
    conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)));
    norm1_ = register_module("norm1", nn::GroupNorm(nn::GroupNormOptions(Groups(out), out)));
    conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1).bias(false)));
    norm2_ = register_module("norm2", nn::GroupNorm(nn::GroupNormOptions(Groups(out), out)));
    if (stride != 1 || in != out) {
      shortcut_ = register_module(
          "shortcut",
          nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
                         nn::GroupNorm(nn::GroupNormOptions(Groups(out), out))));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = torch::relu(norm1_(conv1_(x)));
    y = norm2_(conv2_(y));
    return torch::relu(y + (shortcut_ ? shortcut_->forward(x) : x));
  }

 private:
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(BasicBlock);

}  // namespace

EncoderArch ParseEncoderArch(const std::string& name) {
  if (name == "conv4") return EncoderArch::kConv4;
  if (name == "resnet18") return EncoderArch::kResNet18;
  if (name == "mlp") return EncoderArch::kMlp;
  throw ContractViolation("unknown encoder architecture '" + name + "'");
}

std::string ToString(EncoderArch arch) {
  switch (arch) {
    case EncoderArch::kConv4: return "conv4";
    case EncoderArch::kResNet18: return "resnet18";
    case EncoderArch::kMlp: return "mlp";
  }
  return "?";
}

EncoderImpl::EncoderImpl(EncoderOptions options) : options_(options) { Build(); }

void EncoderImpl::Build() {
  const int64_t w = options_.width;
  Require(w >= 1, "encoder width must be positive");
  switch (options_.arch) {
    case EncoderArch::kConv4:
      backbone_ = nn::Sequential();
      AppendConvBlock(backbone_, 3, w, true);
      AppendConvBlock(backbone_, w, 2 * w, true);
      AppendConvBlock(backbone_, 2 * w, 4 * w, true);
      AppendConvBlock(backbone_, 4 * w, 4 * w, false);
      backbone_->push_back(nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions(1)));
      backbone_->push_back(nn::Flatten());
      feature_dim_ = 4 * w;
      break;
    case EncoderArch::kResNet18: {
      backbone_ = nn::Sequential(
          nn::Conv2d(nn::Conv2dOptions(3, w, 3).padding(1).bias(false)),
          nn::GroupNorm(nn::GroupNormOptions(Groups(w), w)), nn::ReLU());
      int64_t in = w;
      const int64_t widths[4] = {w, 2 * w, 4 * w, 8 * w};
      for (int stage = 0; stage < 4; ++stage) {
        for (int b = 0; b < 2; ++b) {
          const int64_t stride = (stage > 0 && b == 0) ? 2 : 1;
          backbone_->push_back(BasicBlock(in, widths[stage], stride));
          in = widths[stage];
        }
      }
      backbone_->push_back(nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions(1)));
      backbone_->push_back(nn::Flatten());
      feature_dim_ = 8 * w;
      break;
    }
    case EncoderArch::kMlp: {
      const int64_t in = 3LL * options_.image_size * options_.image_size;
      backbone_ = nn::Sequential(nn::Flatten(), nn::Linear(in, w), nn::ReLU(),
                                 nn::Linear(w, options_.mlp_feature_dim));
      feature_dim_ = options_.mlp_feature_dim;
      break;
    }
  }
  projector_ = nn::Sequential(nn::Linear(feature_dim_, feature_dim_), nn::ReLU(),
                              nn::Linear(feature_dim_, options_.projection_dim));
  register_module("backbone", backbone_);
  register_module("projector", projector_);
}

torch::Tensor EncoderImpl::Backbone(const torch::Tensor& images) {
  return backbone_->forward(images);
}

torch::Tensor EncoderImpl::Project(const torch::Tensor& features) {
  return projector_->forward(features);
}

Encoder MakeEncoder(const EncoderOptions& options, std::uint64_t seed) {
  torch::manual_seed(seed);
  return Encoder(options);
}

EncoderState InitEncoderState(const EncoderOptions& options, std::uint64_t seed) {
  return Snapshot(MakeEncoder(options, seed), EncoderRole::kClean);
}

Encoder Instantiate(const EncoderState& state) {
  Encoder enc(state.options);
  LoadParams(*enc, state.params);
  return enc;
}

EncoderState Snapshot(const Encoder& encoder, EncoderRole role) {
  return {encoder->options(), ExtractParams(*encoder), role};
}

void Freeze(Encoder& encoder) {
  for (auto& p : encoder->parameters()) p.set_requires_grad(false);
  encoder->eval();
}

torch::Tensor ExtractFeatures(Encoder& encoder, const torch::Tensor& images,
                              int64_t chunk) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < images.size(0); i += chunk) {
    const int64_t end = std::min(images.size(0), i + chunk);
    parts.push_back(encoder->Backbone(images.slice(0, i, end)));
  }
  if (parts.empty()) return torch::zeros({0, encoder->feature_dim()});
  return torch::cat(parts);
}

}  // namespace fssl
