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

#include "fssl/injector.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "fssl/backdoor.hpp"
#include "fssl/color_space.hpp"
#include "fssl/errors.hpp"

namespace fssl::injector {
namespace nn = torch::nn;
namespace {

nn::Sequential DoubleConv(int64_t in, int64_t out) {
  const int64_t groups = out % 4 == 0 ? 4 : 1;
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)),
                        nn::GroupNorm(nn::GroupNormOptions(groups, out)), nn::ReLU(),
                        nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)),
                        nn::GroupNorm(nn::GroupNormOptions(groups, out)), nn::ReLU());
}

constexpr double kLogitClamp = 1e-4;

}  // namespace

InjectorNetImpl::InjectorNetImpl(InjectorOptions options) : options_(options) {
  const int64_t c = options_.width;
  Require(c >= 1, "injector width must be positive");
  Require(options_.max_perturbation >= 0 && options_.max_perturbation < 1,
          "injector max_perturbation must lie in [0, 1)");
  Require(options_.residual_pool >= 1, "injector residual_pool must be positive");
  enc1_ = register_module("enc1", DoubleConv(3, c));
  enc2_ = register_module("enc2", DoubleConv(c, 2 * c));
  bottleneck_ = register_module("bottleneck", DoubleConv(2 * c, 4 * c));
  up2_ = register_module("up2", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(4 * c, 2 * c, 2).stride(2)));
  dec2_ = register_module("dec2", DoubleConv(4 * c, 2 * c));
  up1_ = register_module("up1", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(2 * c, c, 2).stride(2)));
  dec1_ = register_module("dec1", DoubleConv(2 * c, c));
  out_ = register_module("out", nn::Conv2d(nn::Conv2dOptions(c, 3, 1)));
  torch::NoGradGuard no_grad;
  out_->weight.mul_(options_.output_init_scale);
  out_->bias.mul_(options_.output_init_scale);
}

torch::Tensor InjectorNetImpl::forward(const torch::Tensor& images) {
  Require(images.dim() == 4 && images.size(1) == 3, "injector expects [N,3,H,W]");
  Require(images.size(2) % 4 == 0 && images.size(3) % 4 == 0,
          "injector expects spatial size divisible by 4");
  const auto e1 = enc1_->forward(images);
  const auto e2 = enc2_->forward(torch::max_pool2d(e1, 2));
  const auto b = bottleneck_->forward(torch::max_pool2d(e2, 2));
  const auto d2 = dec2_->forward(torch::cat({up2_->forward(b), e2}, 1));
  const auto d1 = dec1_->forward(torch::cat({up1_->forward(d2), e1}, 1));
  auto residual = out_->forward(d1);
  if (options_.residual_pool > 1) {
    namespace F = torch::nn::functional;
    residual = F::interpolate(
        torch::avg_pool2d(residual, options_.residual_pool),
        F::InterpolateFuncOptions()
            .size(std::vector<int64_t>{images.size(2), images.size(3)})
            .mode(torch::kBilinear)
            .align_corners(false));
  }
  if (options_.max_perturbation > 0) {
    return (images + options_.max_perturbation * torch::tanh(residual)).clamp(0.0, 1.0);
  }
  return torch::sigmoid(torch::logit(images.clamp(kLogitClamp, 1.0 - kLogitClamp)) + residual);
}

InjectorNet MakeInjector(const InjectorOptions& options, std::uint64_t seed) {
  torch::manual_seed(seed);
  return InjectorNet(options);
}

InjectorNet Instantiate(const InjectorState& state) {
  InjectorNet net(state.options);
  LoadParams(*net, state.params);
  return net;
}

InjectorState Snapshot(const InjectorNet& net) {
  return {net->options(), ExtractParams(*net)};
}

torch::Tensor Inject(InjectorNet& net, const torch::Tensor& images, int64_t chunk) {
  torch::NoGradGuard no_grad;
  if (images.dim() == 3) return Inject(net, images.unsqueeze(0), chunk).squeeze(0);
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < images.size(0); i += chunk) {
    parts.push_back(net->forward(images.slice(0, i, std::min(images.size(0), i + chunk))));
  }
  return torch::cat(parts);
}

void InjectorConfig::Validate() const {
  Require(std::isfinite(alpha) && std::isfinite(beta) && std::isfinite(stealth_weight),
          "injector: weights must be finite");
  Require(alpha >= 0 && beta >= 0 && stealth_weight >= 0,
          "injector: weights must be non-negative");
  Require(epochs >= 0 && batch_size >= 1 && swd_slices >= 1,
          "injector: epochs, batch_size and swd_slices must be positive");
  Require(learning_rate >= 0, "injector: learning_rate must be non-negative");
}

torch::Tensor StealthLoss(Encoder& extractor, const torch::Tensor& poisoned,
                          const torch::Tensor& clean, const ot::SlicedWDConfig& swd) {
  Require(poisoned.size(0) == clean.size(0), "StealthLoss: batch sizes differ");
  const auto fp = extractor->Backbone(poisoned);
  torch::Tensor fc;
  {
    torch::NoGradGuard no_grad;
    fc = extractor->Backbone(clean);
  }
  return ot::SlicedWasserstein(ot::EmpiricalDistribution(fp), ot::EmpiricalDistribution(fc), swd);
}

ObjectiveTerms InjectorObjective(InjectorNet& net, const torch::Tensor& batch,
                                 const torch::Tensor& augmented,
                                 const ObjectiveContext& ctx,
                                 const InjectorConfig& config, std::uint64_t swd_seed) {
  Require(ctx.stealth_extractor && ctx.clean && ctx.backdoored,
          "InjectorObjective: encoders not set");
  const auto poisoned = net->forward(batch);
  ObjectiveTerms t;
  t.stealth = StealthLoss(*ctx.stealth_extractor, poisoned, batch,
                          {config.swd_slices, swd_seed});
  t.disentangle = color::DisentangleLoss(poisoned, augmented);
  backdoor::EncoderPair pair{*ctx.backdoored, *ctx.clean, ctx.center};
  t.align = backdoor::AlignLoss(pair, poisoned, ctx.targets);
  t.total = config.stealth_weight * t.stealth - config.alpha * t.disentangle +
            config.beta * t.align;
  return t;
}

InjectorTrainResult TrainInjector(InjectorNet& net, const torch::Tensor& data,
                                  const ObjectiveContext& ctx,
                                  const InjectorConfig& config, Rng& rng) {
  config.Validate();
  Require(data.size(0) >= 1, "TrainInjector: empty data");
  // Encoders are fixed during injector steps; gradients flow to the input
  // only.
  std::vector<std::pair<torch::Tensor, bool>> saved;
  for (Encoder* e : {ctx.stealth_extractor, ctx.clean, ctx.backdoored}) {
    for (auto& p : (*e)->parameters()) {
      saved.emplace_back(p, p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  net->train();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  InjectorTrainResult result;
  std::vector<int64_t> order(static_cast<std::size_t>(data.size(0)));
  std::iota(order.begin(), order.end(), 0);
  auto restore = [&] {
    for (auto& [p, rg] : saved) p.set_requires_grad(rg);
  };
  try {
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      rng.Shuffle(order);
      for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end = std::min(order.size(), off + static_cast<std::size_t>(config.batch_size));
        const auto idx = torch::tensor(std::vector<int64_t>(
            order.begin() + static_cast<std::ptrdiff_t>(off), order.begin() + static_cast<std::ptrdiff_t>(end)));
        const auto batch = data.index_select(0, idx);
        const auto augmented = ssl::AugmentBatch(batch, ctx.augment, rng).first;
        opt.zero_grad();
        auto terms = InjectorObjective(net, batch, augmented, ctx, config, rng.NextU64());
        const double value = terms.total.item<double>();
        if (!std::isfinite(value) || std::abs(value) > 1e6) {
          std::ostringstream os;
          os << "injector objective diverged at step " << result.steps << ": total=" << value
             << " stealth=" << terms.stealth.item<double>()
             << " disentangle=" << terms.disentangle.item<double>()
             << " align=" << terms.align.item<double>() << " (history " << result.total.size()
             << " steps)";
          throw TrainingError(os.str());
        }
        terms.total.backward();
        opt.step();
        result.total.push_back(value);
        result.stealth.push_back(terms.stealth.item<double>());
        result.disentangle.push_back(terms.disentangle.item<double>());
        result.align.push_back(terms.align.item<double>());
        ++result.steps;
      }
    }
  } catch (...) {
    restore();
    throw;
  }
  restore();
  return result;
}

double PretrainIdentity(InjectorNet& net, const torch::Tensor& data, int steps,
                        double learning_rate, int batch_size, Rng& rng) {
  Require(data.size(0) >= 1, "PretrainIdentity: empty data");
  net->train();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(learning_rate));
  double last = 0.0;
  for (int s = 0; s < steps; ++s) {
    std::vector<int64_t> idx;
    for (int k = 0; k < batch_size; ++k) idx.push_back(rng.UniformInt(0, data.size(0) - 1));
    const auto batch = data.index_select(0, torch::tensor(idx));
    opt.zero_grad();
    auto loss = torch::mse_loss(net->forward(batch), batch);
    loss.backward();
    opt.step();
    last = loss.item<double>();
  }
  return last;
}

}  // namespace fssl::injector
