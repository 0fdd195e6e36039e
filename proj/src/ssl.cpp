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

#include "fssl/ssl.hpp"

#include <cmath>
#include <sstream>

#include "fssl/color_space.hpp"
#include "fssl/errors.hpp"

namespace fssl::ssl {
namespace F = torch::nn::functional;

void AugmentConfig::Validate() const {
  Require(crop_scale_min > 0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0,
          "augment: crop scale range must satisfy 0 < min <= max <= 1");
  Require(crop_ratio_min > 0 && crop_ratio_min <= crop_ratio_max,
          "augment: crop ratio range invalid");
  Require(brightness >= 0 && contrast >= 0 && saturation >= 0 && hue >= 0,
          "augment: jitter ranges must be non-negative");
  Require(hue <= 0.5, "augment: hue range must be <= 0.5");
  for (double p : {flip_prob, jitter_prob, grayscale_prob}) {
    Require(p >= 0 && p <= 1, "augment: probabilities must lie in [0, 1]");
  }
}

AugmentConfig AugmentConfig::Identity() {
  AugmentConfig c;
  c.crop_scale_min = c.crop_scale_max = 1.0;
  c.crop_ratio_min = c.crop_ratio_max = 1.0;
  c.flip_prob = 0.0;
  c.jitter_prob = 0.0;
  c.brightness = c.contrast = c.saturation = c.hue = 0.0;
  c.grayscale_prob = 0.0;
  return c;
}

void SSLConfig::Validate() const {
  Require(batch_size >= 2, "ssl: batch_size must be >= 2");
  Require(learning_rate >= 0, "ssl: learning_rate must be non-negative");
  Require(temperature > 0, "ssl: temperature must be positive");
  Require(local_epochs >= 1, "ssl: local_epochs must be >= 1");
  Require(momentum_decay >= 0 && momentum_decay <= 1, "ssl: momentum_decay in [0,1]");
  Require(sgd_momentum >= 0 && sgd_momentum < 1, "ssl: sgd_momentum in [0,1)");
  augment.Validate();
}

AugmentParams DrawAugmentParams(const AugmentConfig& c, Rng& rng) {
  AugmentParams p;
  // Random resized crop with the usual rejection loop; fall back to the
  // full frame.
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double scale = rng.Uniform(c.crop_scale_min, c.crop_scale_max);
    const double log_ratio =
        rng.Uniform(std::log(c.crop_ratio_min), std::log(c.crop_ratio_max));
    const double ratio = std::exp(log_ratio);
    const double w = std::sqrt(scale * ratio);
    const double h = std::sqrt(scale / ratio);
    if (w <= 1.0 && h <= 1.0) {
      p.crop_w = w;
      p.crop_h = h;
      p.crop_x = rng.Uniform(0.0, 1.0 - w);
      p.crop_y = rng.Uniform(0.0, 1.0 - h);
      break;
    }
  }
  p.flipped = rng.Bernoulli(c.flip_prob);
  p.jittered = rng.Bernoulli(c.jitter_prob);
  if (p.jittered) {
    p.brightness = rng.Uniform(std::max(0.0, 1.0 - c.brightness), 1.0 + c.brightness);
    p.contrast = rng.Uniform(std::max(0.0, 1.0 - c.contrast), 1.0 + c.contrast);
    p.saturation = rng.Uniform(std::max(0.0, 1.0 - c.saturation), 1.0 + c.saturation);
    p.hue_shift = rng.Uniform(-c.hue, c.hue);
  }
  p.grayscale = rng.Bernoulli(c.grayscale_prob);
  return p;
}

namespace {

torch::Tensor Column(std::span<const AugmentParams> params,
                     double (*get)(const AugmentParams&), const torch::Tensor& like) {
  std::vector<double> v;
  v.reserve(params.size());
  for (const auto& p : params) v.push_back(get(p));
  return torch::tensor(v, torch::kFloat64).to(like.scalar_type()).view({-1, 1, 1, 1});
}

torch::Tensor Mask(std::span<const AugmentParams> params,
                   bool (*pred)(const AugmentParams&)) {
  std::vector<int64_t> v;
  for (const auto& p : params) v.push_back(pred(p) ? 1 : 0);
  return torch::tensor(v).to(torch::kBool).view({-1, 1, 1, 1});
}

torch::Tensor Gray3(const torch::Tensor& x) {
  return color::Luminance(x).unsqueeze(1).expand_as(x);
}

}  // namespace

torch::Tensor ApplyAugment(const torch::Tensor& images,
                           std::span<const AugmentParams> params) {
  Require(images.dim() == 4 && images.size(1) == 3, "augment: expects [N,3,H,W]");
  Require(static_cast<int64_t>(params.size()) == images.size(0),
          "augment: one parameter set per image required");
  torch::Tensor x = images;
  const int64_t n = images.size(0);

  const auto geometric = Mask(params, [](const AugmentParams& p) {
    return p.flipped || p.crop_w != 1.0 || p.crop_h != 1.0;
  });
  if (geometric.any().item<bool>()) {
    auto theta = torch::zeros({n, 2, 3}, torch::kFloat64);
    auto t = theta.accessor<double, 3>();
    for (int64_t i = 0; i < n; ++i) {
      const auto& p = params[static_cast<std::size_t>(i)];
      t[i][0][0] = p.crop_w * (p.flipped ? -1.0 : 1.0);
      t[i][0][2] = 2.0 * (p.crop_x + p.crop_w / 2.0) - 1.0;
      t[i][1][1] = p.crop_h;
      t[i][1][2] = 2.0 * (p.crop_y + p.crop_h / 2.0) - 1.0;
    }
    theta = theta.to(x.scalar_type());
    const auto grid = F::affine_grid(theta, x.sizes(), /*align_corners=*/false);
    const auto warped = F::grid_sample(
        x, grid, F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));
    x = torch::where(geometric, warped, x);
  }

  const auto jit = Mask(params, [](const AugmentParams& p) { return p.jittered; });
  if (jit.any().item<bool>()) {
    const auto b = Column(params, [](const AugmentParams& p) { return p.brightness; }, x);
    x = torch::where(jit, (x * b).clamp(0, 1), x);
    const auto c = Column(params, [](const AugmentParams& p) { return p.contrast; }, x);
    const auto mean = color::Luminance(x).mean({1, 2}).view({-1, 1, 1, 1});
    x = torch::where(jit, ((x - mean) * c + mean).clamp(0, 1), x);
    const auto s = Column(params, [](const AugmentParams& p) { return p.saturation; }, x);
    const auto g = Gray3(x);
    x = torch::where(jit, (g + (x - g) * s).clamp(0, 1), x);
    const auto h = Column(params, [](const AugmentParams& p) { return p.hue_shift; }, x).view({-1, 1, 1});
    const auto hsv = color::RgbToHsv(x);
    auto shifted = hsv.h + h;
    shifted = shifted - torch::floor(shifted);
    x = torch::where(jit, color::HsvToRgb(shifted, hsv.s, hsv.v).clamp(0, 1), x);
  }

  const auto gray = Mask(params, [](const AugmentParams& p) { return p.grayscale; });
  if (gray.any().item<bool>()) x = torch::where(gray, Gray3(x), x);
  return x;
}

std::pair<torch::Tensor, std::vector<AugmentParams>> AugmentBatch(
    const torch::Tensor& images, const AugmentConfig& config, Rng& rng) {
  std::vector<AugmentParams> params;
  params.reserve(static_cast<std::size_t>(images.size(0)));
  for (int64_t i = 0; i < images.size(0); ++i) params.push_back(DrawAugmentParams(config, rng));
  return {ApplyAugment(images, params), std::move(params)};
}

std::pair<torch::Tensor, AugmentParams> AugmentView(const torch::Tensor& image,
                                                    const AugmentConfig& config,
                                                    Rng& rng) {
  Require(image.dim() == 3, "AugmentView: expects [3,H,W]");
  auto [batch, params] = AugmentBatch(image.unsqueeze(0), config, rng);
  return {batch.squeeze(0), params.front()};
}

AugmentedPair MakeAugmentedPair(const torch::Tensor& image,
                                const AugmentConfig& config, Rng& rng) {
  auto [a, pa] = AugmentView(image, config, rng);
  auto [b, pb] = AugmentView(image, config, rng);
  return {a, b, pa, pb};
}

Cosine CosineSimilarity(std::span<const double> u, std::span<const double> v) {
  Require(u.size() == v.size(), "CosineSimilarity: dimension mismatch");
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return {0.0, true};
  const double c = dot / (std::sqrt(nu) * std::sqrt(nv));
  return {std::clamp(c, -1.0, 1.0), false};
}

torch::Tensor CosineSimilarityRows(const torch::Tensor& a, const torch::Tensor& b) {
  Require(a.sizes().equals(b.sizes()) && a.dim() == 2,
          "CosineSimilarityRows: expects two [N, d] tensors of equal shape");
  const auto dot = (a * b).sum(1);
  const auto na = a.square().sum(1);
  const auto nb = b.square().sum(1);
  const auto denom = torch::sqrt((na * nb).clamp_min(1e-24));
  return torch::where((na > 0).logical_and(nb > 0), dot / denom, torch::zeros_like(dot));
}

torch::Tensor ContrastiveLoss(const torch::Tensor& z1, const torch::Tensor& z2,
                              double temperature) {
  Require(z1.dim() == 2 && z1.sizes().equals(z2.sizes()),
          "ContrastiveLoss: z1 and z2 must both be [N, d]");
  Require(z1.size(0) >= 2, "ContrastiveLoss: N >= 2 required (no negatives otherwise)");
  Require(temperature > 0, "ContrastiveLoss: temperature must be positive");
  const int64_t n = z1.size(0);
  const auto z = F::normalize(torch::cat({z1, z2}), F::NormalizeFuncOptions().dim(1).eps(1e-12));
  auto logits = z.matmul(z.t()) / temperature;
  const auto self = torch::eye(2 * n, torch::TensorOptions().dtype(torch::kBool));
  logits = logits.masked_fill(self, -std::numeric_limits<double>::infinity());
  const auto idx = torch::arange(2 * n, torch::kLong);
  const auto positives = torch::cat({idx.slice(0, n), idx.slice(0, 0, n)});
  return F::cross_entropy(logits, positives);
}

torch::Tensor ContrastiveBatchLoss(Encoder& encoder, const torch::Tensor& batch,
                                   const SSLConfig& config, Rng& rng) {
  auto v1 = AugmentBatch(batch, config.augment, rng).first;
  auto v2 = AugmentBatch(batch, config.augment, rng).first;
  const auto z = encoder->forward(torch::cat({v1, v2}));
  const int64_t n = batch.size(0);
  return ContrastiveLoss(z.slice(0, 0, n), z.slice(0, n), config.temperature);
}

LocalTrainResult BenignLocalTrain(const EncoderState& start,
                                  const torch::Tensor& dataset,
                                  std::span<const int64_t> indices,
                                  const SSLConfig& config, Rng& rng) {
  config.Validate();
  Require(!indices.empty(), "BenignLocalTrain: empty local dataset");
  Encoder encoder = Instantiate(start);
  encoder->train();
  torch::optim::SGD opt(encoder->parameters(),
                        torch::optim::SGDOptions(config.learning_rate).momentum(config.sgd_momentum));
  LocalTrainResult result;
  std::vector<int64_t> order(indices.begin(), indices.end());
  for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
    rng.Shuffle(order);
    double epoch_sum = 0.0;
    int64_t epoch_batches = 0;
    for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), off + static_cast<std::size_t>(config.batch_size));
      if (end - off < 2) continue;  // a lone sample has no negatives
      const auto idx = torch::tensor(std::vector<int64_t>(order.begin() + static_cast<std::ptrdiff_t>(off),
                                                          order.begin() + static_cast<std::ptrdiff_t>(end)));
      const auto batch = dataset.index_select(0, idx);
      opt.zero_grad();
      auto loss = ContrastiveBatchLoss(encoder, batch, config, rng);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "contrastive loss is non-finite (" << value << ") at epoch " << epoch
           << ", batch " << epoch_batches;
        throw TrainingError(os.str());
      }
      loss.backward();
      opt.step();
      result.batch_losses.push_back(value);
      epoch_sum += value;
      ++epoch_batches;
      ++result.steps;
    }
    result.epoch_losses.push_back(epoch_batches ? epoch_sum / static_cast<double>(epoch_batches) : 0.0);
  }
  result.state = Snapshot(encoder, start.role);
  return result;
}

}  // namespace fssl::ssl
