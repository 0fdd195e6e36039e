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

#include "fssl/evaluation.hpp"

#include <cmath>
#include <numeric>

#include "fssl/errors.hpp"

namespace fssl::eval {
namespace nn = torch::nn;
namespace F = torch::nn::functional;

torch::Tensor DownstreamProbe::LogitsFromFeatures(const torch::Tensor& features) const {
  torch::NoGradGuard no_grad;
  auto h = head;
  h->eval();
  return h->forward((features - feature_mean) / feature_std);
}

torch::Tensor DownstreamProbe::Logits(const torch::Tensor& images) const {
  auto enc = encoder;
  return LogitsFromFeatures(ExtractFeatures(enc, images));
}

torch::Tensor DownstreamProbe::Predict(const torch::Tensor& images) const {
  return Logits(images).argmax(1);
}

torch::Tensor DownstreamProbe::Hidden(const torch::Tensor& images) const {
  torch::NoGradGuard no_grad;
  auto enc = encoder;
  const auto x = (ExtractFeatures(enc, images) - feature_mean) / feature_std;
  auto h = head;
  return torch::relu(h[0]->as<nn::Linear>()->forward(x));
}

namespace {

nn::Sequential MakeHead(int64_t in, int hidden, int classes) {
  return nn::Sequential(nn::Linear(in, hidden), nn::ReLU(), nn::Linear(hidden, classes));
}

double TrainHead(nn::Sequential& head, const torch::Tensor& x, const torch::Tensor& y,
                 const ProbeConfig& config, Rng& rng, std::vector<double>& history) {
  torch::optim::Adam opt(head->parameters(), torch::optim::AdamOptions(config.learning_rate));
  std::vector<int64_t> order(static_cast<std::size_t>(x.size(0)));
  std::iota(order.begin(), order.end(), 0);
  double acc = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    head->train();
    rng.Shuffle(order);
    for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), off + static_cast<std::size_t>(config.batch_size));
      const auto idx = torch::tensor(std::vector<int64_t>(order.begin() + static_cast<std::ptrdiff_t>(off),
                                                          order.begin() + static_cast<std::ptrdiff_t>(end)));
      opt.zero_grad();
      auto loss = F::cross_entropy(head->forward(x.index_select(0, idx)), y.index_select(0, idx));
      if (!std::isfinite(loss.item<double>())) throw TrainingError("probe training diverged");
      loss.backward();
      opt.step();
    }
    torch::NoGradGuard no_grad;
    head->eval();
    acc = 100.0 * head->forward(x).argmax(1).eq(y).to(torch::kFloat64).mean().item<double>();
    history.push_back(acc);
  }
  return acc;
}

}  // namespace

DownstreamProbe TrainProbeOnFeatures(const torch::Tensor& features, const torch::Tensor& labels,
                                     int n_classes, const ProbeConfig& config, Rng& rng) {
  Require(features.dim() == 2 && features.size(0) == labels.size(0) && features.size(0) > 0,
          "TrainProbe: features/labels mismatch");
  Require(n_classes >= 2, "TrainProbe: need at least two classes");
  DownstreamProbe probe;
  probe.n_classes = n_classes;
  const auto f = features.to(torch::kFloat32);
  probe.feature_mean = f.mean(0);
  probe.feature_std = f.std(0, /*unbiased=*/false).clamp_min(1e-6);
  torch::manual_seed(rng.NextU64());
  probe.head = MakeHead(f.size(1), config.hidden, n_classes);
  TrainHead(probe.head, (f - probe.feature_mean) / probe.feature_std, labels.to(torch::kLong), config,
            rng, probe.train_accuracy);
  probe.head->eval();
  return probe;
}

DownstreamProbe TrainProbe(Encoder encoder, const torch::Tensor& images, const torch::Tensor& labels,
                           int n_classes, const ProbeConfig& config, Rng& rng) {
  Freeze(encoder);
  auto probe = TrainProbeOnFeatures(ExtractFeatures(encoder, images), labels, n_classes, config, rng);
  probe.encoder = encoder;
  return probe;
}

double AccuracyPercent(std::span<const Prediction> log) {
  Require(!log.empty(), "AccuracyPercent: empty prediction log");
  std::size_t hit = 0;
  for (const auto& p : log) hit += p.predicted == p.true_label ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(log.size());
}

std::vector<Prediction> PredictAll(const DownstreamProbe& probe, const torch::Tensor& images,
                                   const torch::Tensor& labels, bool triggered) {
  const auto pred = probe.Predict(images).contiguous();
  const auto lab = labels.to(torch::kLong).contiguous();
  std::vector<Prediction> out;
  for (int64_t i = 0; i < images.size(0); ++i) {
    out.push_back({i, lab[i].item<int64_t>(), pred[i].item<int64_t>(), triggered});
  }
  return out;
}

AsrResult ComputeAsr(const DownstreamProbe& probe, const torch::Tensor& images,
                     const torch::Tensor& labels, const Trigger& trigger, int target_class) {
  const auto keep = labels.ne(target_class).nonzero().flatten();
  Require(keep.numel() > 0, "ComputeAsr: no non-target test samples");
  const auto triggered = trigger(images.index_select(0, keep));
  const auto pred = probe.Predict(triggered).contiguous();
  AsrResult r;
  std::size_t hits = 0;
  for (int64_t i = 0; i < keep.numel(); ++i) {
    const int64_t id = keep[i].item<int64_t>();
    const int64_t p = pred[i].item<int64_t>();
    r.log.push_back({id, labels[id].item<int64_t>(), p, true});
    hits += p == target_class ? 1 : 0;
  }
  r.percent = 100.0 * static_cast<double>(hits) / static_cast<double>(keep.numel());
  return r;
}

namespace {

torch::Tensor GaussianWindow() {
  constexpr int kSize = 11;
  constexpr double kSigma = 1.5;
  auto g = torch::empty({kSize}, torch::kFloat64);
  double total = 0.0;
  for (int i = 0; i < kSize; ++i) {
    const double d = i - kSize / 2;
    g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    total += std::exp(-d * d / (2 * kSigma * kSigma));
  }
  g /= total;
  return torch::outer(g, g).view({1, 1, kSize, kSize});
}

torch::Tensor AsBatch(const torch::Tensor& x) { return x.dim() == 3 ? x.unsqueeze(0) : x; }

}  // namespace

torch::Tensor SsimPerImage(const torch::Tensor& a_in, const torch::Tensor& b_in) {
  Require(a_in.sizes().equals(b_in.sizes()), "Ssim: shape mismatch");
  const auto a = AsBatch(a_in).to(torch::kFloat64);
  const auto b = AsBatch(b_in).to(torch::kFloat64);
  Require(a.dim() == 4, "Ssim: expects [3,H,W] or [N,C,H,W]");
  Require(a.size(2) >= 11 && a.size(3) >= 11, "Ssim: image smaller than the 11x11 window");
  const int64_t n = a.size(0), c = a.size(1);
  const auto w = GaussianWindow();
  auto filt = [&](const torch::Tensor& x) {
    return F::conv2d(x.reshape({n * c, 1, x.size(2), x.size(3)}), w);
  };
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto mu_a = filt(a), mu_b = filt(b);
  const auto saa = filt(a * a) - mu_a * mu_a;
  const auto sbb = filt(b * b) - mu_b * mu_b;
  const auto sab = filt(a * b) - mu_a * mu_b;
  const auto map = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) /
                   ((mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2));
  return map.reshape({n, -1}).mean(1);
}

double Ssim(const torch::Tensor& a, const torch::Tensor& b) {
  return SsimPerImage(a, b).mean().item<double>();
}

torch::Tensor PsnrPerImage(const torch::Tensor& a_in, const torch::Tensor& b_in) {
  Require(a_in.sizes().equals(b_in.sizes()), "Psnr: shape mismatch");
  const auto a = AsBatch(a_in).to(torch::kFloat64);
  const auto b = AsBatch(b_in).to(torch::kFloat64);
  const auto mse = (a - b).square().reshape({a.size(0), -1}).mean(1);
  const auto psnr = 10.0 * torch::log10(1.0 / mse);
  return torch::where(mse > 0, psnr.clamp_max(kPsnrCap), torch::full_like(mse, kPsnrCap));
}

double Psnr(const torch::Tensor& a, const torch::Tensor& b) {
  Require(a.sizes().equals(b.sizes()), "Psnr: shape mismatch");
  const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).square().mean().item<double>();
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double PerceptualProxyFromFeatures(const torch::Tensor& fa, const torch::Tensor& fb) {
  Require(fa.sizes().equals(fb.sizes()) && fa.dim() == 2, "PerceptualProxy: feature shapes differ");
  const auto d = static_cast<double>(fa.size(1));
  return ((fa.to(torch::kFloat64) - fb.to(torch::kFloat64)).norm(2, 1) / d).mean().item<double>();
}

double PerceptualProxy(Encoder& encoder, const torch::Tensor& a, const torch::Tensor& b) {
  return PerceptualProxyFromFeatures(ExtractFeatures(encoder, AsBatch(a)),
                                     ExtractFeatures(encoder, AsBatch(b)));
}

EntanglementResult EntanglementProbe(const torch::Tensor& set_a, const torch::Tensor& set_b,
                                     const EntanglementConfig& config, Rng& rng) {
  const int64_t na = set_a.size(0), nb = set_b.size(0);
  Require(na >= 50 && nb >= 50, "EntanglementProbe: need at least 50 samples per set");
  Require(std::max(na, nb) <= 4 * std::min(na, nb), "EntanglementProbe: class imbalance exceeds 4:1");
  Require(set_a.sizes().slice(1).equals(set_b.sizes().slice(1)), "EntanglementProbe: image shapes differ");

  const auto x = torch::cat({set_a, set_b}).to(torch::kFloat32);
  const auto y = torch::cat({torch::zeros({na}, torch::kLong), torch::ones({nb}, torch::kLong)});
  // Stratified split so train and test are disjoint and balanced.
  std::vector<int64_t> train, test;
  for (auto [lo, hi] : {std::pair<int64_t, int64_t>{0, na}, {na, na + nb}}) {
    std::vector<int64_t> idx(static_cast<std::size_t>(hi - lo));
    std::iota(idx.begin(), idx.end(), lo);
    rng.Shuffle(idx);
    const auto cut = static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(idx.size())));
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  }
  Require(!train.empty() && !test.empty(), "EntanglementProbe: empty split");

  const int64_t w = config.width;
  const int64_t spatial = (x.size(2) / 4) * (x.size(3) / 4);
  torch::manual_seed(rng.NextU64());
  nn::Sequential net(nn::Conv2d(nn::Conv2dOptions(3, w, 3).padding(1)), nn::ReLU(),
                     nn::MaxPool2d(nn::MaxPool2dOptions(2)),
                     nn::Conv2d(nn::Conv2dOptions(w, 2 * w, 3).padding(1)), nn::ReLU(),
                     nn::MaxPool2d(nn::MaxPool2dOptions(2)), nn::Flatten(),
                     nn::Linear(2 * w * spatial, 2));
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    net->train();
    rng.Shuffle(train);
    for (std::size_t off = 0; off < train.size(); off += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(train.size(), off + static_cast<std::size_t>(config.batch_size));
      const auto idx = torch::tensor(std::vector<int64_t>(train.begin() + static_cast<std::ptrdiff_t>(off),
                                                          train.begin() + static_cast<std::ptrdiff_t>(end)));
      opt.zero_grad();
      auto loss = F::cross_entropy(net->forward(x.index_select(0, idx)), y.index_select(0, idx));
      loss.backward();
      opt.step();
    }
  }
  torch::NoGradGuard no_grad;
  net->eval();
  const auto tidx = torch::tensor(test);
  const auto pred = net->forward(x.index_select(0, tidx)).argmax(1);
  EntanglementResult r;
  r.accuracy = pred.eq(y.index_select(0, tidx)).to(torch::kFloat64).mean().item<double>();
  r.n_train = static_cast<int64_t>(train.size());
  r.n_test = static_cast<int64_t>(test.size());
  return r;
}

PcaResult PcaEmbed(const torch::Tensor& features, int out_dims) {
  Require(features.dim() == 2, "PcaEmbed: expects [n, d]");
  Require(out_dims >= 1 && features.size(0) > out_dims, "PcaEmbed: need n > out_dims");
  Require(out_dims <= features.size(1), "PcaEmbed: out_dims exceeds feature dimension");
  const auto x = features.to(torch::kFloat64);
  PcaResult r;
  r.mean = x.mean(0);
  const auto centered = x - r.mean;
  const auto cov = centered.t().matmul(centered) / static_cast<double>(x.size(0) - 1);
  auto [evals, evecs] = torch::linalg_eigh(cov);
  // eigh sorts ascending; take the last out_dims in descending order.
  const auto order = torch::arange(evals.size(0) - 1, evals.size(0) - 1 - out_dims, -1, torch::kLong);
  auto comps = evecs.index_select(1, order).clone();
  for (int k = 0; k < out_dims; ++k) {
    auto col = comps.select(1, k);
    const auto peak = col.abs().argmax().item<int64_t>();
    if (col[peak].item<double>() < 0) col.neg_();
  }
  r.components = comps;
  r.coords = centered.matmul(comps);
  const double total = evals.clamp_min(0).sum().item<double>();
  const auto top = evals.index_select(0, order).clamp_min(0);
  for (int k = 0; k < out_dims; ++k) {
    r.explained_ratio.push_back(total > 0 ? top[k].item<double>() / total : 0.0);
  }
  return r;
}

double CentroidSeparation(const torch::Tensor& coords_a, const torch::Tensor& coords_b) {
  Require(coords_a.dim() == 2 && coords_b.dim() == 2 && coords_a.size(1) == coords_b.size(1),
          "CentroidSeparation: coordinate shapes differ");
  Require(coords_a.size(0) >= 2 && coords_b.size(0) >= 2, "CentroidSeparation: need >= 2 points per set");
  const auto a = coords_a.to(torch::kFloat64), b = coords_b.to(torch::kFloat64);
  const double dist = (a.mean(0) - b.mean(0)).norm().item<double>();
  const double pooled_var = 0.5 * (a.var(0).mean().item<double>() + b.var(0).mean().item<double>());
  if (pooled_var <= 0) return dist > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  return dist / std::sqrt(pooled_var);
}

nlohmann::json ToJson(const Prediction& p) {
  return {{"id", p.id}, {"true", p.true_label}, {"pred", p.predicted}, {"triggered", p.triggered}};
}

}  // namespace fssl::eval
