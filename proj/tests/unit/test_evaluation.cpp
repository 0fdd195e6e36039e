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

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fssl/errors.hpp"
#include "fssl/evaluation.hpp"
#include "test_util.hpp"

namespace fssl::eval {
namespace {

using testing::F64;

TEST(Psnr, HandCases) {
  // MSE 0.01 -> 10 log10(1 / 0.01) = 20 dB.
  EXPECT_NEAR(Psnr(torch::full({3, 8, 8}, 0.5), torch::full({3, 8, 8}, 0.6)), 20.0, 1e-4);
  const auto x = torch::rand({3, 8, 8});
  EXPECT_EQ(Psnr(x, x), kPsnrCap);
  const auto per = PsnrPerImage(torch::zeros({2, 3, 4, 4}), torch::stack({torch::full({3, 4, 4}, 0.1),
                                                                             torch::full({3, 4, 4}, 0.01)}));
  EXPECT_NEAR(per[0].item<double>(), 20.0, 1e-4);
  EXPECT_NEAR(per[1].item<double>(), 40.0, 1e-3);
}

TEST(Ssim, ConstantImagesClosedForm) {
  // Zero variance: SSIM = (2 a b + C1) / (a^2 + b^2 + C1).
  const double a = 0.3, b = 0.7, c1 = 0.01 * 0.01;
  const double expect = (2 * a * b + c1) / (a * a + b * b + c1);
  EXPECT_NEAR(Ssim(torch::full({3, 16, 16}, a, F64()), torch::full({3, 16, 16}, b, F64())), expect, 1e-9);
}

TEST(Ssim, IdentitySymmetryAndOrdering) {
  const auto x = torch::rand({2, 3, 16, 16}, F64());
  const auto small = (x + 0.02 * torch::randn_like(x)).clamp(0, 1);
  const auto large = (x + 0.2 * torch::randn_like(x)).clamp(0, 1);
  EXPECT_NEAR(Ssim(x, x), 1.0, 1e-12);
  EXPECT_NEAR(Ssim(x, small), Ssim(small, x), 1e-12);
  EXPECT_GT(Ssim(x, small), Ssim(x, large));
  const auto per = SsimPerImage(x, large);
  EXPECT_NEAR(per.mean().item<double>(), Ssim(x, large), 1e-12);
}

TEST(Ssim, RejectsImagesSmallerThanWindow) {
  EXPECT_THROW(Ssim(torch::rand({3, 8, 8}), torch::rand({3, 8, 8})), ContractViolation);
}

TEST(PerceptualProxy, HandCase) {
  const auto fa = torch::tensor({3.0, 4.0, 0.0, 0.0}, F64()).view({2, 2});
  const auto fb = torch::zeros({2, 2}, F64());
  // Norms 5 and 0, each divided by the feature dimension 2.
  EXPECT_NEAR(PerceptualProxyFromFeatures(fa, fb), 1.25, 1e-12);
}

TEST(Pca, LineHasOneComponent) {
  const auto t = torch::randn({40, 1}, F64());
  const auto dir = torch::tensor({{0.6, 0.8, 0.0}}, F64());
  const auto pts = t.matmul(dir) + torch::tensor({{1.0, -2.0, 3.0}}, F64());
  const auto r = PcaEmbed(pts, 2);
  EXPECT_NEAR(r.explained_ratio[0], 1.0, 1e-9);
  EXPECT_NEAR(r.explained_ratio[1], 0.0, 1e-9);
  EXPECT_NEAR(std::abs((r.components.select(1, 0) * dir[0]).sum().item<double>()), 1.0, 1e-9);
  EXPECT_GT(r.components.select(1, 0)[1].item<double>(), 0.0);  // sign convention
  EXPECT_LT((r.coords.mean(0)).abs().max().item<double>(), 1e-9);
}

TEST(Pca, ComponentsOrthonormalAndOrdered) {
  const auto x = torch::randn({100, 5}, F64()) * torch::tensor({5.0, 3.0, 1.0, 0.5, 0.1}, F64());
  const auto r = PcaEmbed(x, 3);
  const auto gram = r.components.t().matmul(r.components);
  EXPECT_LT((gram - torch::eye(3, F64())).abs().max().item<double>(), 1e-9);
  EXPECT_GE(r.explained_ratio[0], r.explained_ratio[1]);
  EXPECT_GE(r.explained_ratio[1], r.explained_ratio[2]);
}

TEST(Pca, CentroidSeparationHandCase) {
  // Each set has per-axis variance 1 (unbiased) on both axes; centroids 3 apart.
  const auto a = torch::tensor({-1.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 1.0}, F64()).view({4, 2});
  const auto b = a + torch::tensor({3.0, 0.0}, F64());
  const double var = a.var(0).mean().item<double>();
  EXPECT_NEAR(CentroidSeparation(a, b), 3.0 / std::sqrt(var), 1e-12);
}

TEST(Probe, LearnsSeparableFeatures) {
  const auto centers = torch::randn({3, 6}) * 4.0;
  const auto labels = torch::arange(3, torch::kLong).repeat({30});
  const auto feats = centers.index_select(0, labels) + 0.3 * torch::randn({90, 6});
  ProbeConfig cfg;
  cfg.epochs = 30;
  Rng rng(0);
  const auto probe = TrainProbeOnFeatures(feats, labels, 3, cfg, rng);
  const auto pred = probe.LogitsFromFeatures(feats).argmax(1);
  EXPECT_GE(pred.eq(labels).to(torch::kFloat64).mean().item<double>(), 0.95);
  EXPECT_EQ(probe.train_accuracy.size(), 30u);
}

TEST(Asr, CountsNonTargetImagesOnly) {
  EncoderOptions o;
  o.arch = EncoderArch::kMlp;
  o.image_size = 8;
  const auto images = torch::rand({40, 3, 8, 8});
  const auto labels = torch::arange(2, torch::kLong).repeat({20});
  // Class 1 images are bright.
  auto shifted = images.clone();
  shifted.index_put_({labels == 1}, (images.index({labels == 1}) * 0.3 + 0.7));
  ProbeConfig cfg;
  cfg.epochs = 60;
  Rng rng(0);
  const auto probe = TrainProbe(MakeEncoder(o, 0), shifted, labels, 2, cfg, rng);
  const auto bright = [](const torch::Tensor& x) { return x * 0.3 + 0.7; };
  const auto r = ComputeAsr(probe, shifted, labels, bright, 1);
  EXPECT_EQ(r.log.size(), 20u);
  for (const auto& p : r.log) {
    EXPECT_EQ(p.true_label, 0);
    EXPECT_TRUE(p.triggered);
  }
  EXPECT_GE(r.percent, 90.0);
  const auto identity = ComputeAsr(probe, shifted, labels, [](const torch::Tensor& x) { return x; }, 1);
  EXPECT_LE(identity.percent, 10.0);
}

TEST(Accuracy, Percent) {
  const std::vector<Prediction> log{{0, 1, 1, false}, {1, 2, 0, false}, {2, 0, 0, false}, {3, 1, 1, false}};
  EXPECT_DOUBLE_EQ(AccuracyPercent(log), 75.0);
}

TEST(Entanglement, SeparableSetsAreDetected) {
  const auto a = torch::rand({60, 3, 16, 16}) * 0.3;
  const auto b = torch::rand({60, 3, 16, 16}) * 0.3 + 0.7;
  EntanglementConfig cfg;
  Rng rng(0);
  const auto r = EntanglementProbe(a, b, cfg, rng);
  EXPECT_GE(r.accuracy, 0.9);
  EXPECT_EQ(r.n_train + r.n_test, 120);
}

TEST(Entanglement, IdenticalDistributionsNearChance) {
  const auto pool = torch::rand({160, 3, 16, 16});
  EntanglementConfig cfg;
  Rng rng(1);
  const auto r = EntanglementProbe(pool.slice(0, 0, 80), pool.slice(0, 80), cfg, rng);
  EXPECT_GE(r.accuracy, 0.25);
  EXPECT_LE(r.accuracy, 0.75);
}

}  // namespace
}  // namespace fssl::eval
