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
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "fssl/backdoor.hpp"
#include "fssl/errors.hpp"
#include "fssl/injector.hpp"
#include "test_util.hpp"

namespace fssl::backdoor {
namespace {

using testing::F64;

double Cos(const torch::Tensor& a, const torch::Tensor& b) {
  return (a * b).sum().item<double>() / (a.norm().item<double>() * b.norm().item<double>());
}

double CosRows(const torch::Tensor& a, const torch::Tensor& b) {
  double total = 0;
  for (int64_t i = 0; i < a.size(0); ++i) total += Cos(a[i], b[i]);
  return total / static_cast<double>(a.size(0));
}

double ReferenceAlign(const torch::Tensor& zp, const torch::Tensor& zt, const torch::Tensor& zc) {
  double pull = 0, keep = 0;
  for (int64_t i = 0; i < zp.size(0); ++i) pull += Cos(zp[i], zt[i % zt.size(0)]);
  for (int64_t j = 0; j < zt.size(0); ++j) keep += Cos(zt[j], zc[j]);
  return -(pull / static_cast<double>(zp.size(0)) + keep / static_cast<double>(zt.size(0)));
}

// Parameter-space spot check: `coords` random entries of the module's
// parameters, central differences against autograd, relative 1e-3.
void SpotCheckParameters(torch::nn::Module& module, const std::function<torch::Tensor()>& loss, int coords,
                         uint64_t seed) {
  for (auto& p : module.parameters()) {
    if (p.grad().defined()) p.grad().zero_();
  }
  loss().backward();
  // The projection head does not take part in backbone losses.
  std::vector<torch::Tensor> params;
  for (auto& p : module.parameters()) {
    if (p.grad().defined()) params.push_back(p);
  }
  Rng rng(seed);
  int checked = 0;
  while (checked < coords) {
    auto& p = params[static_cast<std::size_t>(rng.UniformInt(0, static_cast<int64_t>(params.size()) - 1))];
    auto flat = p.data().view({-1});
    const int64_t k = rng.UniformInt(0, flat.numel() - 1);
    const double analytic = p.grad().view({-1})[k].item<double>();
    const double orig = flat[k].item<double>();
    const double h = 1e-6;
    double up, down;
    {
      torch::NoGradGuard g;
      flat[k] = orig + h;
      up = loss().item<double>();
      flat[k] = orig - h;
      down = loss().item<double>();
      flat[k] = orig;
    }
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    EXPECT_LT(std::abs(analytic - numeric) / scale, 1e-3) << "analytic " << analytic << " numeric " << numeric;
    ++checked;
  }
}

TEST(AlignLoss, MatchesReferenceWithCyclicTargets) {
  const auto zp = torch::randn({5, 7}, F64());
  const auto zt = torch::randn({3, 7}, F64());
  const auto zc = torch::randn({3, 7}, F64());
  EXPECT_NEAR(AlignLossFromFeatures(zp, zt, zc).item<double>(), ReferenceAlign(zp, zt, zc), 1e-12);
}

TEST(AlignLoss, FixedPointIsMinusTwo) {
  const auto z = torch::randn({4, 6}, F64());
  EXPECT_NEAR(AlignLossFromFeatures(z, z, z).item<double>(), -2.0, 1e-12);
  EXPECT_NEAR(AlignLossFromFeatures(z, z, -z).item<double>(), 0.0, 1e-12);
  EXPECT_NEAR(AlignLossFromFeatures(-z, z, -z).item<double>(), 2.0, 1e-12);
}

TEST(AlignLoss, BoundedOnRandomInputs) {
  for (int trial = 0; trial < 50; ++trial) {
    const double v = AlignLossFromFeatures(torch::randn({4, 3}, F64()), torch::randn({2, 3}, F64()),
                                           torch::randn({2, 3}, F64()))
                         .item<double>();
    EXPECT_GE(v, -2.0 - 1e-12);
    EXPECT_LE(v, 2.0 + 1e-12);
  }
}

TEST(AlignLoss, FeatureGradientsMatchFiniteDifferences) {
  for (int trial = 0; trial < 100; ++trial) {
    const auto zp = torch::randn({4, 8}, F64());
    const auto zt = torch::randn({2, 8}, F64());
    const auto zc = torch::randn({2, 8}, F64());
    ASSERT_LT(testing::GradCheck([&](const torch::Tensor& x) { return AlignLossFromFeatures(x, zt, zc); }, zp), 1e-4);
    ASSERT_LT(testing::GradCheck([&](const torch::Tensor& x) { return AlignLossFromFeatures(zp, x, zc); }, zt), 1e-4);
    ASSERT_LT(testing::GradCheck([&](const torch::Tensor& x) { return UtilityLossFromFeatures(x, zp); },
                                 torch::randn({4, 8}, F64())),
              1e-4);
  }
}

TEST(UtilityLoss, IdenticalEncodersScoreMinusOne) {
  EncoderPair pair{testing::StubEncoder(1), testing::StubEncoder(1), {}};
  const auto x = torch::rand({6, 3, 4, 4}, F64());
  EXPECT_NEAR(UtilityLoss(pair, x).item<double>(), -1.0, 1e-12);
}

TEST(Centering, SubtractsCenterBeforeCosine) {
  EncoderPair pair{testing::StubEncoder(1), testing::StubEncoder(2), torch::randn({8}, F64())};
  const auto poisoned = torch::rand({5, 3, 4, 4}, F64());
  const auto targets = torch::rand({2, 3, 4, 4}, F64());
  const auto zp = pair.backdoored->Backbone(poisoned) - pair.center;
  const auto zt = pair.backdoored->Backbone(targets) - pair.center;
  const auto zc = pair.clean->Backbone(targets) - pair.center;
  EXPECT_NEAR(AlignLoss(pair, poisoned, targets).item<double>(), ReferenceAlign(zp, zt, zc), 1e-12);
  const auto z = pair.backdoored->Backbone(poisoned) - pair.center;
  const auto zcl = pair.clean->Backbone(poisoned) - pair.center;
  EXPECT_NEAR(UtilityLoss(pair, poisoned).item<double>(), -CosRows(z, zcl), 1e-12);
}

TEST(CompositeLosses, EncoderGradientsMatchFiniteDifferences) {
  EncoderPair pair{testing::StubEncoder(3), testing::StubEncoder(3), torch::randn({8}, F64()) * 0.1};
  Freeze(pair.clean);
  const auto poisoned = torch::rand({6, 3, 4, 4}, F64());
  const auto targets = torch::rand({2, 3, 4, 4}, F64());
  // Move the backdoored copy off the clean one so the utility term has a gradient.
  {
    torch::NoGradGuard g;
    for (auto& p : pair.backdoored->parameters()) p.add_(0.05 * torch::randn_like(p));
  }
  for (int rep = 0; rep < 10; ++rep) {
    SpotCheckParameters(*pair.backdoored, [&] { return AlignLoss(pair, poisoned, targets); }, 10, 2 * rep);
    SpotCheckParameters(*pair.backdoored, [&] { return UtilityLoss(pair, poisoned); }, 10, 2 * rep + 1);
  }
}

TEST(MaliciousTrain, PoisonsCeilRatioAndIsDeterministic) {
  EncoderOptions o;
  o.arch = EncoderArch::kMlp;
  o.width = 16;
  o.image_size = 8;
  const auto start = InitEncoderState(o, 0);
  const auto data = torch::rand({25, 3, 8, 8});
  std::vector<int64_t> idx(25);
  std::iota(idx.begin(), idx.end(), 0);
  const auto targets = torch::rand({4, 3, 8, 8});
  AttackConfig cfg;
  cfg.poison_ratio = 0.1;
  cfg.local_epochs = 3;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.05;
  const TriggerFn trigger = [](const torch::Tensor& x) { return (x * 0.5 + 0.5); };
  int hook_calls = 0;
  const EpochHook hook = [&](EncoderPair& pair, int epoch) {
    EXPECT_EQ(epoch, hook_calls);
    EXPECT_TRUE(pair.center.defined());
    ++hook_calls;
  };
  Rng r1(5), r2(5);
  const auto a = MaliciousLocalTrain(start, data, idx, targets, trigger, hook, cfg, r1);
  const auto b = MaliciousLocalTrain(start, data, idx, targets, trigger, {}, cfg, r2);
  EXPECT_EQ(hook_calls, 3);
  EXPECT_EQ(a.poisoned_indices.size(), 3u);
  EXPECT_TRUE(BitwiseEqual(a.state.params, b.state.params));
  EXPECT_EQ(a.state.role, EncoderRole::kBackdoored);
  EXPECT_LT(a.align_losses.back(), a.align_losses.front());
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  c.poison_ratio = 0.0;
  EXPECT_THROW(c.Validate(), ContractViolation);
  c = AttackConfig{};
  c.target_exemplars = 0;
  EXPECT_THROW(c.Validate(), ContractViolation);
}

}  // namespace
}  // namespace fssl::backdoor
