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

#ifndef FSSL_TESTS_TEST_UTIL_HPP_
#define FSSL_TESTS_TEST_UTIL_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "fssl/encoder.hpp"
#include "fssl/federation.hpp"
#include "fssl/params.hpp"

namespace fssl::testing {

using ScalarFn = std::function<torch::Tensor(const torch::Tensor&)>;

inline torch::TensorOptions F64() { return torch::TensorOptions().dtype(torch::kFloat64); }

inline torch::Tensor AutogradGrad(const ScalarFn& f, const torch::Tensor& x) {
  auto leaf = x.detach().clone().set_requires_grad(true);
  auto y = f(leaf);
  y.backward();
  return leaf.grad().detach().clone();
}

// Central differences over every coordinate of x.
inline torch::Tensor NumericGrad(const ScalarFn& f, const torch::Tensor& x, double h = 1e-6) {
  torch::NoGradGuard no_grad;
  auto base = x.detach().clone().contiguous();
  auto flat = base.view({-1});
  auto grad = torch::zeros_like(flat);
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double up = f(base).item<double>();
    flat[i] = orig - h;
    const double down = f(base).item<double>();
    flat[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad.view(x.sizes());
}

inline double RelativeError(const torch::Tensor& a, const torch::Tensor& b) {
  const double diff = (a - b).norm().item<double>();
  const double scale = std::max({a.norm().item<double>(), b.norm().item<double>(), 1e-12});
  return diff / scale;
}

inline double GradCheck(const ScalarFn& f, const torch::Tensor& x, double h = 1e-6) {
  return RelativeError(AutogradGrad(f, x), NumericGrad(f, x, h));
}

// Small float64 MLP encoder.
inline Encoder StubEncoder(uint64_t seed, int image_size = 4) {
  EncoderOptions o;
  o.arch = EncoderArch::kMlp;
  o.width = 12;
  o.projection_dim = 6;
  o.image_size = image_size;
  o.mlp_feature_dim = 8;
  auto e = MakeEncoder(o, seed);
  e->to(torch::kFloat64);
  return e;
}

inline ModelParams ConstantParams(const std::vector<double>& values) {
  ModelParams p;
  for (std::size_t i = 0; i < values.size(); ++i) {
    p.push_back({"w" + std::to_string(i), torch::full({2}, values[i], F64())});
  }
  return p;
}

inline fed::ClientUpdate MakeUpdate(int id, ModelParams params, int64_t n) {
  fed::ClientUpdate u;
  u.client_id = id;
  u.params = std::move(params);
  u.n_samples = n;
  return u;
}

}  // namespace fssl::testing

#endif  // FSSL_TESTS_TEST_UTIL_HPP_
