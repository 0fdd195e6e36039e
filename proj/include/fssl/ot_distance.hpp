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

#ifndef FSSL_OT_DISTANCE_HPP_
#define FSSL_OT_DISTANCE_HPP_

#include <cstdint>
#include <span>

#include <torch/torch.h>

namespace fssl::ot {

// A finite point cloud with uniform weights 1/n. Points are rows of an
// [n, d] tensor, which may carry autograd history.
class EmpiricalDistribution {
 public:
  explicit EmpiricalDistribution(torch::Tensor points);

  const torch::Tensor& points() const { return points_; }
  int64_t size() const { return points_.size(0); }
  int64_t dim() const { return points_.size(1); }

 private:
  torch::Tensor points_;
};

struct SlicedWDConfig {
  int n_slices = 128;
  std::uint64_t seed = 0;
};

// Closed-form 1D 2-Wasserstein distance between two equal-size samples:
// sqrt(mean_i (a_(i) - b_(i))^2) over order statistics.
double WassersteinOneD(std::span<const double> a, std::span<const double> b);

// Largest instance size accepted by ExactWassersteinSmall.
inline constexpr int64_t kExactOracleMaxPoints = 8;

// Exhaustive 2-Wasserstein distance over all bijective couplings. Oracle
// use only: n <= kExactOracleMaxPoints.
double ExactWassersteinSmall(const EmpiricalDistribution& p,
                             const EmpiricalDistribution& q);

// Unit-norm slice directions as columns of a [d, n_slices] tensor. Drawn
// from normalised Gaussians seeded by `seed`, so callers can reproduce the
// exact directions a given config used.
torch::Tensor DrawSliceDirections(int64_t dim, int n_slices, std::uint64_t seed,
                                  torch::Dtype dtype = torch::kFloat32);

// sqrt((1/S) sum_s W_1D(proj_s P, proj_s Q)^2). Differentiable in both
// point sets; the sort is treated as a fixed permutation.
torch::Tensor SlicedWasserstein(const EmpiricalDistribution& p,
                                const EmpiricalDistribution& q,
                                const SlicedWDConfig& config);

}  // namespace fssl::ot

#endif  // FSSL_OT_DISTANCE_HPP_
