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

#include "fssl/ot_distance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "fssl/errors.hpp"
#include "fssl/rng.hpp"

namespace fssl::ot {

EmpiricalDistribution::EmpiricalDistribution(torch::Tensor points)
    : points_(std::move(points)) {
  Require(points_.dim() == 2, "EmpiricalDistribution: points must be [n, d]");
  Require(points_.size(0) >= 1, "EmpiricalDistribution: need at least one point");
  torch::NoGradGuard no_grad;
  Require(torch::isfinite(points_).all().item<bool>(),
          "EmpiricalDistribution: non-finite coordinate");
}

double WassersteinOneD(std::span<const double> a, std::span<const double> b) {
  Require(a.size() == b.size(), "WassersteinOneD: length mismatch");
  Require(!a.empty(), "WassersteinOneD: empty input");
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double d = sa[i] - sb[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(sa.size()));
}

double ExactWassersteinSmall(const EmpiricalDistribution& p,
                             const EmpiricalDistribution& q) {
  const int64_t n = p.size();
  Require(q.size() == n, "ExactWassersteinSmall: point counts differ");
  Require(p.dim() == q.dim(), "ExactWassersteinSmall: dimension mismatch");
  if (n > kExactOracleMaxPoints) {
    throw ContractViolation("ExactWassersteinSmall: n > 8 is refused (oracle only)");
  }
  const auto cost = torch::cdist(p.points().detach().to(torch::kFloat64),
                                 q.points().detach().to(torch::kFloat64))
                        .square()
                        .contiguous();
  const auto c = cost.accessor<double, 2>();
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) total += c[i][perm[static_cast<std::size_t>(i)]];
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(n));
}

torch::Tensor DrawSliceDirections(int64_t dim, int n_slices, std::uint64_t seed,
                                  torch::Dtype dtype) {
  Require(n_slices >= 1, "SlicedWDConfig: n_slices must be >= 1");
  Require(dim >= 1, "DrawSliceDirections: dim must be >= 1");
  Rng rng(seed);
  auto dirs = torch::empty({dim, n_slices}, torch::kFloat64);
  auto acc = dirs.accessor<double, 2>();
  for (int s = 0; s < n_slices; ++s) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (int64_t k = 0; k < dim; ++k) {
        acc[k][s] = rng.Normal();
        norm += acc[k][s] * acc[k][s];
      }
    } while (norm < 1e-24);
    norm = std::sqrt(norm);
    for (int64_t k = 0; k < dim; ++k) acc[k][s] /= norm;
  }
  return dirs.to(dtype);
}

torch::Tensor SlicedWasserstein(const EmpiricalDistribution& p,
                                const EmpiricalDistribution& q,
                                const SlicedWDConfig& config) {
  Require(p.dim() == q.dim(), "SlicedWasserstein: dimension mismatch");
  Require(p.size() == q.size(),
          "SlicedWasserstein: equal point counts required");
  const auto dirs = DrawSliceDirections(p.dim(), config.n_slices, config.seed,
                                        p.points().scalar_type());
  // [n, S] projections, sorted independently per slice.
  const auto proj_p = std::get<0>(torch::sort(p.points().matmul(dirs), /*dim=*/0));
  const auto proj_q = std::get<0>(torch::sort(q.points().matmul(dirs), /*dim=*/0));
  const auto per_slice = (proj_p - proj_q).square().mean(0);
  const auto mean_sq = per_slice.mean();
  // sqrt has an infinite derivative at 0; pin the gradient there to zero.
  return torch::where(mean_sq > 0, torch::sqrt(mean_sq.clamp_min(1e-30)),
                      torch::zeros_like(mean_sq));
}

}  // namespace fssl::ot
