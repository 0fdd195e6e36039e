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

#include "fssl/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fssl/errors.hpp"

namespace fssl::defense {

void StripConfig::Validate() const {
  Require(overlays >= 1, "StripConfig: overlays must be >= 1");
  Require(blend > 0.0 && blend < 1.0, "StripConfig: blend must lie in (0, 1)");
  Require(threshold_grid >= 2, "StripConfig: threshold_grid must be >= 2");
}

namespace {

uint64_t ContentKey(const torch::Tensor& img) {
  const auto c = img.to(torch::kFloat32).contiguous();
  const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
  uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < static_cast<std::size_t>(c.numel()) * sizeof(float); ++i) {
    h = (h ^ bytes[i]) * 1099511628211ULL;
  }
  return h;
}

// Pool indices sorted by content, then by original index for exact ties.
std::vector<int64_t> CanonicalOrder(const torch::Tensor& pool) {
  std::vector<std::pair<uint64_t, int64_t>> keyed;
  for (int64_t i = 0; i < pool.size(0); ++i) keyed.emplace_back(ContentKey(pool[i]), i);
  std::sort(keyed.begin(), keyed.end());
  std::vector<int64_t> out;
  for (const auto& [k, i] : keyed) out.push_back(i);
  return out;
}

torch::Tensor MeanEntropy(const torch::Tensor& logits) {
  const auto logp = torch::log_softmax(logits.to(torch::kFloat64), 1);
  return -(logp.exp() * logp).nan_to_num(0.0).sum(1).mean();
}

double EntropyWithCanonical(const LogitFn& logits, const torch::Tensor& x, const torch::Tensor& pool,
                            std::span<const int64_t> canonical, const StripConfig& config, Rng& rng) {
  std::vector<int64_t> pick;
  for (int i = 0; i < config.overlays; ++i) {
    pick.push_back(canonical[static_cast<std::size_t>(rng.UniformInt(0, static_cast<int64_t>(canonical.size()) - 1))]);
  }
  const auto overlays = pool.index_select(0, torch::tensor(pick));
  const auto blended = (1.0 - config.blend) * x.unsqueeze(0) + config.blend * overlays;
  return std::max(0.0, MeanEntropy(logits(blended.to(torch::kFloat32))).item<double>());
}

}  // namespace

double StripEntropy(const LogitFn& logits, const torch::Tensor& x, const torch::Tensor& overlay_pool,
                    const StripConfig& config, Rng& rng) {
  config.Validate();
  Require(overlay_pool.dim() == 4 && overlay_pool.size(0) > 0, "StripEntropy: overlay pool is empty");
  Require(x.dim() == 3 && x.sizes().equals(overlay_pool.sizes().slice(1)),
          "StripEntropy: image and overlay shapes differ");
  const auto canonical = CanonicalOrder(overlay_pool);
  return EntropyWithCanonical(logits, x, overlay_pool, canonical, config, rng);
}

double StripEntropy(const eval::DownstreamProbe& probe, const torch::Tensor& x,
                    const torch::Tensor& overlay_pool, const StripConfig& config, Rng& rng) {
  return StripEntropy([&](const torch::Tensor& b) { return probe.Logits(b); }, x, overlay_pool, config, rng);
}

std::vector<double> StripEntropies(const LogitFn& logits, const torch::Tensor& images,
                                   const torch::Tensor& overlay_pool, const StripConfig& config,
                                   Rng& rng) {
  config.Validate();
  Require(overlay_pool.dim() == 4 && overlay_pool.size(0) > 0, "StripEntropy: overlay pool is empty");
  const auto canonical = CanonicalOrder(overlay_pool);
  std::vector<double> out;
  for (int64_t i = 0; i < images.size(0); ++i) {
    out.push_back(EntropyWithCanonical(logits, images[i], overlay_pool, canonical, config, rng));
  }
  return out;
}

double DetectionAuc(std::span<const double> positive, std::span<const double> negative) {
  Require(!positive.empty() && !negative.empty(), "DetectionAuc: empty score list");
  // Rank-sum with average ranks for ties.
  std::vector<std::pair<double, bool>> all;
  for (double s : positive) all.emplace_back(s, true);
  for (double s : negative) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank_sum += all[k].second ? avg_rank : 0.0;
    i = j;
  }
  const double np = static_cast<double>(positive.size()), nn = static_cast<double>(negative.size());
  return (rank_sum - np * (np + 1) / 2) / (np * nn);
}

StripVerdict StripDetect(const LogitFn& logits, const torch::Tensor& clean, const torch::Tensor& poisoned,
                         const torch::Tensor& overlay_pool, const StripConfig& config, Rng& rng) {
  StripVerdict v;
  v.clean_entropy = StripEntropies(logits, clean, overlay_pool, config, rng);
  v.poisoned_entropy = StripEntropies(logits, poisoned, overlay_pool, config, rng);
  std::vector<double> pos, neg;
  for (double e : v.poisoned_entropy) pos.push_back(-e);
  for (double e : v.clean_entropy) neg.push_back(-e);
  v.auc = DetectionAuc(pos, neg);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* list : {&v.clean_entropy, &v.poisoned_entropy}) {
    for (double e : *list) lo = std::min(lo, e), hi = std::max(hi, e);
  }
  for (int g = 0; g < config.threshold_grid; ++g) {
    const double t = lo + (hi - lo) * g / (config.threshold_grid - 1);
    double tp = 0, tn = 0;
    for (double e : v.poisoned_entropy) tp += e <= t ? 1 : 0;
    for (double e : v.clean_entropy) tn += e > t ? 1 : 0;
    const double bal = 0.5 * (tp / static_cast<double>(v.poisoned_entropy.size()) +
                              tn / static_cast<double>(v.clean_entropy.size()));
    if (bal > v.best_balanced_accuracy) v.best_balanced_accuracy = bal, v.best_threshold = t;
  }
  return v;
}

double Silhouette(const torch::Tensor& points, std::span<const int64_t> assignment) {
  const int64_t n = points.size(0);
  Require(static_cast<int64_t>(assignment.size()) == n, "Silhouette: assignment size mismatch");
  const auto x = points.to(torch::kFloat64);
  const auto dist = torch::cdist(x, x).contiguous();
  const auto* d = dist.data_ptr<double>();
  int64_t n_clusters = 0;
  for (auto a : assignment) n_clusters = std::max(n_clusters, a + 1);
  std::vector<int64_t> size(static_cast<std::size_t>(n_clusters), 0);
  for (auto a : assignment) ++size[static_cast<std::size_t>(a)];
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const auto own = assignment[static_cast<std::size_t>(i)];
    if (size[static_cast<std::size_t>(own)] <= 1) continue;
    std::vector<double> sum(static_cast<std::size_t>(n_clusters), 0.0);
    for (int64_t j = 0; j < n; ++j) sum[static_cast<std::size_t>(assignment[static_cast<std::size_t>(j)])] += d[i * n + j];
    const double a = sum[static_cast<std::size_t>(own)] / static_cast<double>(size[static_cast<std::size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < n_clusters; ++c) {
      if (c == own || size[static_cast<std::size_t>(c)] == 0) continue;
      b = std::min(b, sum[static_cast<std::size_t>(c)] / static_cast<double>(size[static_cast<std::size_t>(c)]));
    }
    if (!std::isfinite(b)) continue;
    const double m = std::max(a, b);
    total += m > 0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

ClassClustering ClusterClass(const torch::Tensor& features, const AcConfig& config, uint64_t seed) {
  Require(features.dim() == 2 && features.size(0) >= 4, "ActivationClustering: need >= 4 samples per class");
  ClassClustering out;
  out.n = features.size(0);
  const auto x = features.to(torch::kFloat64);
  const auto centered = x - x.mean(0);
  if (centered.abs().max().item<double>() == 0.0) {
    out.degenerate = true;
    return out;
  }
  const int dims = static_cast<int>(std::min<int64_t>({config.pca_dims, x.size(1), x.size(0) - 1}));
  const auto pts = eval::PcaEmbed(x, dims).coords;
  const int64_t n = pts.size(0);

  // k-means++ seeding with a fixed seed, then Lloyd iterations.
  Rng rng(seed);
  std::vector<int64_t> centers{rng.UniformInt(0, n - 1)};
  {
    const auto d2 = (pts - pts[centers[0]]).square().sum(1);
    const double total = d2.sum().item<double>();
    if (total <= 0) {
      out.degenerate = true;
      return out;
    }
    double u = rng.Uniform() * total, acc = 0.0;
    int64_t pick = n - 1;
    for (int64_t i = 0; i < n; ++i) {
      acc += d2[i].item<double>();
      if (acc >= u) { pick = i; break; }
    }
    centers.push_back(pick);
  }
  auto c = torch::stack({pts[centers[0]], pts[centers[1]]});
  std::vector<int64_t> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < config.max_iterations; ++it) {
    const auto lab = torch::cdist(pts, c).argmin(1).contiguous();
    bool changed = false;
    for (int64_t i = 0; i < n; ++i) {
      const auto a = lab[i].item<int64_t>();
      changed |= a != assign[static_cast<std::size_t>(i)];
      assign[static_cast<std::size_t>(i)] = a;
    }
    for (int64_t k = 0; k < 2; ++k) {
      const auto members = lab.eq(k).nonzero().flatten();
      if (members.numel() > 0) c[k] = pts.index_select(0, members).mean(0);
    }
    if (!changed && it > 0) break;
  }
  out.silhouette = Silhouette(pts, assign);
  const auto ones = std::count(assign.begin(), assign.end(), 1);
  const int64_t minority = ones <= n - ones ? 1 : 0;
  for (int64_t i = 0; i < n; ++i) {
    if (assign[static_cast<std::size_t>(i)] == minority) out.flagged.push_back(i);
  }
  return out;
}

std::vector<ClassClustering> ActivationClustering(const torch::Tensor& features, const torch::Tensor& predicted,
                                                  const AcConfig& config, Rng& rng) {
  Require(features.size(0) == predicted.size(0), "ActivationClustering: feature/label count mismatch");
  const auto labels = std::get<0>(torch::_unique(predicted.to(torch::kLong)));
  std::vector<ClassClustering> out;
  const auto sorted = std::get<0>(labels.sort());
  for (int64_t i = 0; i < sorted.numel(); ++i) {
    const auto label = sorted[i].item<int64_t>();
    const auto idx = predicted.eq(label).nonzero().flatten();
    const uint64_t seed = rng.NextU64();
    if (idx.numel() < 4) continue;
    auto r = ClusterClass(features.index_select(0, idx), config, seed);
    r.label = label;
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

torch::Tensor StackFlat(std::span<const fed::ClientUpdate> updates) {
  Require(!updates.empty(), "robust aggregation: no updates");
  fed::CheckUpdateShapes(updates);
  std::vector<torch::Tensor> rows;
  for (const auto& u : updates) rows.push_back(Flatten(u.params));
  return torch::stack(rows);
}

}  // namespace

KrumChoice KrumSelect(std::span<const fed::ClientUpdate> updates, int f) {
  const auto n = static_cast<int>(updates.size());
  Require(f >= 0, "Krum: f must be non-negative");
  Require(n >= 2 * f + 3, "Krum: requires n >= 2f + 3 (n = " + std::to_string(n) +
                              ", f = " + std::to_string(f) + ")");
  const auto flat = StackFlat(updates);
  const auto d2 = torch::cdist(flat, flat).square().contiguous();
  const auto* d = d2.data_ptr<double>();
  KrumChoice choice;
  const int neighbours = n - f - 2;
  for (int i = 0; i < n; ++i) {
    std::vector<double> row;
    for (int j = 0; j < n; ++j) {
      if (j != i) row.push_back(d[i * n + j]);
    }
    std::sort(row.begin(), row.end());
    choice.scores.push_back(std::accumulate(row.begin(), row.begin() + neighbours, 0.0));
  }
  // Lowest score wins; ties go to the lowest client id so the choice does
  // not depend on list order.
  for (std::size_t i = 1; i < updates.size(); ++i) {
    const double si = choice.scores[i], sb = choice.scores[choice.index];
    if (si < sb || (si == sb && updates[i].client_id < updates[choice.index].client_id)) choice.index = i;
  }
  return choice;
}

ModelParams KrumAggregate(std::span<const fed::ClientUpdate> updates, int f) {
  return CloneParams(updates[KrumSelect(updates, f).index].params);
}

ModelParams TrimmedMeanAggregate(std::span<const fed::ClientUpdate> updates, int k) {
  const auto n = static_cast<int>(updates.size());
  Require(k >= 0, "TrimmedMean: k must be non-negative");
  Require(2 * k < n, "TrimmedMean: requires 2k < n (n = " + std::to_string(n) + ", k = " + std::to_string(k) + ")");
  const auto sorted = std::get<0>(StackFlat(updates).sort(0));
  const auto mean = sorted.narrow(0, k, n - 2 * k).mean(0);
  return Unflatten(mean, updates.front().params);
}

ModelParams KrumAggregator::Aggregate(std::span<const fed::ClientUpdate> updates) const {
  return KrumAggregate(updates, f_);
}

ModelParams TrimmedMeanAggregator::Aggregate(std::span<const fed::ClientUpdate> updates) const {
  return TrimmedMeanAggregate(updates, k_);
}

nlohmann::json ToJson(const StripVerdict& v) {
  return {{"auc", v.auc},
          {"best_threshold", v.best_threshold},
          {"best_balanced_accuracy", v.best_balanced_accuracy},
          {"clean_entropy", v.clean_entropy},
          {"poisoned_entropy", v.poisoned_entropy}};
}

nlohmann::json ToJson(const ClassClustering& c) {
  return {{"label", c.label}, {"n", c.n}, {"silhouette", c.silhouette},
          {"degenerate", c.degenerate}, {"flagged", c.flagged}};
}

}  // namespace fssl::defense
