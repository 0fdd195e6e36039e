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

#include "fssl/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <torch/torch.h>

#include "fssl/color_space.hpp"
#include "fssl/convergence.hpp"
#include "fssl/defenses.hpp"
#include "fssl/evaluation.hpp"
#include "fssl/federation.hpp"
#include "fssl/ot_distance.hpp"

namespace fssl::oracle {
namespace {

OracleResult Check(std::string name, double error, double tolerance, std::string detail = {}) {
  return {std::move(name), std::isfinite(error) && error <= tolerance, error, tolerance, std::move(detail)};
}

fed::ClientUpdate ScalarUpdate(int id, std::vector<double> values, int64_t n) {
  fed::ClientUpdate u;
  u.client_id = id;
  u.n_samples = n;
  u.params.push_back({"w", torch::tensor(values, torch::kFloat64)});
  return u;
}

OracleResult FedAvgWeightedSum() {
  std::vector<fed::ClientUpdate> ups{ScalarUpdate(0, {1.0, 2.0, -3.0}, 14), ScalarUpdate(1, {3.0, -1.0, 0.5}, 6)};
  const auto out = fed::FedAvgAggregate(ups);
  const double expect[3] = {(14 * 1.0 + 6 * 3.0) / 20, (14 * 2.0 - 6 * 1.0) / 20, (14 * -3.0 + 6 * 0.5) / 20};
  double err = 0.0;
  for (int i = 0; i < 3; ++i) err = std::max(err, std::abs(out[0].value[i].item<double>() - expect[i]));
  return Check("fedavg_weighted_sum_14_6", err, 1e-9);
}

OracleResult KrumHandCase() {
  const std::vector<double> xs{0.0, 0.1, -0.1, 0.05, 10.0};
  std::vector<fed::ClientUpdate> ups;
  for (std::size_t i = 0; i < xs.size(); ++i) ups.push_back(ScalarUpdate(static_cast<int>(i), {xs[i]}, 1));
  const int f = 1;
  // Score: sum of the n - f - 2 smallest squared distances to the others.
  std::size_t best = 0;
  double best_score = INFINITY;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < xs.size(); ++j) {
      if (j != i) d.push_back((xs[i] - xs[j]) * (xs[i] - xs[j]));
    }
    std::sort(d.begin(), d.end());
    const double s = std::accumulate(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(xs.size() - f - 2), 0.0);
    if (s < best_score) best_score = s, best = i;
  }
  const auto choice = defense::KrumSelect(ups, f);
  const double agg = defense::KrumAggregate(ups, f)[0].value[0].item<double>();
  const double err = (choice.index == best ? 0.0 : 1.0) + std::abs(agg - xs[best]);
  return Check("krum_hand_case", err, 1e-12, "reference picks client " + std::to_string(best));
}

OracleResult TrimmedMeanHandCase() {
  std::vector<fed::ClientUpdate> ups;
  const double xs[5] = {4.0, 100.0, 1.0, 3.0, 2.0};
  for (int i = 0; i < 5; ++i) ups.push_back(ScalarUpdate(i, {xs[i]}, 1));
  const double got = defense::TrimmedMeanAggregate(ups, 1)[0].value[0].item<double>();
  return Check("trimmed_mean_hand_case", std::abs(got - 3.0), 1e-12);
}

// Same stream as the library: one mt19937_64, per class shuffle then one
// gamma draw per client, split points at floor(cumulative share * n).
fed::Partition ReferenceDirichlet(const std::vector<int64_t>& labels, int n_clients, double alpha, uint64_t seed) {
  std::map<int64_t, std::vector<int64_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int64_t>(i));
  std::mt19937_64 engine(seed);
  fed::Partition parts(static_cast<std::size_t>(n_clients));
  for (auto& entry : by_class) {
    std::vector<int64_t> idx = entry.second;
    std::shuffle(idx.begin(), idx.end(), engine);
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> g(static_cast<std::size_t>(n_clients));
    double total = 0.0;
    for (auto& v : g) {
      v = gamma(engine);
      total += v;
    }
    double cum = 0.0;
    std::size_t begin = 0;
    for (int j = 0; j < n_clients; ++j) {
      cum += g[static_cast<std::size_t>(j)] / total;
      std::size_t end = j + 1 == n_clients ? idx.size()
                                           : std::min(idx.size(), static_cast<std::size_t>(std::floor(cum * static_cast<double>(idx.size()))));
      end = std::max(end, begin);
      for (std::size_t k = begin; k < end; ++k) parts[static_cast<std::size_t>(j)].push_back(idx[k]);
      begin = end;
    }
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return parts;
}

OracleResult DirichletReference() {
  std::vector<int64_t> labels;
  for (int i = 0; i < 60; ++i) labels.push_back(i % 3);
  double mismatches = 0;
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const auto ref = ReferenceDirichlet(labels, 3, 10.0, seed);
    bool empty = false;
    for (const auto& p : ref) empty = empty || p.empty();
    if (empty) continue;  // the library would redraw; not comparable
    const auto got = fed::PartitionDirichlet(labels, 3, 10.0, seed);
    mismatches += got == ref ? 0.0 : 1.0;
  }
  return Check("dirichlet_reference_sampler", mismatches, 0.0);
}

OracleResult AucBruteForce() {
  std::mt19937_64 g(7);
  std::uniform_int_distribution<int> pick(0, 20);
  std::vector<double> pos, neg;
  for (int i = 0; i < 40; ++i) pos.push_back(pick(g) / 4.0 + 1.0);
  for (int i = 0; i < 55; ++i) neg.push_back(pick(g) / 4.0);
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  const double ref = wins / static_cast<double>(pos.size() * neg.size());
  return Check("auc_pairwise_count", std::abs(defense::DetectionAuc(pos, neg) - ref), 1e-12);
}

OracleResult PsnrKnownMse() {
  const auto a = torch::full({3, 16, 16}, 0.5);
  const auto b = torch::full({3, 16, 16}, 0.6);
  return Check("psnr_mse_0.01_is_20db", std::abs(eval::Psnr(a, b) - 20.0), 1e-4);
}

double ReferenceSsim(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  double win[11][11], total = 0.0;
  for (int i = 0; i < 11; ++i) {
    for (int j = 0; j < 11; ++j) {
      win[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      total += win[i][j];
    }
  }
  const double c1 = 1e-4, c2 = 9e-4;
  double sum = 0.0;
  int count = 0;
  for (int y = 0; y + 11 <= h; ++y) {
    for (int x = 0; x + 11 <= w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double wt = win[i][j] / total;
          const double va = a[(y + i) * w + x + j], vb = b[(y + i) * w + x + j];
          ma += wt * va, mb += wt * vb, saa += wt * va * va, sbb += wt * vb * vb, sab += wt * va * vb;
        }
      }
      saa -= ma * ma, sbb -= mb * mb, sab -= ma * mb;
      sum += ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
      ++count;
    }
  }
  return sum / count;
}

OracleResult SsimScalarReference() {
  torch::manual_seed(11);
  const auto a = torch::rand({3, 14, 15}, torch::kFloat64);
  const auto b = (a + 0.1 * torch::randn({3, 14, 15}, torch::kFloat64)).clamp(0, 1);
  double ref = 0.0;
  for (int c = 0; c < 3; ++c) {
    const auto ac = a[c].contiguous(), bc = b[c].contiguous();
    std::vector<double> va(ac.data_ptr<double>(), ac.data_ptr<double>() + ac.numel());
    std::vector<double> vb(bc.data_ptr<double>(), bc.data_ptr<double>() + bc.numel());
    ref += ReferenceSsim(va, vb, 14, 15) / 3.0;
  }
  return Check("ssim_scalar_reference", std::abs(eval::Ssim(a, b) - ref), 1e-9);
}

OracleResult HsvHslScalar() {
  torch::manual_seed(3);
  const auto rgb = torch::rand({3, 8, 8}, torch::kFloat64);
  const auto hsv = color::RgbToHsv(rgb);
  const auto hsl = color::RgbToHsl(rgb);
  double err = 0.0;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const double r = rgb[0][y][x].item<double>(), g = rgb[1][y][x].item<double>(), b = rgb[2][y][x].item<double>();
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
      double h = 0.0;
      if (d > 0) {
        if (mx == r) h = std::fmod((g - b) / d, 6.0);
        else if (mx == g) h = (b - r) / d + 2.0;
        else h = (r - g) / d + 4.0;
        h /= 6.0;
        if (h < 0) h += 1.0;
      }
      const double s_v = mx > 0 ? d / mx : 0.0;
      const double l = 0.5 * (mx + mn);
      const double s_l = d > 0 ? d / (1.0 - std::abs(2 * l - 1)) : 0.0;
      err = std::max({err, std::abs(hsv.h[y][x].item<double>() - h), std::abs(hsv.s[y][x].item<double>() - s_v),
                      std::abs(hsv.v[y][x].item<double>() - mx), std::abs(hsl.s[y][x].item<double>() - s_l),
                      std::abs(hsl.l[y][x].item<double>() - l)});
    }
  }
  return Check("hsv_hsl_scalar_formulas", err, 1e-6);
}

OracleResult WassersteinExhaustive() {
  std::mt19937_64 g(5);
  std::normal_distribution<double> n(0.0, 1.0);
  double err = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> a(6), b(6);
    for (auto& v : a) v = n(g);
    for (auto& v : b) v = n(g) + 0.5;
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    double best = INFINITY;
    do {
      double c = 0.0;
      for (int i = 0; i < 6; ++i) c += (a[i] - b[perm[i]]) * (a[i] - b[perm[i]]);
      best = std::min(best, c / 6.0);
    } while (std::next_permutation(perm.begin(), perm.end()));
    err = std::max(err, std::abs(ot::WassersteinOneD(a, b) - std::sqrt(best)));
    const auto pa = ot::EmpiricalDistribution(torch::tensor(a, torch::kFloat64).view({6, 1}));
    const auto pb = ot::EmpiricalDistribution(torch::tensor(b, torch::kFloat64).view({6, 1}));
    err = std::max(err, std::abs(ot::ExactWassersteinSmall(pa, pb) - std::sqrt(best)));
    // Every 1-D slice is +-1, so the sliced distance is the exact one.
    err = std::max(err, std::abs(ot::SlicedWasserstein(pa, pb, {16, 9}).item<double>() - std::sqrt(best)));
  }
  return Check("wasserstein_exhaustive_coupling", err, 1e-9);
}

OracleResult StubDescent() {
  double worst = INFINITY;
  bool dominates = true;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const auto stub = conv::QuadraticStub::Random(4, 8, seed);
    conv::StubRunConfig cfg;
    cfg.seed = seed;
    cfg.lr = 0.5 / stub.Smoothness();
    const auto run = conv::RunStub(stub, cfg);
    for (const auto& r : conv::DescentCheck(run.records, run.params)) worst = std::min(worst, r.residual);
    dominates = dominates && conv::BoundReport(run.records, run.params).dominates;
  }
  std::ostringstream os;
  os << "min residual " << worst << (dominates ? ", bound dominates" : ", bound fails");
  return Check("stub_descent_inequality", std::max(0.0, -worst) + (dominates ? 0.0 : 1.0), 1e-6, os.str());
}

OracleResult EpsilonRecovery() {
  torch::manual_seed(21);
  const auto g = torch::randn({1000}, torch::kFloat64);
  auto d = torch::randn({1000}, torch::kFloat64);
  d = d * (0.37 / d.norm().item<double>());
  return Check("epsilon_recovers_injected_norm", std::abs(conv::MeasureEpsilon(g + d, g) - 0.37), 1e-6);
}

}  // namespace

std::vector<OracleResult> RunAll() {
  const std::vector<std::function<OracleResult()>> checks{
      FedAvgWeightedSum, KrumHandCase,        TrimmedMeanHandCase,   DirichletReference,
      AucBruteForce,     PsnrKnownMse,        SsimScalarReference,   HsvHslScalar,
      WassersteinExhaustive, StubDescent,     EpsilonRecovery};
  std::vector<OracleResult> out;
  for (const auto& c : checks) {
    try {
      out.push_back(c());
    } catch (const std::exception& e) {
      out.push_back({"(exception)", false, INFINITY, 0.0, e.what()});
    }
  }
  return out;
}

}  // namespace fssl::oracle
