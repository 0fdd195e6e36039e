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

#include "fssl/convergence.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "fssl/errors.hpp"

namespace fssl::conv {

double MeasureEpsilon(const torch::Tensor& g, const torch::Tensor& c) {
  Require(g.sizes().equals(c.sizes()), "MeasureEpsilon: parameterisations differ");
  return (g.to(torch::kFloat64) - c.to(torch::kFloat64)).norm().item<double>();
}

torch::Tensor EffectiveDirection(const ModelParams& local, const ModelParams& global, double lr, int64_t steps) {
  Require(lr > 0 && steps > 0, "EffectiveDirection: lr and steps must be positive");
  const auto a = Flatten(local), b = Flatten(global);
  Require(a.sizes().equals(b.sizes()), "EffectiveDirection: parameterisations differ");
  return (a - b) / (-lr * static_cast<double>(steps));
}

SmoothnessEstimate EstimateSmoothness(const GradFn& grad, std::span<const torch::Tensor> points, Rng& rng,
                                      int n_pairs, double radius) {
  Require(points.size() >= 2, "EstimateSmoothness: need at least two parameter points");
  SmoothnessEstimate est;
  est.caveat = "max over " + std::to_string(n_pairs) + " sampled pairs; a lower bound on L";
  for (int p = 0; p < n_pairs; ++p) {
    const auto& a = points[static_cast<std::size_t>(rng.UniformInt(0, static_cast<int64_t>(points.size()) - 1))];
    auto u = torch::empty_like(a, torch::kFloat64);
    auto* data = u.data_ptr<double>();
    for (int64_t i = 0; i < u.numel(); ++i) data[i] = rng.Normal();
    const auto a64 = a.to(torch::kFloat64);
    const auto b = a64 + radius * u / u.norm();
    const double dist = (b - a64).norm().item<double>();
    if (!(dist > 0)) {
      ++est.pairs_skipped;
      continue;
    }
    const double dg = (grad(b).to(torch::kFloat64) - grad(a64).to(torch::kFloat64)).norm().item<double>();
    est.lipschitz = std::max(est.lipschitz, dg / dist);
    ++est.pairs_used;
  }
  return est;
}

void TheoremParams::Validate() const {
  Require(smoothness > 0 && grad_bound > 0 && lr > 0 && rho > 0,
          "TheoremParams: L, G, eta and rho must be positive");
  Require(c >= 0, "TheoremParams: c must be non-negative");
}

std::vector<DescentResidual> DescentCheck(std::span<const RoundRecord> records, const TheoremParams& p) {
  p.Validate();
  std::vector<DescentResidual> out;
  const bool a3 = p.lr > 1.0 / p.smoothness;
  for (std::size_t t = 0; t + 1 < records.size(); ++t) {
    DescentResidual r;
    r.round = records[t].round;
    r.a3_violated = a3;
    const double l0 = records[t].loss, l1 = records[t + 1].loss;
    if (!std::isfinite(l0) || !std::isfinite(l1) || !std::isfinite(records[t].grad_norm)) {
      r.gap = true;
      r.residual = std::numeric_limits<double>::quiet_NaN();
      out.push_back(r);
      continue;
    }
    const double g2 = records[t].grad_norm * records[t].grad_norm;
    const double e2 = records[t].epsilon * records[t].epsilon;
    const double predicted = 0.5 * p.lr * g2 - 0.5 * p.lr * p.rho * p.rho * e2 -
                             0.5 * p.smoothness * p.lr * p.lr * p.grad_bound * p.grad_bound;
    r.residual = (l0 - l1) - predicted;
    out.push_back(r);
  }
  return out;
}

BoundSummary BoundReport(std::span<const RoundRecord> records, const TheoremParams& p) {
  p.Validate();
  Require(records.size() >= 2, "BoundReport: need at least one completed round");
  BoundSummary s;
  s.rounds = static_cast<int>(records.size()) - 1;
  s.l0 = records.front().loss;
  s.l_star = std::numeric_limits<double>::infinity();
  s.min_grad_sq = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < records.size(); ++t) {
    const auto& r = records[t];
    if (std::isfinite(r.loss)) s.l_star = std::min(s.l_star, r.loss);
    if (t + 1 < records.size()) {
      if (std::isfinite(r.grad_norm)) s.min_grad_sq = std::min(s.min_grad_sq, r.grad_norm * r.grad_norm);
      s.max_eps_sq = std::max(s.max_eps_sq, r.epsilon * r.epsilon);
    }
  }
  const double T = s.rounds;
  s.clean_term = 2.0 * (s.l0 - s.l_star) / (p.lr * T);
  s.attack_term = p.c * p.rho * s.max_eps_sq;
  s.smoothness_term = p.smoothness * p.lr * p.grad_bound * p.grad_bound;
  s.bound = s.clean_term + s.attack_term;
  s.bound_with_smoothness = s.bound + s.smoothness_term;
  s.dominates = s.min_grad_sq <= s.bound;
  s.margin = s.bound - s.min_grad_sq;
  s.a3_violated = p.lr > 1.0 / p.smoothness;
  s.caveats = {
      "L* is the running minimum observed loss",
      "local multi-epoch updates are converted to an effective single-step direction",
      "L is a sampled lower-bound estimate unless supplied analytically",
      "the L*eta*G^2 term is reported separately from the stated bound",
  };
  if (s.a3_violated) s.caveats.push_back("A3 violated: eta > 1/L");
  return s;
}

nlohmann::json ToJson(const RoundRecord& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"round", r.round}, {"loss", num(r.loss)}, {"grad_norm", num(r.grad_norm)}, {"epsilon", r.epsilon}};
}

RoundRecord RecordFromJson(const nlohmann::json& j) {
  auto num = [](const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  return {j.at("round").get<int>(), num(j.at("loss")), num(j.at("grad_norm")), j.at("epsilon").get<double>()};
}

nlohmann::json ToJson(const TheoremParams& p) {
  return {{"L", p.smoothness}, {"G", p.grad_bound}, {"eta", p.lr}, {"rho", p.rho}, {"c", p.c}};
}

TheoremParams TheoremParamsFromJson(const nlohmann::json& j) {
  return {j.at("L").get<double>(), j.at("G").get<double>(), j.at("eta").get<double>(),
          j.at("rho").get<double>(), j.at("c").get<double>()};
}

nlohmann::json ToJson(const BoundSummary& s) {
  return {{"rounds", s.rounds},
          {"L0", s.l0},
          {"L_star_running_min", s.l_star},
          {"min_grad_sq", s.min_grad_sq},
          {"max_eps_sq", s.max_eps_sq},
          {"clean_term", s.clean_term},
          {"attack_term", s.attack_term},
          {"smoothness_term", s.smoothness_term},
          {"bound", s.bound},
          {"bound_with_smoothness", s.bound_with_smoothness},
          {"dominates", s.dominates},
          {"margin", s.margin},
          {"a3_violated", s.a3_violated},
          {"caveats", s.caveats}};
}

std::string ResidualCsv(std::span<const DescentResidual> residuals, std::span<const RoundRecord> records) {
  std::ostringstream out;
  out.precision(17);
  out << "round,loss,grad_norm,epsilon,residual,gap,a3_violated\n";
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const auto& r = residuals[i];
    const auto& rec = records[i];
    out << r.round << ',' << rec.loss << ',' << rec.grad_norm << ',' << rec.epsilon << ',' << r.residual << ','
        << (r.gap ? 1 : 0) << ',' << (r.a3_violated ? 1 : 0) << '\n';
  }
  return out.str();
}

QuadraticStub QuadraticStub::Random(int n_clients, int dim, uint64_t seed) {
  Require(n_clients >= 1 && dim >= 1, "QuadraticStub: need clients and dimensions");
  Rng rng(seed);
  QuadraticStub s;
  double total = 0.0;
  for (int i = 0; i < n_clients; ++i) {
    s.curvature.push_back(rng.Uniform(0.5, 2.0));
    auto c = torch::empty({dim}, torch::kFloat64);
    for (int d = 0; d < dim; ++d) c[d] = rng.Normal();
    s.centers.push_back(c);
    s.weights.push_back(rng.Uniform(1.0, 3.0));
    total += s.weights.back();
  }
  for (auto& w : s.weights) w /= total;
  return s;
}

double QuadraticStub::Loss(const torch::Tensor& theta) const {
  double l = 0.0;
  for (std::size_t i = 0; i < curvature.size(); ++i) {
    l += weights[i] * 0.5 * curvature[i] * (theta - centers[i]).square().sum().item<double>();
  }
  return l;
}

torch::Tensor QuadraticStub::ClientGradient(std::size_t i, const torch::Tensor& theta) const {
  return curvature[i] * (theta - centers[i]);
}

torch::Tensor QuadraticStub::Gradient(const torch::Tensor& theta) const {
  auto g = torch::zeros_like(theta);
  for (std::size_t i = 0; i < curvature.size(); ++i) g += weights[i] * ClientGradient(i, theta);
  return g;
}

double QuadraticStub::Smoothness() const { return *std::max_element(curvature.begin(), curvature.end()); }

double QuadraticStub::MinimumLoss() const {
  // The weighted sum of quadratics is minimised at sum(p a c) / sum(p a).
  double denom = 0.0;
  auto num = torch::zeros_like(centers.front());
  for (std::size_t i = 0; i < curvature.size(); ++i) {
    num += weights[i] * curvature[i] * centers[i];
    denom += weights[i] * curvature[i];
  }
  return Loss(num / denom);
}

StubRun RunStub(const QuadraticStub& stub, const StubRunConfig& cfg) {
  Require(cfg.rounds >= 1 && cfg.lr > 0, "RunStub: rounds and lr must be positive");
  Require(cfg.malicious_client < static_cast<int>(stub.curvature.size()), "RunStub: malicious client out of range");
  Rng rng(cfg.seed);
  const auto dim = stub.centers.front().size(0);
  StubRun run;
  run.start = torch::empty({dim}, torch::kFloat64);
  for (int64_t d = 0; d < dim; ++d) run.start[d] = rng.Normal(0.0, 3.0);
  auto theta = run.start.clone();
  double g_max = 0.0;
  for (int t = 0; t <= cfg.rounds; ++t) {
    RoundRecord rec;
    rec.round = t;
    rec.loss = stub.Loss(theta);
    rec.grad_norm = stub.Gradient(theta).norm().item<double>();
    for (std::size_t i = 0; i < stub.curvature.size(); ++i) {
      g_max = std::max(g_max, stub.ClientGradient(i, theta).norm().item<double>());
    }
    if (t == cfg.rounds) {
      run.records.push_back(rec);
      break;
    }
    auto step = torch::zeros_like(theta);
    for (std::size_t i = 0; i < stub.curvature.size(); ++i) {
      auto g = stub.ClientGradient(i, theta);
      if (static_cast<int>(i) == cfg.malicious_client && cfg.deviation_norm > 0) {
        auto d = torch::empty_like(theta);
        for (int64_t k = 0; k < dim; ++k) d[k] = rng.Normal();
        d *= cfg.deviation_norm / d.norm().item<double>();
        rec.epsilon = MeasureEpsilon(g + d, g);
        g = g + d;
      }
      step += stub.weights[i] * g;
    }
    run.records.push_back(rec);
    theta = theta - cfg.lr * step;
  }
  run.params.smoothness = stub.Smoothness();
  run.params.grad_bound = std::max(g_max, 1e-12);
  run.params.lr = cfg.lr;
  run.params.rho = cfg.malicious_client >= 0 ? stub.weights[static_cast<std::size_t>(cfg.malicious_client)]
                                             : *std::min_element(stub.weights.begin(), stub.weights.end());
  return run;
}

}  // namespace fssl::conv
