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

#ifndef FSSL_CONVERGENCE_HPP_
#define FSSL_CONVERGENCE_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "fssl/params.hpp"
#include "fssl/rng.hpp"

namespace fssl::conv {

// ||g - c||_2 over identically shaped vectors.
double MeasureEpsilon(const torch::Tensor& update_direction, const torch::Tensor& clean_gradient);

// (local - global) / (-lr * steps), flattened in float64.
torch::Tensor EffectiveDirection(const ModelParams& local, const ModelParams& global, double lr,
                                 int64_t steps);

using GradFn = std::function<torch::Tensor(const torch::Tensor&)>;

struct SmoothnessEstimate {
  double lipschitz = 0.0;  // lower bound on L
  int pairs_used = 0;
  int pairs_skipped = 0;
  std::string caveat;
};

// Max of ||grad(a) - grad(b)|| / ||a - b|| over random nearby pairs
// b = a + radius * u, a drawn from `points`, u a random unit vector.
SmoothnessEstimate EstimateSmoothness(const GradFn& grad, std::span<const torch::Tensor> points, Rng& rng,
                                      int n_pairs = 50, double radius = 1e-2);

// One record per global model theta_t. `epsilon` is the deviation applied
// in the round that starts from theta_t. Missing loss samples are NaN.
struct RoundRecord {
  int round = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double epsilon = 0.0;
};

struct TheoremParams {
  double smoothness = 0.0;  // L
  double grad_bound = 0.0;  // G
  double lr = 0.0;          // eta
  double rho = 0.0;         // malicious aggregation weight
  double c = 1.0;           // constant on rho * max eps^2

  void Validate() const;
};

struct DescentResidual {
  int round = 0;
  double residual = 0.0;
  bool gap = false;
  bool a3_violated = false;
};

// residual_t = [L_t - L_{t+1}]
//            - [eta/2 |grad_t|^2 - eta rho^2 eps_t^2 / 2 - L eta^2 G^2 / 2]
std::vector<DescentResidual> DescentCheck(std::span<const RoundRecord> records, const TheoremParams& params);

struct BoundSummary {
  int rounds = 0;
  double l0 = 0.0;
  double l_star = 0.0;  // running minimum observed loss, not the true infimum
  double min_grad_sq = 0.0;
  double max_eps_sq = 0.0;
  double clean_term = 0.0;       // 2 (L0 - L*) / (eta T)
  double attack_term = 0.0;      // c rho max eps^2
  double smoothness_term = 0.0;  // L eta G^2, absent from the theorem statement
  double bound = 0.0;            // clean_term + attack_term
  double bound_with_smoothness = 0.0;
  bool dominates = false;        // min_grad_sq <= bound
  double margin = 0.0;           // bound - min_grad_sq
  bool a3_violated = false;
  std::vector<std::string> caveats;
};

BoundSummary BoundReport(std::span<const RoundRecord> records, const TheoremParams& params);

nlohmann::json ToJson(const RoundRecord& r);
RoundRecord RecordFromJson(const nlohmann::json& j);
nlohmann::json ToJson(const TheoremParams& p);
TheoremParams TheoremParamsFromJson(const nlohmann::json& j);
nlohmann::json ToJson(const BoundSummary& s);
std::string ResidualCsv(std::span<const DescentResidual> residuals, std::span<const RoundRecord> records);

// Clients with losses f_i(theta) = a_i / 2 * ||theta - c_i||^2, weights p_i.
struct QuadraticStub {
  std::vector<double> curvature;
  std::vector<torch::Tensor> centers;
  std::vector<double> weights;

  static QuadraticStub Random(int n_clients, int dim, uint64_t seed);
  double Loss(const torch::Tensor& theta) const;
  torch::Tensor Gradient(const torch::Tensor& theta) const;
  torch::Tensor ClientGradient(std::size_t i, const torch::Tensor& theta) const;
  double Smoothness() const;  // max_i a_i
  double MinimumLoss() const;
};

struct StubRunConfig {
  int rounds = 50;
  double lr = 0.1;
  int malicious_client = -1;    // -1 = honest run
  double deviation_norm = 0.0;  // ||d_t|| added to that client's gradient
  uint64_t seed = 0;
  int dim = 8;
};

struct StubRun {
  std::vector<RoundRecord> records;  // rounds + 1 entries
  TheoremParams params;              // analytic L, realised G
  torch::Tensor start;
};

// Full-batch FedAvg gradient descent on the stub.
StubRun RunStub(const QuadraticStub& stub, const StubRunConfig& config);

}  // namespace fssl::conv

#endif  // FSSL_CONVERGENCE_HPP_
