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

#ifndef FSSL_FEDERATION_HPP_
#define FSSL_FEDERATION_HPP_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "fssl/encoder.hpp"
#include "fssl/params.hpp"
#include "fssl/rng.hpp"
#include "fssl/ssl.hpp"

namespace fssl::fed {

struct FederationConfig {
  int n_clients = 5;
  int n_malicious = 1;
  int rounds = 30;
  int local_epochs = 3;
  double client_fraction = 1.0;
  std::optional<double> dirichlet_alpha;  // nullopt: IID split
  std::uint64_t seed = 0;
  int attack_interval = 1;  // malicious client attacks when round % interval == 0

  void Validate() const;
  // The last n_malicious client ids are malicious.
  bool IsMalicious(int client_id) const { return client_id >= n_clients - n_malicious; }
};

enum class ClientRole { kBenign, kMalicious };
std::string ToString(ClientRole role);

struct ClientUpdate {
  int client_id = 0;
  ModelParams params;
  int64_t n_samples = 0;
  ClientRole role = ClientRole::kBenign;
};

using Partition = std::vector<std::vector<int64_t>>;

// Non-IID split: per class, client shares ~ Dirichlet(alpha). nullopt
// alpha gives the stratified IID split. Redraws (up to max_retries) until
// every client holds at least one sample.
Partition PartitionDirichlet(std::span<const int64_t> labels, int n_clients,
                             std::optional<double> alpha, std::uint64_t seed,
                             int max_retries = 100);

// sum_i p_i W_i with p_i = n_i / sum_j n_j, accumulated in float64 in
// client-id order.
ModelParams FedAvgAggregate(std::span<const ClientUpdate> updates);

// Server-side aggregation rule (FedAvg, Krum, Trimmed-Mean...).
class Aggregator {
 public:
  virtual ~Aggregator() = default;
  virtual std::string name() const = 0;
  virtual ModelParams Aggregate(std::span<const ClientUpdate> updates) const = 0;
};

class FedAvgAggregator : public Aggregator {
 public:
  std::string name() const override { return "fedavg"; }
  ModelParams Aggregate(std::span<const ClientUpdate> updates) const override {
    return FedAvgAggregate(updates);
  }
};

// Throws AggregationError naming the first update whose shapes differ
// from the first update's.
void CheckUpdateShapes(std::span<const ClientUpdate> updates);

struct ClientRecord {
  int client_id = 0;
  ClientRole role = ClientRole::kBenign;
  bool attacked = false;  // trained with the backdoor objective this round
  int64_t n_samples = 0;
  double weight = 0.0;
  double final_loss = 0.0;
  int64_t steps = 0;
};

struct RoundMetrics {
  int round = 0;
  std::vector<int> selected;
  std::vector<ClientRecord> clients;
  std::string aggregator;
  // Free-form scalars: epsilon, gradient norms, accuracy snapshots...
  std::map<std::string, double> scalars;

  nlohmann::json ToJson() const;
  static RoundMetrics FromJson(const nlohmann::json& j);
};

struct FederationState {
  int round = 0;
  EncoderState global;
  Partition partitions;
  std::vector<double> weights;  // p_i of the last round, aligned with `selected`
  std::vector<int> selected;
};

// Local behaviour of a malicious client in an attack round.
class MaliciousClient {
 public:
  virtual ~MaliciousClient() = default;
  struct Output {
    EncoderState state;
    double final_loss = 0.0;
    int64_t steps = 0;
  };
  virtual Output Train(const EncoderState& global, std::span<const int64_t> indices,
                       int round, Rng& rng) = 0;
};

struct RoundEnvironment {
  FederationConfig federation;
  ssl::SSLConfig ssl;
  torch::Tensor dataset;  // [M, 3, H, W] pretraining pool
  const Aggregator* aggregator = nullptr;  // defaults to FedAvg
  MaliciousClient* attacker = nullptr;     // nullptr: malicious ids train benignly
};

struct RoundResult {
  RoundMetrics metrics;
  std::vector<ClientUpdate> updates;
};

std::vector<int> SelectClients(const FederationConfig& config, int round);

// Broadcast -> local training -> aggregation. Advances state.round.
RoundResult RunRound(FederationState& state, const RoundEnvironment& env);

}  // namespace fssl::fed

#endif  // FSSL_FEDERATION_HPP_
