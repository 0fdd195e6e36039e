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

#include "fssl/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "fssl/errors.hpp"

namespace fssl::fed {

void FederationConfig::Validate() const {
  Require(n_clients >= 1, "federation: n_clients must be positive");
  Require(n_malicious >= 0 && n_malicious < n_clients,
          "federation: need 0 <= n_malicious < n_clients");
  Require(rounds >= 1 && local_epochs >= 1, "federation: rounds and local_epochs must be positive");
  Require(client_fraction > 0 && client_fraction <= 1, "federation: client_fraction must lie in (0, 1]");
  Require(client_fraction * n_clients >= 1.0 - 1e-12,
          "federation: client_fraction * n_clients must be >= 1");
  Require(!dirichlet_alpha || *dirichlet_alpha > 0, "federation: dirichlet_alpha must be positive");
  Require(attack_interval >= 1, "federation: attack_interval must be positive");
}

std::string ToString(ClientRole role) {
  return role == ClientRole::kMalicious ? "malicious" : "benign";
}

Partition PartitionDirichlet(std::span<const int64_t> labels, int n_clients,
                             std::optional<double> alpha, std::uint64_t seed,
                             int max_retries) {
  Require(n_clients >= 1, "partition: n_clients must be >= 1");
  Require(!labels.empty(), "partition: empty label set");
  Require(!alpha || *alpha > 0, "partition: alpha must be positive");
  std::map<int64_t, std::vector<int64_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int64_t>(i));

  const auto n = static_cast<std::size_t>(n_clients);
  std::mt19937_64 engine(seed);
  int empty_client = -1;
  for (int attempt = 0; attempt < std::max(1, max_retries); ++attempt) {
    Partition parts(n);
    std::size_t deal_offset = 0;
    for (auto& [cls, members] : by_class) {
      std::vector<int64_t> idx = members;
      std::shuffle(idx.begin(), idx.end(), engine);
      if (!alpha) {
        for (std::size_t i = 0; i < idx.size(); ++i) parts[(deal_offset + i) % n].push_back(idx[i]);
        deal_offset += idx.size();
        continue;
      }
      std::gamma_distribution<double> gamma(*alpha, 1.0);
      std::vector<double> share(n);
      double total = 0.0;
      for (auto& s : share) total += (s = gamma(engine));
      if (!(total > 0.0)) {
        std::fill(share.begin(), share.end(), 1.0);
        total = static_cast<double>(n);
      }
      double cumulative = 0.0;
      std::size_t begin = 0;
      for (std::size_t j = 0; j < n; ++j) {
        cumulative += share[j] / total;
        std::size_t end = j + 1 == n
                              ? idx.size()
                              : std::min(idx.size(), static_cast<std::size_t>(std::floor(
                                                         cumulative * static_cast<double>(idx.size()))));
        end = std::max(end, begin);
        parts[j].insert(parts[j].end(), idx.begin() + static_cast<std::ptrdiff_t>(begin),
                        idx.begin() + static_cast<std::ptrdiff_t>(end));
        begin = end;
      }
    }
    empty_client = -1;
    for (std::size_t j = 0; j < n; ++j) {
      if (parts[j].empty()) {
        empty_client = static_cast<int>(j);
        break;
      }
    }
    if (empty_client < 0) {
      for (auto& p : parts) std::sort(p.begin(), p.end());
      return parts;
    }
    if (!alpha) break;  // deterministic split; retrying cannot help
  }
  std::ostringstream os;
  os << "partition failed: client " << empty_client << " received no samples after "
     << max_retries << " attempts";
  throw PartitionError(os.str());
}

void CheckUpdateShapes(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw AggregationError("aggregation: no client updates");
  for (std::size_t i = 1; i < updates.size(); ++i) {
    const std::string why = DescribeShapeMismatch(updates[0].params, updates[i].params);
    if (!why.empty()) {
      throw AggregationError("aggregation: client " + std::to_string(updates[i].client_id) +
                             " update does not match: " + why);
    }
  }
}

ModelParams FedAvgAggregate(std::span<const ClientUpdate> updates) {
  CheckUpdateShapes(updates);
  std::vector<const ClientUpdate*> ordered;
  for (const auto& u : updates) ordered.push_back(&u);
  std::sort(ordered.begin(), ordered.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });
  double total = 0.0;
  for (const auto* u : ordered) {
    if (u->n_samples <= 0) {
      throw AggregationError("aggregation: client " + std::to_string(u->client_id) +
                             " reported no samples");
    }
    total += static_cast<double>(u->n_samples);
  }
  const ModelParams& like = ordered.front()->params;
  ModelParams out;
  out.reserve(like.size());
  for (std::size_t k = 0; k < like.size(); ++k) {
    auto acc = torch::zeros(like[k].value.sizes(), torch::kFloat64);
    for (const auto* u : ordered) {
      acc.add_(u->params[k].value.to(torch::kFloat64), static_cast<double>(u->n_samples) / total);
    }
    out.push_back({like[k].name, acc.to(like[k].value.scalar_type())});
  }
  return out;
}

nlohmann::json RoundMetrics::ToJson() const {
  nlohmann::json clients_json = nlohmann::json::array();
  for (const auto& c : clients) {
    clients_json.push_back({{"client_id", c.client_id},
                            {"role", ToString(c.role)},
                            {"attacked", c.attacked},
                            {"n_samples", c.n_samples},
                            {"weight", c.weight},
                            {"final_loss", c.final_loss},
                            {"steps", c.steps}});
  }
  return {{"round", round},
          {"selected", selected},
          {"aggregator", aggregator},
          {"clients", clients_json},
          {"scalars", scalars}};
}

RoundMetrics RoundMetrics::FromJson(const nlohmann::json& j) {
  RoundMetrics m;
  m.round = j.at("round").get<int>();
  m.selected = j.at("selected").get<std::vector<int>>();
  m.aggregator = j.at("aggregator").get<std::string>();
  for (const auto& c : j.at("clients")) {
    ClientRecord r;
    r.client_id = c.at("client_id").get<int>();
    r.role = c.at("role").get<std::string>() == "malicious" ? ClientRole::kMalicious : ClientRole::kBenign;
    r.attacked = c.at("attacked").get<bool>();
    r.n_samples = c.at("n_samples").get<int64_t>();
    r.weight = c.at("weight").get<double>();
    r.final_loss = c.at("final_loss").get<double>();
    r.steps = c.at("steps").get<int64_t>();
    m.clients.push_back(r);
  }
  m.scalars = j.at("scalars").get<std::map<std::string, double>>();
  return m;
}

std::vector<int> SelectClients(const FederationConfig& config, int round) {
  std::vector<int> all(static_cast<std::size_t>(config.n_clients));
  std::iota(all.begin(), all.end(), 0);
  if (config.client_fraction >= 1.0) return all;
  const int m = std::max(1, static_cast<int>(std::lround(config.client_fraction * config.n_clients)));
  Rng rng(DeriveSeed(config.seed, {Tag(Stream::kSelection), static_cast<std::uint64_t>(round)}));
  std::vector<int> picked;
  while (picked.empty()) {
    std::vector<int> shuffled = all;
    rng.Shuffle(shuffled);
    picked.assign(shuffled.begin(), shuffled.begin() + std::min<std::ptrdiff_t>(m, config.n_clients));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

RoundResult RunRound(FederationState& state, const RoundEnvironment& env) {
  const FederationConfig& cfg = env.federation;
  cfg.Validate();
  Require(state.round < cfg.rounds, "RunRound: all rounds already completed");
  Require(static_cast<int>(state.partitions.size()) == cfg.n_clients,
          "RunRound: partition count does not match n_clients");
  static const FedAvgAggregator kFedAvg;
  const Aggregator& aggregator = env.aggregator ? *env.aggregator : kFedAvg;

  RoundResult result;
  RoundMetrics& metrics = result.metrics;
  metrics.round = state.round;
  metrics.aggregator = aggregator.name();
  metrics.selected = SelectClients(cfg, state.round);
  const bool attack_round = state.round % cfg.attack_interval == 0;

  ssl::SSLConfig local_ssl = env.ssl;
  local_ssl.local_epochs = cfg.local_epochs;

  for (int id : metrics.selected) {
    const auto& indices = state.partitions[static_cast<std::size_t>(id)];
    Rng rng(DeriveSeed(cfg.seed, {Tag(Stream::kClientTrain), static_cast<std::uint64_t>(state.round),
                                  static_cast<std::uint64_t>(id)}));
    ClientRecord record;
    record.client_id = id;
    record.role = cfg.IsMalicious(id) ? ClientRole::kMalicious : ClientRole::kBenign;
    record.n_samples = static_cast<int64_t>(indices.size());
    ClientUpdate update;
    update.client_id = id;
    update.role = record.role;
    update.n_samples = record.n_samples;
    try {
      if (record.role == ClientRole::kMalicious && attack_round && env.attacker) {
        auto out = env.attacker->Train(state.global, indices, state.round, rng);
        update.params = std::move(out.state.params);
        record.final_loss = out.final_loss;
        record.steps = out.steps;
        record.attacked = true;
      } else {
        auto out = ssl::BenignLocalTrain(state.global, env.dataset, indices, local_ssl, rng);
        update.params = std::move(out.state.params);
        record.final_loss = out.epoch_losses.empty() ? 0.0 : out.epoch_losses.back();
        record.steps = out.steps;
      }
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "client " << id << " failed in round " << state.round << ": " << e.what();
      throw TrainingError(os.str());
    }
    metrics.clients.push_back(record);
    result.updates.push_back(std::move(update));
  }

  double total = 0.0;
  for (const auto& u : result.updates) total += static_cast<double>(u.n_samples);
  state.weights.clear();
  for (auto& c : metrics.clients) {
    c.weight = static_cast<double>(c.n_samples) / total;
    state.weights.push_back(c.weight);
  }
  state.selected = metrics.selected;
  state.global.params = aggregator.Aggregate(result.updates);
  bool any_attack = false;
  for (const auto& c : metrics.clients) any_attack = any_attack || c.attacked;
  if (any_attack) state.global.role = EncoderRole::kBackdoored;
  ++state.round;
  return result;
}

}  // namespace fssl::fed
