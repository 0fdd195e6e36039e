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

#include "fssl/experiment.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "fssl/backdoor.hpp"
#include "fssl/errors.hpp"
#include "fssl/rng.hpp"
#include "fssl/ssl.hpp"

namespace fssl {

Workspace PrepareWorkspace(const ExperimentConfig& config) {
  config.Validate();
  Workspace ws;
  ws.config = config;
  ws.data = data::LoadDataset(config.dataset);
  Require(ws.data.pretrain.size() >= config.federation.n_clients, "pretraining pool smaller than the client count");

  const auto labels = ws.data.pretrain.labels.contiguous();
  ws.partition = fed::PartitionDirichlet({labels.data_ptr<int64_t>(), static_cast<std::size_t>(labels.numel())},
                                         config.federation.n_clients, config.federation.dirichlet_alpha,
                                         DeriveSeed(config.seed, {Tag(Stream::kPartition)}));

  // Target exemplars come from unlabelled downstream data so they never
  // overlap the probe's training labels or the test set.
  Rng rng(DeriveSeed(config.seed, {Tag(Stream::kSelection)}));
  std::vector<int64_t> target_idx;
  const auto& pool = ws.data.downstream_unlabeled;
  for (int64_t i = 0; i < pool.size(); ++i) {
    if (pool.labels[i].item<int64_t>() == config.attack.target_class) target_idx.push_back(i);
  }
  Require(static_cast<int>(target_idx.size()) >= config.attack.target_exemplars,
          "not enough unlabelled target-class images for the requested exemplars");
  rng.Shuffle(target_idx);
  target_idx.resize(static_cast<std::size_t>(config.attack.target_exemplars));
  ws.targets = pool.Select(target_idx).images;

  std::vector<int64_t> mon(static_cast<std::size_t>(pool.size()));
  std::iota(mon.begin(), mon.end(), 0);
  rng.Shuffle(mon);
  mon.resize(static_cast<std::size_t>(std::min<int64_t>(config.monitor_batch, pool.size())));
  ws.monitor_images = pool.Select(mon).images;
  return ws;
}

std::unique_ptr<fed::Aggregator> MakeAggregator(const std::string& name, const ExperimentConfig& config) {
  if (name == "fedavg") return std::make_unique<fed::FedAvgAggregator>();
  if (name == "krum") return std::make_unique<defense::KrumAggregator>(config.krum_f);
  if (name == "trimmed_mean") return std::make_unique<defense::TrimmedMeanAggregator>(config.trim_k);
  throw ConfigError("unknown aggregator '" + name + "'");
}

std::pair<double, torch::Tensor> MonitorProbe(const EncoderState& state, const torch::Tensor& images,
                                              const ssl::SSLConfig& config, uint64_t seed) {
  auto enc = Instantiate(state);
  Rng rng(seed);
  enc->zero_grad();
  auto loss = ssl::ContrastiveBatchLoss(enc, images, config, rng);
  loss.backward();
  std::vector<torch::Tensor> grads;
  for (const auto& p : enc->parameters()) {
    grads.push_back(p.grad().defined() ? p.grad().flatten().to(torch::kFloat64)
                                       : torch::zeros({p.numel()}, torch::kFloat64));
  }
  return {loss.item<double>(), torch::cat(grads)};
}

namespace {

// Flattened parameter (not buffer) difference, matching MonitorProbe's
// gradient layout.
torch::Tensor ParamDirection(const EncoderState& local, const EncoderState& global, double lr, int64_t steps) {
  auto a = Instantiate(local), b = Instantiate(global);
  std::vector<torch::Tensor> diffs;
  const auto pa = a->parameters(), pb = b->parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    diffs.push_back((pa[i] - pb[i]).detach().flatten().to(torch::kFloat64));
  }
  return torch::cat(diffs) / (-lr * static_cast<double>(steps));
}

class BackdoorClient : public fed::MaliciousClient {
 public:
  BackdoorClient(const Workspace& ws, AttackMode mode, const EncoderState& reference)
      : ws_(ws), cfg_(ws.config), mode_(mode), stealth_(Instantiate(reference)) {
    Freeze(stealth_);
    if (mode_ == AttackMode::kInjector) {
      net_ = injector::MakeInjector(cfg_.injector_net, DeriveSeed(cfg_.seed, {Tag(Stream::kInjector), 0}));
    }
  }

  Output Train(const EncoderState& global, std::span<const int64_t> indices, int round, Rng& rng) override {
    const auto& images = ws_.data.pretrain.images;
    if (mode_ == AttackMode::kInjector && !identity_done_) {
      Rng init(DeriveSeed(cfg_.seed, {Tag(Stream::kInjector), 1}));
      const auto local = images.index_select(0, torch::tensor(std::vector<int64_t>(indices.begin(), indices.end())));
      injector::PretrainIdentity(net_, local, cfg_.injector.identity_pretrain_steps,
                                 cfg_.injector.identity_pretrain_lr, cfg_.injector.batch_size, init);
      identity_done_ = true;
    }

    backdoor::EpochHook hook;
    if (mode_ == AttackMode::kInjector) {
      hook = [&](backdoor::EncoderPair& pair, int epoch) {
        if (epoch % cfg_.injector_epoch_interval != 0) return;
        std::vector<int64_t> subset(indices.begin(), indices.end());
        rng.Shuffle(subset);
        subset.resize(std::min<std::size_t>(subset.size(), static_cast<std::size_t>(cfg_.injector_train_samples)));
        injector::ObjectiveContext ctx{&stealth_, &pair.clean, &pair.backdoored, ws_.targets,
                                       cfg_.ssl.augment, pair.center};
        const auto r = injector::TrainInjector(net_, images.index_select(0, torch::tensor(subset)), ctx,
                                               cfg_.injector, rng);
        last_injector_ = r;
      };
    }
    // The injector changes between epochs, so poison with the live net.
    const backdoor::TriggerFn live =
        mode_ == AttackMode::kInjector
            ? backdoor::TriggerFn([this](const torch::Tensor& x) { return injector::Inject(net_, x); })
            : MakeTrigger(mode_, cfg_, std::nullopt);
    auto r = backdoor::MaliciousLocalTrain(global, images, indices, ws_.targets, live, hook, cfg_.attack, rng);

    epsilon_.reset();
    if (cfg_.monitor) {
      // One clean SSL gradient on a batch of the attacker's own data.
      std::vector<int64_t> batch(indices.begin(), indices.end());
      Rng pick(DeriveSeed(cfg_.seed, {Tag(Stream::kMonitor), 1, static_cast<uint64_t>(round)}));
      pick.Shuffle(batch);
      batch.resize(std::min<std::size_t>(batch.size(), static_cast<std::size_t>(cfg_.ssl.batch_size)));
      const auto clean_grad = MonitorProbe(global, images.index_select(0, torch::tensor(batch)), cfg_.ssl,
                                           DeriveSeed(cfg_.seed, {Tag(Stream::kMonitor), 2, static_cast<uint64_t>(round)}))
                                  .second;
      epsilon_ = conv::MeasureEpsilon(ParamDirection(r.state, global, cfg_.attack.learning_rate, r.steps), clean_grad);
    }
    last_align_ = r.align_losses.empty() ? 0.0 : r.align_losses.back();
    last_utility_ = r.utility_losses.empty() ? 0.0 : r.utility_losses.back();
    return {r.state, r.total_losses.empty() ? 0.0 : r.total_losses.back(), r.steps};
  }

  std::optional<injector::InjectorState> injector_state() const {
    if (mode_ != AttackMode::kInjector) return std::nullopt;
    return injector::Snapshot(net_);
  }
  std::optional<double> epsilon() const { return epsilon_; }
  double last_align() const { return last_align_; }
  double last_utility() const { return last_utility_; }
  const std::optional<injector::InjectorTrainResult>& last_injector() const { return last_injector_; }

 private:
  const Workspace& ws_;
  const ExperimentConfig& cfg_;
  AttackMode mode_;
  Encoder stealth_;
  injector::InjectorNet net_{nullptr};
  bool identity_done_ = false;
  std::optional<double> epsilon_;
  double last_align_ = 0.0, last_utility_ = 0.0;
  std::optional<injector::InjectorTrainResult> last_injector_;
};

double Mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

PhaseLog RunRounds(const Workspace& ws, fed::FederationState& state, int rounds, const fed::Aggregator& agg,
                   BackdoorClient* attacker, const RoundCallback& on_round) {
  const auto& cfg = ws.config;
  fed::RoundEnvironment env{cfg.federation, cfg.ssl, ws.data.pretrain.images, &agg, attacker};
  // Round numbers run on from earlier phases.
  env.federation.rounds = state.round + rounds;
  const uint64_t monitor_seed = DeriveSeed(cfg.seed, {Tag(Stream::kMonitor), 0});
  PhaseLog log;
  auto probe = [&](int round) {
    conv::RoundRecord rec;
    rec.round = round;
    const auto [loss, grad] = MonitorProbe(state.global, ws.monitor_images, cfg.ssl, monitor_seed);
    rec.loss = loss;
    rec.grad_norm = grad.norm().item<double>();
    return rec;
  };
  for (int r = 0; r < rounds; ++r) {
    std::optional<conv::RoundRecord> rec;
    if (cfg.monitor) rec = probe(state.round);
    auto result = fed::RunRound(state, env);
    auto& m = result.metrics;
    if (attacker) {
      if (attacker->epsilon()) m.scalars["epsilon"] = *attacker->epsilon();
      m.scalars["malicious_align_loss"] = attacker->last_align();
      m.scalars["malicious_utility_loss"] = attacker->last_utility();
      if (const auto& inj = attacker->last_injector()) {
        m.scalars["injector_stealth"] = Mean(inj->stealth);
        m.scalars["injector_disentangle"] = Mean(inj->disentangle);
        m.scalars["injector_align"] = Mean(inj->align);
      }
      for (const auto& c : m.clients) {
        if (c.role == fed::ClientRole::kMalicious) m.scalars["malicious_weight"] = c.weight;
      }
    }
    if (rec) {
      rec->epsilon = m.scalars.count("epsilon") ? m.scalars["epsilon"] : 0.0;
      m.scalars["probe_loss"] = rec->loss;
      m.scalars["probe_grad_norm"] = rec->grad_norm;
      log.monitor.push_back(*rec);
    }
    if (on_round) on_round(m);
    log.rounds.push_back(std::move(m));
  }
  if (cfg.monitor) log.monitor.push_back(probe(state.round));
  return log;
}

}  // namespace

PretrainResult RunPretrain(const Workspace& ws, const RoundCallback& on_round) {
  const auto& cfg = ws.config;
  fed::FederationState state;
  state.global = InitEncoderState(cfg.encoder, DeriveSeed(cfg.seed, {Tag(Stream::kInit)}));
  state.partitions = ws.partition;
  fed::FedAvgAggregator agg;
  PretrainResult out;
  out.log = RunRounds(ws, state, cfg.pretrain_rounds, agg, nullptr, on_round);
  out.global = state.global;
  return out;
}

AttackRun RunAttackPhase(const Workspace& ws, const EncoderState& start, AttackMode mode,
                         const std::string& aggregator, const RoundCallback& on_round) {
  const auto& cfg = ws.config;
  fed::FederationState state;
  state.round = cfg.pretrain_rounds;
  state.global = start;
  state.partitions = ws.partition;
  const auto agg = MakeAggregator(aggregator, cfg);
  std::unique_ptr<BackdoorClient> attacker;
  if (mode != AttackMode::kNone) attacker = std::make_unique<BackdoorClient>(ws, mode, start);

  AttackRun run;
  run.mode = mode;
  run.aggregator = aggregator;
  run.log = RunRounds(ws, state, cfg.federation.rounds, *agg, attacker.get(), on_round);
  run.global = state.global;
  if (attacker) run.injector = attacker->injector_state();

  if (cfg.monitor && run.log.monitor.size() >= 2) {
    conv::TheoremParams p;
    p.lr = cfg.ssl.learning_rate;
    p.c = cfg.monitor_c;
    double rho = 0.0;
    for (const auto& m : run.log.rounds) {
      for (const auto& c : m.clients) {
        if (cfg.federation.IsMalicious(c.client_id)) rho = std::max(rho, c.weight);
      }
    }
    p.rho = rho > 0 ? rho : 1.0 / cfg.federation.n_clients;
    // Smoothness from nearby pairs around the first and last global models.
    const auto monitor_seed = DeriveSeed(cfg.seed, {Tag(Stream::kMonitor), 3});
    auto like = start;
    conv::GradFn grad = [&](const torch::Tensor& flat) {
      auto st = like;
      auto enc = Instantiate(st);
      {
        torch::NoGradGuard ng;
        int64_t off = 0;
        for (auto& q : enc->parameters()) {
          q.copy_(flat.narrow(0, off, q.numel()).view_as(q).to(q.dtype()));
          off += q.numel();
        }
      }
      return MonitorProbe(Snapshot(enc, EncoderRole::kClean), ws.monitor_images, cfg.ssl, monitor_seed).second;
    };
    auto flat_params = [](const EncoderState& s) {
      auto e = Instantiate(s);
      std::vector<torch::Tensor> v;
      for (const auto& q : e->parameters()) v.push_back(q.detach().flatten().to(torch::kFloat64));
      return torch::cat(v);
    };
    const std::vector<torch::Tensor> points{flat_params(start), flat_params(run.global)};
    Rng rng(monitor_seed);
    const auto est = conv::EstimateSmoothness(grad, points, rng, 10, 1e-2);
    p.smoothness = std::max(est.lipschitz, 1e-12);
    double g = 0.0;
    for (const auto& r : run.log.monitor) g = std::max(g, r.grad_norm);
    p.grad_bound = std::max(g, 1e-12);
    run.theorem = p;
  }
  return run;
}

backdoor::TriggerFn MakeTrigger(AttackMode mode, const ExperimentConfig& config,
                                const std::optional<injector::InjectorState>& state) {
  switch (mode) {
    case AttackMode::kInjector: {
      Require(state.has_value(), "injector trigger requested without an injector state");
      auto net = injector::Instantiate(*state);
      return [net](const torch::Tensor& x) mutable { return injector::Inject(net, x); };
    }
    case AttackMode::kPatch: {
      const auto patch = config.patch;
      return [patch](const torch::Tensor& x) { return data::PatchTrigger(x, patch); };
    }
    case AttackMode::kIdentity:
    case AttackMode::kNone:
      return [](const torch::Tensor& x) { return x.clone(); };
  }
  return {};
}

CleanEval EvaluateClean(const Workspace& ws, const EncoderState& encoder) {
  const auto& cfg = ws.config;
  Rng rng(DeriveSeed(cfg.seed, {Tag(Stream::kProbe)}));
  CleanEval out;
  out.probe = eval::TrainProbe(Instantiate(encoder), ws.data.downstream_labeled.images,
                               ws.data.downstream_labeled.labels,
                               static_cast<int>(ws.data.downstream_classes.size()), cfg.probe, rng);
  out.log = eval::PredictAll(out.probe, ws.data.downstream_test.images, ws.data.downstream_test.labels, false);
  out.accuracy = eval::AccuracyPercent(out.log);
  return out;
}

namespace {

torch::Tensor NonTargetTest(const Workspace& ws, int64_t limit, std::vector<int64_t>* ids = nullptr) {
  const auto& test = ws.data.downstream_test;
  std::vector<int64_t> idx;
  for (int64_t i = 0; i < test.size() && static_cast<int64_t>(idx.size()) < limit; ++i) {
    if (test.labels[i].item<int64_t>() != ws.config.attack.target_class) idx.push_back(i);
  }
  if (ids) *ids = idx;
  return test.Select(idx).images;
}

}  // namespace

AttackEval EvaluateAttack(const Workspace& ws, const CleanEval& attacked, const backdoor::TriggerFn& trigger,
                          const EncoderState& reference, bool with_probes) {
  const auto& cfg = ws.config;
  const auto& test = ws.data.downstream_test;
  AttackEval e;
  e.clean_log = attacked.log;
  e.ba = attacked.accuracy;
  const auto asr = eval::ComputeAsr(attacked.probe, test.images, test.labels, trigger, cfg.attack.target_class);
  e.asr = asr.percent;
  e.triggered_log = asr.log;

  const auto clean = NonTargetTest(ws, cfg.metric_samples);
  const auto poisoned = trigger(clean);
  e.ssim = eval::Ssim(clean, poisoned);
  e.psnr = eval::PsnrPerImage(clean, poisoned).mean().item<double>();
  auto ref = Instantiate(reference);
  e.perceptual = eval::PerceptualProxy(ref, clean, poisoned);
  const int64_t k = std::min<int64_t>(cfg.triplets, clean.size(0));
  e.sample_clean = clean.narrow(0, 0, k);
  e.sample_poisoned = poisoned.narrow(0, 0, k);
  if (!with_probes) return e;

  // Poisoned vs augmented views of the same images.
  {
    Rng rng(DeriveSeed(cfg.seed, {Tag(Stream::kEval), 1}));
    const auto base = test.images.narrow(0, 0, std::min<int64_t>(cfg.entanglement_samples, test.size()));
    const auto augmented = ssl::AugmentBatch(base, cfg.ssl.augment, rng).first;
    e.entanglement = eval::EntanglementProbe(trigger(base), augmented, cfg.entanglement, rng).accuracy;
  }

  // Backdoored-encoder embeddings of clean test images and poisoned
  // non-target images.
  {
    auto enc = attacked.probe.encoder;
    const auto clean_all = test.images.narrow(0, 0, std::min<int64_t>(cfg.metric_samples, test.size()));
    const auto fc = ExtractFeatures(enc, clean_all);
    const auto fp = ExtractFeatures(enc, poisoned);
    const auto pca = eval::PcaEmbed(torch::cat({fc, fp}), 2);
    const auto cc = pca.coords.narrow(0, 0, fc.size(0));
    const auto pc = pca.coords.narrow(0, fc.size(0), fp.size(0));
    e.pca_separation = eval::CentroidSeparation(pc, cc);
    e.pca_explained = pca.explained_ratio;
    std::ostringstream csv;
    csv.precision(9);
    csv << "kind,label,pc1,pc2\n";
    for (int64_t i = 0; i < cc.size(0); ++i) {
      csv << "clean," << test.labels[i].item<int64_t>() << ',' << cc[i][0].item<double>() << ','
          << cc[i][1].item<double>() << '\n';
    }
    for (int64_t i = 0; i < pc.size(0); ++i) {
      csv << "poisoned,-1," << pc[i][0].item<double>() << ',' << pc[i][1].item<double>() << '\n';
    }
    e.pca_csv = csv.str();
  }
  return e;
}

DefenseEval EvaluateDefenses(const Workspace& ws, const CleanEval& attacked, const backdoor::TriggerFn& trigger) {
  const auto& cfg = ws.config;
  const auto& test = ws.data.downstream_test;
  DefenseEval d;
  const auto clean = test.images.narrow(0, 0, std::min<int64_t>(cfg.strip_samples, test.size()));
  const auto poisoned = trigger(NonTargetTest(ws, cfg.strip_samples));
  Rng rng(DeriveSeed(cfg.seed, {Tag(Stream::kDefense)}));
  const auto& probe = attacked.probe;
  d.strip = defense::StripDetect([&](const torch::Tensor& x) { return probe.Logits(x); }, clean, poisoned,
                                 ws.data.downstream_labeled.images, cfg.strip, rng);

  const auto mixed = torch::cat({test.images, poisoned});
  d.clustering = defense::ActivationClustering(probe.Hidden(mixed), probe.Predict(mixed), cfg.ac, rng);
  for (const auto& c : d.clustering) {
    if (c.label == cfg.attack.target_class) d.target_silhouette = c.silhouette;
  }
  return d;
}

nlohmann::json ToJson(const AttackEval& e) {
  return {{"BA", e.ba},
          {"ASR", e.asr},
          {"SSIM", e.ssim},
          {"PSNR", e.psnr},
          {"perceptual_proxy", e.perceptual},
          {"entanglement_accuracy", e.entanglement},
          {"pca_centroid_separation", e.pca_separation},
          {"pca_explained_ratio", e.pca_explained}};
}

nlohmann::json ToJson(const DefenseEval& d) {
  nlohmann::json ac = nlohmann::json::array();
  for (const auto& c : d.clustering) ac.push_back(defense::ToJson(c));
  return {{"strip", defense::ToJson(d.strip)}, {"activation_clustering", ac},
          {"target_silhouette", d.target_silhouette}};
}

nlohmann::json ToJson(const PhaseLog& log) {
  nlohmann::json rounds = nlohmann::json::array(), monitor = nlohmann::json::array();
  for (const auto& r : log.rounds) rounds.push_back(r.ToJson());
  for (const auto& r : log.monitor) monitor.push_back(conv::ToJson(r));
  return {{"rounds", rounds}, {"monitor", monitor}};
}

}  // namespace fssl
