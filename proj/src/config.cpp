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

#include "fssl/config.hpp"

#include <sstream>

#include <yaml-cpp/yaml.h>

#include "fssl/errors.hpp"
#include "fssl/io.hpp"

namespace fssl {

AttackMode ParseAttackMode(const std::string& name) {
  if (name == "none") return AttackMode::kNone;
  if (name == "injector") return AttackMode::kInjector;
  if (name == "patch") return AttackMode::kPatch;
  if (name == "identity") return AttackMode::kIdentity;
  throw ConfigError("unknown attack mode '" + name + "' (expected none, injector, patch or identity)");
}

std::string ToString(AttackMode mode) {
  switch (mode) {
    case AttackMode::kNone: return "none";
    case AttackMode::kInjector: return "injector";
    case AttackMode::kPatch: return "patch";
    case AttackMode::kIdentity: return "identity";
  }
  return "?";
}

// Enum fields go through a string proxy so one visitor serves both
// directions.
template <typename F>
void VisitFields(ExperimentConfig& c, F&& f) {
  f("seed", c.seed);
  f("out_dir", c.out_dir);

  auto& d = c.dataset;
  f("dataset.source", d.source);
  f("dataset.path", d.path);
  f("dataset.image_size", d.image_size);
  f("dataset.n_classes", d.n_classes);
  f("dataset.train_per_class", d.train_per_class);
  f("dataset.test_per_class", d.test_per_class);
  f("dataset.pretrain_classes", d.pretrain_classes);
  f("dataset.downstream_classes", d.downstream_classes);
  f("dataset.max_pretrain", d.max_pretrain);
  f("dataset.max_downstream_train", d.max_downstream_train);
  f("dataset.max_test", d.max_test);
  f("dataset.label_fraction", d.label_fraction);

  std::string arch = ToString(c.encoder.arch);
  f("encoder.arch", arch);
  c.encoder.arch = ParseEncoderArch(arch);
  f("encoder.width", c.encoder.width);
  f("encoder.projection_dim", c.encoder.projection_dim);

  f("ssl.batch_size", c.ssl.batch_size);
  f("ssl.learning_rate", c.ssl.learning_rate);
  f("ssl.momentum", c.ssl.sgd_momentum);
  f("ssl.temperature", c.ssl.temperature);
  auto& a = c.ssl.augment;
  f("ssl.augment.crop_scale_min", a.crop_scale_min);
  f("ssl.augment.crop_scale_max", a.crop_scale_max);
  f("ssl.augment.flip_prob", a.flip_prob);
  f("ssl.augment.jitter_prob", a.jitter_prob);
  f("ssl.augment.brightness", a.brightness);
  f("ssl.augment.contrast", a.contrast);
  f("ssl.augment.saturation", a.saturation);
  f("ssl.augment.hue", a.hue);
  f("ssl.augment.grayscale_prob", a.grayscale_prob);

  auto& fd = c.federation;
  f("federation.n_clients", fd.n_clients);
  f("federation.n_malicious", fd.n_malicious);
  f("federation.rounds", fd.rounds);
  f("federation.local_epochs", fd.local_epochs);
  f("federation.client_fraction", fd.client_fraction);
  f("federation.dirichlet_alpha", fd.dirichlet_alpha);
  f("federation.attack_interval", fd.attack_interval);
  f("federation.aggregator", c.aggregator);
  f("federation.krum_f", c.krum_f);
  f("federation.trim_k", c.trim_k);

  f("pretrain.rounds", c.pretrain_rounds);

  std::string mode = ToString(c.attack_mode);
  f("attack.mode", mode);
  c.attack_mode = ParseAttackMode(mode);
  f("attack.run_baseline", c.run_baseline);
  f("attack.run_identity_control", c.run_identity_control);
  f("attack.run_patch_baseline", c.run_patch_baseline);
  f("attack.target_class", c.attack.target_class);
  f("attack.lambda_align", c.attack.lambda_align);
  f("attack.lambda_utility", c.attack.lambda_utility);
  f("attack.poison_ratio", c.attack.poison_ratio);
  f("attack.target_exemplars", c.attack.target_exemplars);
  f("attack.batch_size", c.attack.batch_size);
  f("attack.learning_rate", c.attack.learning_rate);
  f("attack.momentum", c.attack.sgd_momentum);
  f("attack.local_epochs", c.attack.local_epochs);
  f("attack.center_features", c.attack.center_features);

  f("injector.width", c.injector_net.width);
  f("injector.output_init_scale", c.injector_net.output_init_scale);
  f("injector.max_perturbation", c.injector_net.max_perturbation);
  f("injector.residual_pool", c.injector_net.residual_pool);
  f("injector.alpha", c.injector.alpha);
  f("injector.beta", c.injector.beta);
  f("injector.stealth_weight", c.injector.stealth_weight);
  f("injector.epochs", c.injector.epochs);
  f("injector.batch_size", c.injector.batch_size);
  f("injector.learning_rate", c.injector.learning_rate);
  f("injector.swd_slices", c.injector.swd_slices);
  f("injector.identity_pretrain_steps", c.injector.identity_pretrain_steps);
  f("injector.identity_pretrain_lr", c.injector.identity_pretrain_lr);
  f("injector.train_samples", c.injector_train_samples);
  f("injector.epoch_interval", c.injector_epoch_interval);

  f("patch.size", c.patch.size);
  f("patch.corner", c.patch.corner);
  f("patch.color", c.patch.color);

  f("evaluation.probe.hidden", c.probe.hidden);
  f("evaluation.probe.epochs", c.probe.epochs);
  f("evaluation.probe.batch_size", c.probe.batch_size);
  f("evaluation.probe.learning_rate", c.probe.learning_rate);
  f("evaluation.metric_samples", c.metric_samples);
  f("evaluation.entanglement.samples", c.entanglement_samples);
  f("evaluation.entanglement.train_fraction", c.entanglement.train_fraction);
  f("evaluation.entanglement.epochs", c.entanglement.epochs);
  f("evaluation.entanglement.batch_size", c.entanglement.batch_size);
  f("evaluation.entanglement.learning_rate", c.entanglement.learning_rate);
  f("evaluation.triplets", c.triplets);

  f("defenses.strip.overlays", c.strip.overlays);
  f("defenses.strip.blend", c.strip.blend);
  f("defenses.strip.samples", c.strip_samples);
  f("defenses.activation_clustering.pca_dims", c.ac.pca_dims);
  f("defenses.activation_clustering.max_iterations", c.ac.max_iterations);
  f("defenses.robust_aggregators", c.robust_aggregators);

  f("monitor.enabled", c.monitor);
  f("monitor.probe_batch", c.monitor_batch);
  f("monitor.c", c.monitor_c);
}

void ExperimentConfig::Validate() const {
  dataset.Validate();
  ssl.Validate();
  federation.Validate();
  attack.Validate();
  injector.Validate();
  patch.Validate(dataset.image_size);
  strip.Validate();
  Require(pretrain_rounds >= 0, "pretrain.rounds must be >= 0");
  Require(aggregator == "fedavg" || aggregator == "krum" || aggregator == "trimmed_mean",
          "federation.aggregator must be fedavg, krum or trimmed_mean");
  for (const auto& a : robust_aggregators) {
    Require(a == "krum" || a == "trimmed_mean", "defenses.robust_aggregators entries must be krum or trimmed_mean");
  }
  Require(injector_train_samples >= 1, "injector.train_samples must be positive");
  Require(injector_epoch_interval >= 1, "injector.epoch_interval must be positive");
  Require(metric_samples >= 2 && strip_samples >= 1 && entanglement_samples >= 50,
          "evaluation sample counts too small");
  Require(monitor_batch >= 2, "monitor.probe_batch must be >= 2");
  const auto downstream = dataset.downstream_classes.empty() ? dataset.n_classes
                                                             : static_cast<int>(dataset.downstream_classes.size());
  Require(attack.target_class >= 0 && attack.target_class < downstream,
          "attack.target_class must index a downstream class");
}

namespace {

YAML::Node Lookup(const YAML::Node& root, const std::string& key) {
  YAML::Node node = YAML::Clone(root);
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node.IsMap() || !node[part]) throw ConfigError("missing required config key '" + key + "'");
    node = node[part];
  }
  return node;
}

struct Reader {
  const YAML::Node& root;

  template <typename T>
  void operator()(const std::string& key, T& field) {
    const YAML::Node node = Lookup(root, key);
    try {
      if constexpr (std::is_same_v<T, std::optional<double>>) {
        field = node.IsNull() ? std::nullopt : std::optional<double>(node.as<double>());
      } else {
        field = node.as<T>();
      }
    } catch (const YAML::Exception& e) {
      throw ConfigError("config key '" + key + "' has the wrong type: " + e.what());
    }
  }
};

void Insert(YAML::Node& root, const std::string& key, const YAML::Node& value) {
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  std::vector<YAML::Node> chain{root};
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) chain.push_back(chain.back()[parts[i]]);
  chain.back()[parts.back()] = value;
}

struct Writer {
  YAML::Node& root;

  template <typename T>
  void operator()(const std::string& key, T& field) {
    YAML::Node value;
    if constexpr (std::is_same_v<T, std::optional<double>>) {
      value = field ? YAML::Node(*field) : YAML::Node(YAML::NodeType::Null);
    } else if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<std::string>> ||
                         std::is_same_v<T, std::array<double, 3>>) {
      value = YAML::Node(YAML::NodeType::Sequence);
      for (const auto& v : field) value.push_back(v);
      value.SetStyle(YAML::EmitterStyle::Flow);
    } else {
      value = field;
    }
    Insert(root, key, value);
  }
};

}  // namespace

ExperimentConfig ParseConfig(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  ExperimentConfig c;
  VisitFields(c, Reader{root});
  SetSeed(c, c.seed);
  c.ssl.local_epochs = c.federation.local_epochs;
  c.Validate();
  return c;
}

void SetSeed(ExperimentConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.dataset.seed = seed;
  config.federation.seed = seed;
}

ExperimentConfig LoadConfig(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
  return ParseConfig(io::ReadText(path));
}

std::string DumpConfig(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  YAML::Node root(YAML::NodeType::Map);
  VisitFields(copy, Writer{root});
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << root;
  return std::string(out.c_str()) + "\n";
}

}  // namespace fssl
