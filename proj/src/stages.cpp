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

#include "fssl/stages.hpp"

#include <chrono>
#include <ctime>
#include <iomanip>
#include <sstream>

#include "fssl/errors.hpp"
#include "fssl/io.hpp"

namespace fssl::stages {
namespace {

fs::path AttackDir(const fs::path& run, AttackMode mode) { return run / "attack" / ToString(mode); }
fs::path EvalDir(const fs::path& run, AttackMode mode) { return run / "evaluate" / ToString(mode); }

void RequireFile(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw IoError("missing " + path.string() + " (run the '" + producer + "' stage first)");
  }
}

template <typename Fn>
auto Guard(Stage stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(ToString(stage), e.what());
  }
}

void WriteRounds(const fs::path& path, const std::vector<fed::RoundMetrics>& rounds) {
  io::JsonlWriter out(path, false);
  for (const auto& r : rounds) out.Write(r.ToJson());
}

RoundCallback Progress(std::ostream& log, const std::string& label) {
  return [&log, label](const fed::RoundMetrics& m) {
    log << "[" << label << "] round " << m.round;
    if (auto it = m.scalars.find("probe_loss"); it != m.scalars.end()) log << " loss " << it->second;
    if (auto it = m.scalars.find("epsilon"); it != m.scalars.end()) log << " eps " << it->second;
    log << std::endl;
  };
}

EncoderState LoadPretrained(const Workspace& ws, const fs::path& run) {
  const auto path = run / "pretrain" / "global.ckpt";
  RequireFile(path, "pretrain");
  return LoadEncoder(path, ws.config.encoder);
}

struct LoadedAttack {
  EncoderState global;
  std::optional<injector::InjectorState> injector;
};

LoadedAttack LoadAttack(const Workspace& ws, const fs::path& run, AttackMode mode) {
  const auto dir = AttackDir(run, mode);
  RequireFile(dir / "global.ckpt", "attack");
  LoadedAttack out;
  out.global = LoadEncoder(dir / "global.ckpt", ws.config.encoder);
  out.global.role = mode == AttackMode::kNone ? EncoderRole::kClean : EncoderRole::kBackdoored;
  if (mode == AttackMode::kInjector) {
    RequireFile(dir / "injector.ckpt", "attack");
    out.injector = LoadInjector(dir / "injector.ckpt", ws.config.injector_net);
  }
  return out;
}

std::string Fixed(double v, int digits = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

std::string ToString(Stage stage) {
  switch (stage) {
    case Stage::kPretrain: return "pretrain";
    case Stage::kAttack: return "attack";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kDefend: return "defend";
    case Stage::kReport: return "report";
  }
  return "?";
}

std::vector<AttackMode> AttackModes(const ExperimentConfig& config) {
  std::vector<AttackMode> modes{config.attack_mode};
  auto add = [&](bool enabled, AttackMode m) {
    if (enabled && std::find(modes.begin(), modes.end(), m) == modes.end()) modes.push_back(m);
  };
  add(config.run_patch_baseline, AttackMode::kPatch);
  add(config.run_identity_control, AttackMode::kIdentity);
  add(config.run_baseline, AttackMode::kNone);
  return modes;
}

fs::path CreateRunDir(const fs::path& out_dir, const ExperimentConfig& config) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream name;
  name << std::put_time(&tm, "%Y%m%dT%H%M%SZ") << "-seed" << config.seed;
  fs::path dir = out_dir / name.str();
  for (int k = 1; fs::exists(dir); ++k) dir = out_dir / (name.str() + "-" + std::to_string(k));
  fs::create_directories(dir);
  io::WriteText(dir / "config.yaml", DumpConfig(config));
  return dir;
}

ExperimentConfig LoadRunConfig(const fs::path& run_dir) {
  return LoadConfig(run_dir / "config.yaml");
}

std::vector<std::string> Plan(Stage stage, const ExperimentConfig& config) {
  std::vector<std::string> lines;
  const auto modes = AttackModes(config);
  switch (stage) {
    case Stage::kPretrain:
      lines.push_back("write pretrain/global.ckpt after " + std::to_string(config.pretrain_rounds) +
                      " clean rounds with " + std::to_string(config.federation.n_clients) + " clients");
      lines.push_back("write pretrain/metrics.jsonl, pretrain/monitor.json");
      break;
    case Stage::kAttack:
      for (auto m : modes) {
        lines.push_back("write attack/" + ToString(m) + "/ (" + std::to_string(config.federation.rounds) +
                        " rounds, aggregator " + config.aggregator + ")");
      }
      break;
    case Stage::kEvaluate:
      for (auto m : modes) lines.push_back("write evaluate/" + ToString(m) + "/");
      lines.push_back("write evaluate/summary.json");
      break;
    case Stage::kDefend:
      for (auto m : modes) {
        if (m == AttackMode::kInjector || m == AttackMode::kPatch) lines.push_back("write defend/" + ToString(m) + ".json");
      }
      for (const auto& a : config.robust_aggregators) {
        lines.push_back("rerun " + ToString(config.attack_mode) + " attack under " + a + ", write defend/robust_" + a + ".json");
      }
      break;
    case Stage::kReport:
      lines.push_back("write report/convergence.json, report/residuals.csv, report/report.md");
      break;
  }
  return lines;
}

void SaveEncoder(const fs::path& path, const EncoderState& state, nlohmann::json metadata) {
  if (metadata.is_null()) metadata = nlohmann::json::object();
  metadata["kind"] = "encoder";
  metadata["arch"] = ToString(state.options.arch);
  metadata["width"] = state.options.width;
  metadata["role"] = state.role == EncoderRole::kBackdoored ? "backdoored" : "clean";
  io::SaveCheckpoint(path, {state.params, metadata});
}

EncoderState LoadEncoder(const fs::path& path, const EncoderOptions& options) {
  auto ckpt = io::LoadCheckpoint(path);
  EncoderState state = InitEncoderState(options, 0);
  const std::string why = DescribeShapeMismatch(state.params, ckpt.params);
  if (!why.empty()) throw IoError("checkpoint " + path.string() + " does not fit the configured encoder: " + why);
  state.params = std::move(ckpt.params);
  if (ckpt.metadata.value("role", "clean") == "backdoored") state.role = EncoderRole::kBackdoored;
  return state;
}

void SaveInjector(const fs::path& path, const injector::InjectorState& state) {
  io::SaveCheckpoint(path, {state.params, {{"kind", "injector"}, {"width", state.options.width}}});
}

injector::InjectorState LoadInjector(const fs::path& path, const injector::InjectorOptions& options) {
  auto ckpt = io::LoadCheckpoint(path);
  auto state = injector::Snapshot(injector::MakeInjector(options, 0));
  const std::string why = DescribeShapeMismatch(state.params, ckpt.params);
  if (!why.empty()) throw IoError("checkpoint " + path.string() + " does not fit the configured injector: " + why);
  state.params = std::move(ckpt.params);
  return state;
}

nlohmann::json RunPretrainStage(const Workspace& ws, const fs::path& run_dir, std::ostream& log) {
  return Guard(Stage::kPretrain, [&] {
    const auto dir = run_dir / "pretrain";
    fs::create_directories(dir);
    auto result = RunPretrain(ws, Progress(log, "pretrain"));
    SaveEncoder(dir / "global.ckpt", result.global, {{"round", ws.config.pretrain_rounds}});
    WriteRounds(dir / "metrics.jsonl", result.log.rounds);
    io::WriteJson(dir / "monitor.json", ToJson(result.log));
    const auto clean = EvaluateClean(ws, result.global);
    log << "[pretrain] probe accuracy " << clean.accuracy << std::endl;
    nlohmann::json summary{{"rounds", ws.config.pretrain_rounds}, {"probe_accuracy", clean.accuracy},
                           {"data_checksum", ws.data.checksum}};
    io::WriteJson(dir / "summary.json", summary);
    return summary;
  });
}

nlohmann::json RunAttackStage(const Workspace& ws, const fs::path& run_dir, std::ostream& log) {
  return Guard(Stage::kAttack, [&] {
    const auto start = LoadPretrained(ws, run_dir);
    nlohmann::json summary = nlohmann::json::object();
    for (auto mode : AttackModes(ws.config)) {
      const auto dir = AttackDir(run_dir, mode);
      fs::create_directories(dir);
      auto run = RunAttackPhase(ws, start, mode, ws.config.aggregator, Progress(log, "attack/" + ToString(mode)));
      SaveEncoder(dir / "global.ckpt", run.global,
                  {{"mode", ToString(mode)}, {"aggregator", run.aggregator},
                   {"round", ws.config.pretrain_rounds + ws.config.federation.rounds}});
      if (run.injector) SaveInjector(dir / "injector.ckpt", *run.injector);
      WriteRounds(dir / "metrics.jsonl", run.log.rounds);
      auto monitor = ToJson(run.log);
      monitor.erase("rounds");
      if (run.theorem) monitor["theorem"] = conv::ToJson(*run.theorem);
      io::WriteJson(dir / "monitor.json", monitor);
      summary[ToString(mode)] = {{"rounds", run.log.rounds.size()}, {"aggregator", run.aggregator}};
    }
    return summary;
  });
}

nlohmann::json RunEvaluateStage(const Workspace& ws, const fs::path& run_dir, std::ostream& log) {
  return Guard(Stage::kEvaluate, [&] {
    const auto& cfg = ws.config;
    const auto reference = LoadPretrained(ws, run_dir);
    nlohmann::json modes = nlohmann::json::object();
    std::optional<double> ca;
    for (auto mode : AttackModes(cfg)) {
      const auto loaded = LoadAttack(ws, run_dir, mode);
      const auto dir = EvalDir(run_dir, mode);
      fs::create_directories(dir);
      const auto clean = EvaluateClean(ws, loaded.global);
      const auto trigger = MakeTrigger(mode, cfg, loaded.injector);
      const bool attacked = mode != AttackMode::kNone;
      const auto e = EvaluateAttack(ws, clean, trigger, reference, attacked);
      auto metrics = ToJson(e);
      if (!attacked) {
        ca = clean.accuracy;
        metrics = {{"CA", clean.accuracy}, {"ASR_identity_trigger", e.asr}};
      }
      io::WriteJson(dir / "metrics.json", metrics);
      {
        io::JsonlWriter out(dir / "predictions_clean.jsonl", false);
        for (const auto& p : e.clean_log) out.Write(eval::ToJson(p));
      }
      {
        io::JsonlWriter out(dir / "predictions_triggered.jsonl", false);
        for (const auto& p : e.triggered_log) out.Write(eval::ToJson(p));
      }
      if (attacked) {
        io::WriteText(dir / "pca.csv", e.pca_csv);
        for (int64_t i = 0; i < e.sample_clean.size(0); ++i) {
          io::WritePng(dir / ("triplet_" + std::to_string(i) + ".png"),
                       io::Triplet(e.sample_clean[i], e.sample_poisoned[i]));
        }
      }
      log << "[evaluate] " << ToString(mode) << " " << metrics.dump() << std::endl;
      modes[ToString(mode)] = metrics;
    }
    if (!ca) ca = EvaluateClean(ws, reference).accuracy;
    nlohmann::json summary{{"CA", *ca}, {"modes", modes}, {"primary", ToString(cfg.attack_mode)}};
    io::WriteJson(run_dir / "evaluate" / "summary.json", summary);
    return summary;
  });
}

nlohmann::json RunDefendStage(const Workspace& ws, const fs::path& run_dir, std::ostream& log) {
  return Guard(Stage::kDefend, [&] {
    const auto& cfg = ws.config;
    const auto dir = run_dir / "defend";
    fs::create_directories(dir);
    nlohmann::json summary = nlohmann::json::object();
    for (auto mode : AttackModes(cfg)) {
      if (mode != AttackMode::kInjector && mode != AttackMode::kPatch) continue;
      const auto loaded = LoadAttack(ws, run_dir, mode);
      const auto clean = EvaluateClean(ws, loaded.global);
      const auto d = EvaluateDefenses(ws, clean, MakeTrigger(mode, cfg, loaded.injector));
      const auto j = ToJson(d);
      io::WriteJson(dir / (ToString(mode) + ".json"), j);
      log << "[defend] " << ToString(mode) << " STRIP AUC " << d.strip.auc << ", target silhouette "
          << d.target_silhouette << std::endl;
      summary[ToString(mode)] = {{"strip_auc", d.strip.auc}, {"target_silhouette", d.target_silhouette}};
    }
    if (cfg.attack_mode != AttackMode::kNone && !cfg.robust_aggregators.empty()) {
      const auto start = LoadPretrained(ws, run_dir);
      for (const auto& agg : cfg.robust_aggregators) {
        auto run = RunAttackPhase(ws, start, cfg.attack_mode, agg, Progress(log, "defend/" + agg));
        const auto clean = EvaluateClean(ws, run.global);
        const auto e = EvaluateAttack(ws, clean, MakeTrigger(cfg.attack_mode, cfg, run.injector), start, false);
        nlohmann::json j{{"aggregator", agg}, {"mode", ToString(cfg.attack_mode)}, {"BA", e.ba}, {"ASR", e.asr}};
        io::WriteJson(dir / ("robust_" + agg + ".json"), j);
        WriteRounds(dir / ("robust_" + agg + "_metrics.jsonl"), run.log.rounds);
        log << "[defend] " << agg << " " << j.dump() << std::endl;
        summary["robust_" + agg] = j;
      }
    }
    return summary;
  });
}

nlohmann::json RunReportStage(const ExperimentConfig& config, const fs::path& run_dir, std::ostream& log) {
  return Guard(Stage::kReport, [&] {
    const auto dir = run_dir / "report";
    fs::create_directories(dir);
    std::ostringstream md;
    md << "# Run report\n\n";
    md << "Seed " << config.seed << ", " << config.federation.n_clients << " clients ("
       << config.federation.n_malicious << " malicious), " << config.pretrain_rounds << " clean rounds then "
       << config.federation.rounds << " attack-phase rounds, aggregator " << config.aggregator << ".\n\n";

    nlohmann::json summary = nlohmann::json::object();
    const auto eval_path = run_dir / "evaluate" / "summary.json";
    if (fs::exists(eval_path)) {
      const auto ev = io::ReadJson(eval_path);
      summary["evaluate"] = ev;
      md << "## Attack metrics\n\nCA (no attack): " << Fixed(ev.at("CA").get<double>()) << "%\n\n";
      md << "| mode | BA | ASR | SSIM | PSNR | entanglement | PCA separation |\n";
      md << "|---|---|---|---|---|---|---|\n";
      for (const auto& [mode, m] : ev.at("modes").items()) {
        if (!m.contains("ASR")) continue;
        md << "| " << mode << " | " << Fixed(m.at("BA").get<double>()) << " | " << Fixed(m.at("ASR").get<double>())
           << " | " << Fixed(m.at("SSIM").get<double>(), 4) << " | " << Fixed(m.at("PSNR").get<double>()) << " | "
           << Fixed(m.at("entanglement_accuracy").get<double>(), 3) << " | "
           << Fixed(m.at("pca_centroid_separation").get<double>(), 3) << " |\n";
      }
      md << "\n";
    } else {
      md << "No evaluation results (run the 'evaluate' stage).\n\n";
    }

    const auto defend_dir = run_dir / "defend";
    if (fs::exists(defend_dir)) {
      md << "## Defenses\n\n| mode | STRIP AUC | target-class silhouette |\n|---|---|---|\n";
      for (auto mode : {AttackMode::kInjector, AttackMode::kPatch}) {
        const auto p = defend_dir / (ToString(mode) + ".json");
        if (!fs::exists(p)) continue;
        const auto j = io::ReadJson(p);
        summary["defend"][ToString(mode)] = j;
        md << "| " << ToString(mode) << " | " << Fixed(j.at("strip").at("auc").get<double>(), 3) << " | "
           << Fixed(j.at("target_silhouette").get<double>(), 3) << " |\n";
      }
      md << "\n";
      for (const auto& agg : config.robust_aggregators) {
        const auto p = defend_dir / ("robust_" + agg + ".json");
        if (!fs::exists(p)) continue;
        const auto j = io::ReadJson(p);
        summary["defend"]["robust_" + agg] = j;
        md << "Under " << agg << ": BA " << Fixed(j.at("BA").get<double>()) << "%, ASR "
           << Fixed(j.at("ASR").get<double>()) << "%.\n\n";
      }
    }

    const auto monitor_path = AttackDir(run_dir, config.attack_mode) / "monitor.json";
    if (fs::exists(monitor_path)) {
      const auto mon = io::ReadJson(monitor_path);
      if (mon.contains("theorem")) {
        std::vector<conv::RoundRecord> records;
        for (const auto& r : mon.at("monitor")) records.push_back(conv::RecordFromJson(r));
        const auto params = conv::TheoremParamsFromJson(mon.at("theorem"));
        const auto residuals = conv::DescentCheck(records, params);
        const auto bound = conv::BoundReport(records, params);
        auto conv_json = conv::ToJson(bound);
        conv_json["theorem"] = conv::ToJson(params);
        io::WriteJson(dir / "convergence.json", conv_json);
        io::WriteText(dir / "residuals.csv", conv::ResidualCsv(residuals, records));
        int negative = 0;
        for (const auto& r : residuals) negative += r.residual < 0 ? 1 : 0;
        summary["convergence"] = conv_json;
        md << "## Convergence monitor\n\n";
        md << "Estimated L " << params.smoothness << ", G " << params.grad_bound << ", lr " << params.lr << ", rho "
           << params.rho << ".\n\n";
        md << "min ||grad||^2 = " << bound.min_grad_sq << ", bound = " << bound.bound << " (clean term "
           << bound.clean_term << ", attack term " << bound.attack_term << "); with the L*lr*G^2 term "
           << bound.bound_with_smoothness << ". Bound dominates: " << (bound.dominates ? "yes" : "no") << ".\n\n";
        md << negative << " of " << residuals.size() << " descent residuals are negative.\n";
        for (const auto& c : bound.caveats) md << "\n- " << c;
        md << "\n";
      }
    }
    io::WriteText(dir / "report.md", md.str());
    io::WriteJson(dir / "summary.json", summary);
    log << "[report] wrote " << (dir / "report.md").string() << std::endl;
    return summary;
  });
}

}  // namespace fssl::stages
