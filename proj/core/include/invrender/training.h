// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "invrender/bridge.h"
#include "invrender/checkpoint.h"
#include "invrender/losses.h"
#include "invrender/metrics.h"
#include "invrender/models.h"
#include "invrender/scene.h"

namespace invrender {

enum class Stage { kEnvA, kEnvB, kIrnSyn, kRarSyn, kIrnRealIiw, kIrnRealNyu };

std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);

struct OptimizerConfig {
  real lr = 1e-4;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;
};

struct TrainConfig {
  Stage stage = Stage::kIrnSyn;
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  int batch_size = 4;
  int steps = 3000;
  uint64_t seed = 1;
  int checkpoint_every = 500;
  int checkpoint_keep = 2;
  // Early stop once the smoothed loss falls below this fraction of the
  // initial loss; 0 runs the full budget.
  real stop_at_fraction = 0.0;
  int smooth_window = 10;
  bool use_rar = true;  // ablation switch for the real-data stages
  EnvWeighting weighting = EnvWeighting::kLiteralSum;
  // Data bindings used by the CLI runner.
  std::string synthetic_manifest;
  std::string real_manifest;
  std::string env_dir;
  std::string split = "train";

  std::string to_json() const;
  static TrainConfig from_json_text(const std::string& text);
  static TrainConfig from_file(const std::filesystem::path& path);
};

// Per-step scalar terms, kept in memory and optionally streamed as
// JSON-lines ({"step": n, "stage": s, <term>: value, ...}).
struct StepLog {
  int step = 0;
  std::vector<std::pair<std::string, real>> terms;
};

class TrainLogger {
 public:
  TrainLogger() = default;
  TrainLogger(std::filesystem::path path, std::string stage);
  void log(int step, std::vector<std::pair<std::string, real>> terms);
  const std::vector<StepLog>& entries() const { return entries_; }

 private:
  std::filesystem::path path_;
  std::string stage_;
  std::vector<StepLog> entries_;
};

struct StageResult {
  std::vector<real> losses;  // total objective per step
  real initial_loss = 0.0;
  real best_smoothed = 0.0;
  real final_loss = 0.0;
  int steps_run = 0;
  std::filesystem::path checkpoint;
  std::vector<StepLog> log;

  // Fractional drop of the best smoothed loss against the initial loss.
  real reduction() const {
    return initial_loss > 0.0 ? 1.0 - best_smoothed / initial_loss : 0.0;
  }
};

using EnvCache = std::map<std::string, EnvironmentMap>;

// Stage operations. All are deterministic in (models, data, config): a
// rerun with identical inputs reproduces the loss curve bitwise.

// Trains h_e to regress the environment from direct-rendered images of
// scenes with ground-truth albedo/normals under envs sampled from `pool`.
StageResult train_env_stage_a(ModelBundle& bundle,
                              const std::vector<const SceneSample*>& scenes,
                              const std::vector<EnvironmentMap>& pool,
                              const TrainConfig& cfg,
                              const std::filesystem::path& out_dir);

// Fine-tunes h_e by minimizing || I - f_d(A*, N*, h_e(I,A*,N*)) ||_1 and
// writes the per-sample approximated-GT lighting cache.
StageResult train_env_stage_b(ModelBundle& bundle,
                              const std::vector<const SceneSample*>& scenes,
                              const TrainConfig& cfg,
                              const std::filesystem::path& out_dir,
                              EnvCache* lhat_out);

// Evaluation-mode h_e outputs for every scene.
EnvCache compute_env_targets(ModelBundle& bundle,
                             const std::vector<const SceneSample*>& scenes);

StageResult train_irn_synthetic(ModelBundle& bundle,
                                const std::vector<const SceneSample*>& scenes,
                                const EnvCache& lhat, const TrainConfig& cfg,
                                const std::filesystem::path& out_dir);

StageResult train_rar_synthetic(ModelBundle& bundle,
                                const std::vector<const SceneSample*>& scenes,
                                const EnvCache& lhat, const TrainConfig& cfg,
                                const std::filesystem::path& out_dir);

// Pseudo-supervision targets from the frozen entry-state IRN.
struct PseudoTargets {
  Tensor albedo, normal, env;  // [1,...] per sample
};
using PseudoCache = std::map<std::string, PseudoTargets>;

PseudoCache compute_pseudo_targets(ModelBundle& bundle,
                                   const std::vector<const SceneSample*>& scenes);

// Fine-tunes IRN on real data with pseudo-supervision, the reconstruction
// loss through the frozen RAR, and weak supervision (judgment hinge for
// IIW mode, normal L1 for NYU mode). Verifies that RAR parameters and the
// pseudo cache are bit-identical afterwards.
StageResult finetune_irn_real(ModelBundle& bundle,
                              const std::vector<const SceneSample*>& scenes,
                              DatasetMode mode, const TrainConfig& cfg,
                              const std::filesystem::path& out_dir);

// Runs IRN over the samples and applies the requested metrics. Known
// metrics: whdr, median_angular_error, albedo_rmse, albedo_mad, env_mad,
// image_recon_mad, probe_rmse, probe_mad.
std::vector<MetricReport> evaluate(ModelBundle& bundle,
                                   const std::vector<const SceneSample*>& scenes,
                                   const std::vector<std::string>& metrics,
                                   const LossConfig& loss_cfg = {});

// Work-directory orchestration used by the CLI: enforces stage gating
// (prerequisite checkpoints and caches must exist), loads datasets named
// in the config, runs the stage, and persists checkpoints/caches/logs.
StageResult run_training_stage(const TrainConfig& cfg,
                               const std::filesystem::path& work_dir);

// Loads a bundle whose checkpoints live in `work_dir` (env_a/env_b/
// irn_syn/rar_syn/irn_real_* stage files); the most advanced available
// checkpoint per network wins.
ModelBundle load_bundle_from_dir(const std::filesystem::path& work_dir,
                                 const ModelConfig& cfg);

// Environment-map cache persistence (PFM per id + meta.json carrying the
// producing config hash; a mismatching hash is a validation error).
void save_env_cache(const std::filesystem::path& dir, const EnvCache& cache,
                    const std::string& config_hash);
EnvCache load_env_cache(const std::filesystem::path& dir,
                        const std::string& expected_config_hash);

}  // namespace invrender
