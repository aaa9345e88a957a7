#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dragon/config.hpp"
#include "dragon/demo_select.hpp"
#include "dragon/io.hpp"
#include "dragon/losses.hpp"
#include "dragon/rewards.hpp"
#include "dragon/toy_diffusion.hpp"

namespace dragon::train {

struct TrainSettings {
  int batch_size = 80;  // total demonstrations per step (two batches)
  bool paired = true;
  int demo_steps = 40;
  double ref_mix_prob = 0.1;
  bool ref_mix_per_item = false;
  double learning_rate = 1e-3;
  double grad_clip = 10.0;
  int iterations = 200;
  std::string optimizer = "rmsprop";  // rmsprop | adam | sgd
  select::SplitThreshold threshold = select::SplitThreshold::kMean;
  bool condition_dropout = true;
  double dropout_prob = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvalSettings {
  int every = 50;
  int prompts = 64;
  int steps = 40;
  int bootstrap_draws = 1000;
  int bootstrap_subset = 40;
  int checkpoint_every = 50;
};

struct ExperimentConfig {
  toy::ToyTask task;
  int hidden = 64;
  std::string model_checkpoint;  // empty: pretrain from scratch
  toy::PretrainConfig pretrain;
  rewards::RewardSpec reward;
  losses::LossConfig loss;
  TrainSettings train;
  EvalSettings eval;
  std::uint64_t config_hash = 0;
};

/// Parses and validates the experiment config file; unknown keys throw
/// InvalidInput listing every offender. A seed override (from the --seed
/// flag) replaces the [train] seed before any derived stream is set up.
ExperimentConfig load_experiment_config(const config::Config& cfg,
                                        std::optional<std::uint64_t> seed_override = std::nullopt);

/// Per-item rewards for instance-level reward kinds (already larger-better).
std::vector<double> score_items(const rewards::RewardSpec& resolved,
                                const select::DemoBatch& batch);

/// Set-level reward of an embedding matrix for distributional kinds.
double score_set(const rewards::RewardSpec& resolved, const EmbeddingMatrix& embeddings);

std::unique_ptr<select::SetObjective> make_objective(const rewards::RewardSpec& resolved);

struct StepRecord {
  int iter = 0;
  bool skipped = false;
  std::string skip_reason;
  double reward_pos = 0.0;
  double reward_neg = 0.0;
  double reward_d1 = 0.0;  // r(D1)/r(D2) for distributional rewards
  double reward_d2 = 0.0;
  double batch_mean_reward = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;       // post-clip
  double grad_norm_raw = 0.0;   // pre-clip
  std::size_t accepted_swaps = 0;
  std::string trace_json;       // greedy swap trace, empty for element splits
  std::vector<std::string> warnings;
};

struct TrainState {
  toy::DenoiserModel theta;
  toy::DenoiserModel ref;
  std::vector<double> opt_m1;  // adam first moment
  std::vector<double> opt_m2;  // adam/rmsprop second moment
  int iter = 0;
};

TrainState make_train_state(const toy::DenoiserModel& baseline);

/// One on-policy step: draw conditions, generate the two demo batches, score,
/// split, compute the configured loss, clip and apply the update. AllTied
/// splits skip the step and leave the parameters untouched.
StepRecord train_step(TrainState& state, const ExperimentConfig& config);

struct EvalRecord {
  int iter = 0;
  double model_metric = 0.0;
  double baseline_metric = 0.0;
  double win_rate = 0.5;
};

struct RunArtifacts {
  toy::DenoiserModel baseline;
  toy::DenoiserModel final_model;
  std::vector<std::pair<int, toy::DenoiserModel>> checkpoints;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  nlohmann::json report;
};

/// Deterministic prompt list "eval-%04d" with round-robin conditions.
std::vector<io::Prompt> default_prompts(int count, int conditions);

/// One generation per prompt with prompt-hashed initial noise (identical
/// across models), every configured metric, win rates, and (for exemplar
/// rewards) the bootstrap win rate.
nlohmann::json evaluate_pair(const toy::DenoiserModel& model, const toy::DenoiserModel& baseline,
                             const toy::ToyTask& task, const rewards::RewardSpec& reward,
                             const std::vector<io::Prompt>& prompts, const EvalSettings& eval,
                             std::uint64_t seed);

/// Full experiment: obtain the baseline (checkpoint or pretraining), run
/// train_step for the configured iterations with periodic checkpoints and
/// evaluation hooks, and emit the final report. When stream_dir is given,
/// checkpoints are written to disk as soon as they exist, so a
/// TrainingDiverged abort still leaves the last good checkpoint behind.
RunArtifacts run_experiment(const ExperimentConfig& config,
                            const std::optional<std::filesystem::path>& stream_dir = std::nullopt);

/// Artifact directory layout: checkpoints/, logs/, traces/, report.json.
void write_artifacts(const std::filesystem::path& out_dir, const ExperimentConfig& config,
                     const RunArtifacts& artifacts);

}  // namespace dragon::train
