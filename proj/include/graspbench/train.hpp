#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "graspbench/model.hpp"
#include "graspbench/scenegen.hpp"

namespace graspbench {

struct TrainConfig {
  double lr = 3e-4;
  int batch = 32;
  int epochs = 5;
  double warmup_ratio = 0.03;
  std::string schedule = "cosine";
  double weight_decay = 0.01;
  double lambda = 1.0;
  uint64_t seed = 0;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Linear warmup from zero over the first warmup_ratio of total steps, then
// cosine decay; exactly zero at step == total_steps.
double lr_at(int64_t step, int64_t total_steps, double base_lr, double warmup_ratio);

struct OptState {
  ModelParams m;  // first moments
  ModelParams v;  // second moments
  int64_t step = 0;

  static OptState init(const ModelConfig& cfg);
};

// One AdamW update with decoupled weight decay. Decay applies to weight
// matrices only (embeddings, gains and biases are exempt).
void opt_step(ModelParams& params, const ModelParams& grads, OptState& state,
              double lr, double weight_decay);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double eval_seen = -1.0;  // negative when no evaluation ran
  double eval_unseen = -1.0;
  double eval_avg = -1.0;
};

struct TrainResult {
  ModelParams params;
  PipelineMode mode = PipelineMode::vcot;
  std::vector<EpochLog> log;
};

// Builds one example per (scene, target object) pair from the train split.
// In vcot mode the stage-2 crop is teacher-forced from the labeled box and
// the grasp target is expressed in that crop's frame. Training targets use
// each object's first (canonical) grasp label.
std::vector<TrainExample> build_examples(const Dataset& ds, const ModelConfig& cfg,
                                         PipelineMode mode, double margin = 0.1);

// Called after every epoch with current params; returns {seen, unseen, avg}.
using EvalFn = std::function<std::array<double, 3>(const ModelParams&, PipelineMode)>;

TrainResult train_model(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const Dataset& dataset, PipelineMode mode,
                        const EvalFn& eval_fn = nullptr);

// Flat binary checkpoint: u64 header length, JSON header (version
// "vcotg-ckpt-1", pipeline mode, model config, tensor names/shapes/offsets),
// then raw little-endian f64 payload.
void save_checkpoint(const ModelParams& params, PipelineMode mode,
                     const std::filesystem::path& path);

struct Checkpoint {
  ModelParams params;
  PipelineMode mode;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace graspbench
