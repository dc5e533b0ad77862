#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "graspbench/refinery.hpp"
#include "graspbench/scenegen.hpp"
#include "graspbench/train.hpp"

namespace graspbench {

// FNV-1a over a canonical JSON dump; tags every emitted artifact.
std::string fingerprint(const nlohmann::json& j);

struct EvalReport {
  int successes_seen = 0, trials_seen = 0;
  int successes_unseen = 0, trials_unseen = 0;
  double success_rate_seen = 0.0;
  double success_rate_unseen = 0.0;
  double success_rate_avg = 0.0;    // pooled over the combined test set
  double success_rate_macro = 0.0;  // unweighted mean of the two split rates
  std::map<int, std::pair<int, int>> per_category;  // successes, trials
  std::string config_fingerprint;
  std::vector<uint64_t> seeds;

  nlohmann::json to_json() const;
};

// Runs the two-turn (or single-turn) pipeline on every (scene, target) pair
// of the test splits and scores it with grasp_success. Deterministic; with
// n_threads > 1 samples fan out but the counts reduce in index order, so the
// result equals the serial one exactly.
EvalReport evaluate(const ModelParams& params, PipelineMode mode, const Dataset& ds,
                    double margin = 0.1, int n_threads = 1);

// Same protocol against an arbitrary policy (oracles, constant baselines).
EvalReport evaluate_policy(const GraspPolicy& policy, PipelineMode mode,
                           const Dataset& ds, double margin = 0.1,
                           int n_threads = 1);

struct ExperimentConfig {
  std::string dataset_dir;
  std::string mode = "vcot";  // pipeline mode for plain `train`/`eval`
  double filter_tau = 0.25;
  double margin = 0.1;
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  DetectorConfig detector;
  // Ablation axes.
  std::vector<std::string> vcot_axis = {"on", "off"};
  std::vector<std::string> head_axis = {"token"};
  std::vector<double> data_fractions = {0.10, 0.25, 0.50, 1.0};
  std::vector<int> epochs_sweep = {1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<std::string> robustness_variants = {"original", "background", "distractors"};
  std::vector<uint64_t> seeds = {1, 2, 3};

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  std::string fingerprint() const;
};

struct ResultRow {
  std::string cell;   // e.g. "vcot=on,head=token" / fraction / variant
  std::string seed;   // seed number, or "mean"
  double seen = 0.0;
  double unseen = 0.0;
  double avg = 0.0;
  int successes = 0;  // pooled over both splits
  int trials = 0;
};

// Trains and evaluates every (vcot, head, seed) grid cell; per-seed rows
// plus one mean row per cell.
std::vector<ResultRow> run_ablation(const ExperimentConfig& cfg, const Dataset& ds);

// Nested prefix subsets of the train split (one seeded shuffle) per
// fraction; per-seed rows plus mean rows, x = fraction.
std::vector<ResultRow> run_scaling(const ExperimentConfig& cfg, const Dataset& ds);

// One training run per seed at max(epochs_sweep); evaluates after every
// epoch and reports the epochs in the sweep.
std::vector<ResultRow> run_epochs(const ExperimentConfig& cfg, const Dataset& ds);

// Trains on the original dataset per seed, then evaluates the same params
// on original / held-out-background / added-distractor test variants.
std::vector<ResultRow> run_robustness(const ExperimentConfig& cfg, const Dataset& ds);

// Regenerates the test splits of `base` under a robustness variant
// ("original", "background", "distractors"); target annotations are
// identical across variants.
Dataset robustness_variant(const DatasetConfig& base, const std::string& variant);

// Keeps the first llround(fraction * n_train) train scenes of one seeded
// shuffle (nested across fractions) plus all test scenes.
Dataset subset_train(const Dataset& ds, double fraction, uint64_t shuffle_seed);

void write_rows_csv(const std::vector<ResultRow>& rows, const std::string& x_name,
                    const std::string& fingerprint,
                    const std::filesystem::path& path);

}  // namespace graspbench
