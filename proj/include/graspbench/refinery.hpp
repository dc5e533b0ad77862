#pragma once

#include <cstdint>
#include <map>
#include <utility>

#include <json.hpp>

#include "graspbench/scenegen.hpp"

namespace graspbench {

// One draw of the noisy-detector stand-in: with probability fail_prob a
// uniform random box anywhere in the image (a gross failure), otherwise the
// reference box with each edge jittered by N(0, sigma * extent).
AxisBox simulate_detector(const ObjectSpec& obj, Rng& rng, double jitter_sigma,
                          double fail_prob, int image_side);

struct DetectorConfig {
  double jitter_sigma = 0.05;
  double fail_prob = 0.0;
  uint64_t seed = 0;
};

/// Replayable detector: each (scene, object) pair gets its own derived RNG
/// stream, so any draw can be reproduced in isolation.
class DetectorSim {
 public:
  DetectorSim(const DetectorConfig& cfg, int image_side)
      : cfg_(cfg), image_side_(image_side) {}

  AxisBox box_for(int scene_index, int object_index, const ObjectSpec& obj) const;
  // Replays only the failure roll of a draw.
  bool is_gross_failure(int scene_index, int object_index) const;

  const DetectorConfig& config() const { return cfg_; }

 private:
  DetectorConfig cfg_;
  int image_side_;
};

struct FilterReport {
  int total = 0;
  int kept = 0;
  int dropped = 0;
  int scenes_before = 0;
  int scenes_after = 0;
  double tau = 0.25;
  std::map<int, int> kept_per_category;
  std::map<int, int> dropped_per_category;

  nlohmann::json to_json() const;
};

// Keeps an object iff axis_iou(reference bbox, detector box) >= tau; only
// strictly lower IoU is dropped. Scenes left without objects are removed.
std::pair<Dataset, FilterReport> filter_dataset(const Dataset& ds,
                                                const DetectorSim& detector,
                                                double tau = 0.25);

struct DatasetStats {
  int n_scenes = 0;
  int n_objects = 0;
  int n_grasps = 0;
  double grasps_per_image = 0.0;
  std::map<int, int> objects_per_category;
  std::map<std::string, int> scenes_per_split;

  nlohmann::json to_json() const;
};

DatasetStats dataset_stats(const Dataset& ds);

}  // namespace graspbench
