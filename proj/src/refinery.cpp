#include "graspbench/refinery.hpp"

#include <algorithm>
#include <stdexcept>

namespace graspbench {

namespace {

constexpr uint64_t kDetectorStream = 0x11;

// Sorts a perturbed coordinate pair back into a valid (lo, hi) ordering.
void sort_pair(double& lo, double& hi) {
  if (lo > hi) std::swap(lo, hi);
  if (hi - lo < 1e-6) hi = lo + 1e-6;
}

}  // namespace

AxisBox simulate_detector(const ObjectSpec& obj, Rng& rng, double jitter_sigma,
                          double fail_prob, int image_side) {
  if (jitter_sigma < 0.0 || fail_prob < 0.0 || fail_prob > 1.0) {
    throw std::invalid_argument("simulate_detector: bad noise parameters");
  }
  const double roll = rng.uniform();
  if (roll < fail_prob) {
    // Gross failure: a box unrelated to the object.
    double x0 = rng.uniform(0.0, image_side);
    double x1 = rng.uniform(0.0, image_side);
    double y0 = rng.uniform(0.0, image_side);
    double y1 = rng.uniform(0.0, image_side);
    sort_pair(x0, x1);
    sort_pair(y0, y1);
    return AxisBox(x0, y0, x1, y1);
  }
  const double sw = jitter_sigma * obj.bbox.width();
  const double sh = jitter_sigma * obj.bbox.height();
  double x0 = obj.bbox.x_min + rng.normal(0.0, sw);
  double x1 = obj.bbox.x_max + rng.normal(0.0, sw);
  double y0 = obj.bbox.y_min + rng.normal(0.0, sh);
  double y1 = obj.bbox.y_max + rng.normal(0.0, sh);
  sort_pair(x0, x1);
  sort_pair(y0, y1);
  return AxisBox(x0, y0, x1, y1);
}

AxisBox DetectorSim::box_for(int scene_index, int object_index,
                             const ObjectSpec& obj) const {
  Rng rng(mix_seed({cfg_.seed, static_cast<uint64_t>(scene_index),
                    static_cast<uint64_t>(object_index), kDetectorStream}));
  return simulate_detector(obj, rng, cfg_.jitter_sigma, cfg_.fail_prob, image_side_);
}

bool DetectorSim::is_gross_failure(int scene_index, int object_index) const {
  Rng rng(mix_seed({cfg_.seed, static_cast<uint64_t>(scene_index),
                    static_cast<uint64_t>(object_index), kDetectorStream}));
  return rng.uniform() < cfg_.fail_prob;
}

nlohmann::json FilterReport::to_json() const {
  nlohmann::json per_cat_kept = nlohmann::json::object();
  nlohmann::json per_cat_dropped = nlohmann::json::object();
  for (const auto& [cat, n] : kept_per_category) per_cat_kept[std::to_string(cat)] = n;
  for (const auto& [cat, n] : dropped_per_category) per_cat_dropped[std::to_string(cat)] = n;
  return {
      {"total", total},
      {"kept", kept},
      {"dropped", dropped},
      {"scenes_before", scenes_before},
      {"scenes_after", scenes_after},
      {"tau", tau},
      {"kept_per_category", per_cat_kept},
      {"dropped_per_category", per_cat_dropped},
  };
}

std::pair<Dataset, FilterReport> filter_dataset(const Dataset& ds,
                                                const DetectorSim& detector,
                                                double tau) {
  Dataset out;
  out.config = ds.config;
  FilterReport report;
  report.tau = tau;
  report.scenes_before = static_cast<int>(ds.scenes.size());

  for (size_t si = 0; si < ds.scenes.size(); ++si) {
    const Scene& scene = ds.scenes[si];
    Scene kept = scene;
    kept.objects.clear();
    for (size_t oi = 0; oi < scene.objects.size(); ++oi) {
      const ObjectSpec& obj = scene.objects[oi];
      const AxisBox det = detector.box_for(static_cast<int>(si), static_cast<int>(oi), obj);
      report.total++;
      if (axis_iou(obj.bbox, det) >= tau) {
        report.kept++;
        report.kept_per_category[obj.category_id]++;
        kept.objects.push_back(obj);
      } else {
        report.dropped++;
        report.dropped_per_category[obj.category_id]++;
      }
    }
    if (!kept.objects.empty()) {
      out.scenes.push_back(std::move(kept));
    }
  }
  report.scenes_after = static_cast<int>(out.scenes.size());
  return {std::move(out), report};
}

nlohmann::json DatasetStats::to_json() const {
  nlohmann::json per_cat = nlohmann::json::object();
  for (const auto& [cat, n] : objects_per_category) per_cat[std::to_string(cat)] = n;
  nlohmann::json per_split = nlohmann::json::object();
  for (const auto& [name, n] : scenes_per_split) per_split[name] = n;
  return {
      {"n_scenes", n_scenes},
      {"n_objects", n_objects},
      {"n_grasps", n_grasps},
      {"grasps_per_image", grasps_per_image},
      {"objects_per_category", per_cat},
      {"scenes_per_split", per_split},
  };
}

DatasetStats dataset_stats(const Dataset& ds) {
  DatasetStats stats;
  stats.n_scenes = static_cast<int>(ds.scenes.size());
  for (const Scene& scene : ds.scenes) {
    stats.scenes_per_split[split_name(scene.split)]++;
    for (const ObjectSpec& obj : scene.objects) {
      stats.n_objects++;
      stats.n_grasps += static_cast<int>(obj.grasps.size());
      stats.objects_per_category[obj.category_id]++;
    }
  }
  stats.grasps_per_image =
      stats.n_scenes == 0 ? 0.0 : static_cast<double>(stats.n_grasps) / stats.n_scenes;
  return stats;
}

}  // namespace graspbench
