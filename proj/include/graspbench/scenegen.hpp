#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "graspbench/geometry.hpp"
#include "graspbench/image.hpp"
#include "graspbench/rng.hpp"
#include "graspbench/vcot.hpp"

namespace graspbench {

enum class ShapeKind { bar, disc, tee, ell };

const char* shape_name(ShapeKind k);
ShapeKind shape_from_name(const std::string& name);

inline constexpr int kNumColors = 6;
inline constexpr int kNumShapes = 4;
inline constexpr int kNumCategories = kNumColors * kNumShapes;
inline constexpr int kNumBackgrounds = 6;

// A category is one (color, shape) pairing.
int category_of(int color_id, ShapeKind shape);
int color_of_category(int category_id);
ShapeKind shape_of_category(int category_id);

std::array<uint8_t, 3> color_rgb(int color_id);
std::array<uint8_t, 3> background_rgb(int background_id);

/// One placed object with its analytic box and grasp labels.
struct ObjectSpec {
  int category_id = 0;
  int color_id = 0;
  ShapeKind shape = ShapeKind::bar;
  Vec2 center{};            // anchor point; always lies on the shape
  double orientation = 0.0; // degrees in [0, 180)
  double scale = 0.0;       // long extent in pixels
  AxisBox bbox{0, 0, 1, 1};
  std::vector<GraspRect> grasps;
};

enum class Split { train, test_seen, test_unseen };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct Scene {
  int side = 0;
  Image image;
  std::vector<ObjectSpec> objects;      // annotated targets
  std::vector<ObjectSpec> distractors;  // rendered only, never annotated
  int background_id = 0;
  Split split = Split::train;
};

struct DatasetConfig {
  int n_scenes = 2000;  // train split; test split sizes derive from it unless set
  int objects_min = 1;
  int objects_max = 3;
  int image_side = 64;
  uint64_t seed = 0;
  std::vector<int> seen_categories;    // empty selects the default 18/6 split
  std::vector<int> unseen_categories;
  bool distractors = false;
  std::vector<int> background_set = {0, 1, 2};
  int n_test_seen = -1;    // < 0: derived as max(1, n_scenes / 5)
  int n_test_unseen = -1;

  void apply_defaults();
  void validate() const;
  int test_seen_count() const;
  int test_unseen_count() const;
};

struct Dataset {
  std::vector<Scene> scenes;
  DatasetConfig config;
};

// Analytic construction at a fixed pose. Grasps follow the antipodal
// convention: oriented perpendicular to the stroke they grip, opening width
// = stroke width + 4 px clearance, finger width 6 px (disc: w = 2R + 4, one
// grasp per 45 degrees).
ObjectSpec make_object_at(int category_id, Vec2 center, double orientation_deg,
                          double scale);

// Samples pose and scale so the object's box stays inside the image.
ObjectSpec make_object(Rng& rng, int category_id, int image_side);

// Flat-shaded composite over the background; distractors draw below targets.
Image render(const Scene& scene);

Dataset gen_dataset(const DatasetConfig& cfg);

// Deterministic condition ids: (detect, grasp) = (2 * category, 2 * category + 1).
Instruction instruction_of(const ObjectSpec& obj);
int condition_count();

// On-disk format: manifest.jsonl plus one P6 PPM per scene.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace graspbench
