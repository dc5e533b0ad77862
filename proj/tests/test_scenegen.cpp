#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "graspbench/refinery.hpp"
#include "graspbench/scenegen.hpp"

using namespace graspbench;
namespace fs = std::filesystem;

namespace {

DatasetConfig small_config() {
  DatasetConfig cfg;
  cfg.n_scenes = 20;
  cfg.seed = 42;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("analytic grasp rules: bar") {
  // horizontal bar: every grasp is perpendicular (theta = 90)
  const ObjectSpec bar = make_object_at(category_of(0, ShapeKind::bar), {32, 32}, 0.0, 20.0);
  CHECK(bar.grasps.size() == 3);
  for (const GraspRect& g : bar.grasps) {
    CHECK(g.theta == doctest::Approx(90.0));
    CHECK(g.h == doctest::Approx(6.0));
  }
  // centers at the object center and +-L/4 along the axis
  CHECK(bar.grasps[0].x == doctest::Approx(32.0));
  CHECK(bar.grasps[1].x == doctest::Approx(37.0));
  CHECK(bar.grasps[2].x == doctest::Approx(27.0));
}

TEST_CASE("analytic grasp rules: disc of radius 10") {
  const ObjectSpec disc = make_object_at(category_of(1, ShapeKind::disc), {30, 30}, 0.0, 20.0);
  CHECK(disc.grasps.size() == 4);
  std::set<int> angles;
  for (const GraspRect& g : disc.grasps) {
    CHECK(g.w == doctest::Approx(24.0));  // 2R + 4
    angles.insert(static_cast<int>(g.theta));
  }
  CHECK(angles == std::set<int>{0, 45, 90, 135});
  CHECK(disc.bbox.x_min == doctest::Approx(20.0));
  CHECK(disc.bbox.x_max == doctest::Approx(40.0));
}

TEST_CASE("tee and ell carry one grasp per stroke") {
  const ObjectSpec tee = make_object_at(category_of(2, ShapeKind::tee), {32, 32}, 30.0, 18.0);
  CHECK(tee.grasps.size() == 2);
  const ObjectSpec ell = make_object_at(category_of(3, ShapeKind::ell), {32, 32}, 120.0, 18.0);
  CHECK(ell.grasps.size() == 2);
  // stem runs at local 90 deg, so its grasp is perpendicular to (90 + phi)
  CHECK(tee.grasps[0].theta == doctest::Approx(normalize_angle_deg(30.0 + 90.0 + 90.0)));
}

TEST_CASE("label validity: every grasp succeeds against itself, centers in bbox") {
  Rng rng(1001);
  for (int i = 0; i < 200; ++i) {
    const int cat = rng.uniform_int(kNumCategories);
    const ObjectSpec obj = make_object(rng, cat, 64);
    REQUIRE_FALSE(obj.grasps.empty());
    for (const GraspRect& g : obj.grasps) {
      CHECK(grasp_success(g, obj.grasps));
      CHECK(g.x >= obj.bbox.x_min);
      CHECK(g.x <= obj.bbox.x_max);
      CHECK(g.y >= obj.bbox.y_min);
      CHECK(g.y <= obj.bbox.y_max);
    }
    CHECK(obj.bbox.x_min >= 0.0);
    CHECK(obj.bbox.x_max <= 64.0);
    CHECK_THROWS_AS(make_object(rng, kNumCategories, 64), std::invalid_argument);
  }
}

TEST_CASE("bbox tightly hulls the rendered shape") {
  Rng rng(1002);
  for (int i = 0; i < 50; ++i) {
    Scene scene;
    scene.side = 64;
    scene.background_id = 0;
    scene.objects.push_back(make_object(rng, rng.uniform_int(kNumCategories), 64));
    const ObjectSpec& obj = scene.objects[0];
    scene.image = render(scene);
    const auto bg = background_rgb(0);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        const bool is_bg = scene.image.at(x, y, 0) == bg[0] &&
                           scene.image.at(x, y, 1) == bg[1] &&
                           scene.image.at(x, y, 2) == bg[2];
        if (!is_bg) {
          CHECK(x + 0.5 >= obj.bbox.x_min - 1.0);
          CHECK(x + 0.5 <= obj.bbox.x_max + 1.0);
          CHECK(y + 0.5 >= obj.bbox.y_min - 1.0);
          CHECK(y + 0.5 <= obj.bbox.y_max + 1.0);
        }
      }
    }
  }
}

TEST_CASE("render determinism and anchor colors") {
  DatasetConfig cfg = small_config();
  const Dataset ds = gen_dataset(cfg);
  for (const Scene& scene : ds.scenes) {
    // anchor pixel wears the object's own color (no occlusion by construction)
    for (const ObjectSpec& obj : scene.objects) {
      const auto rgb = color_rgb(obj.color_id);
      const int px = static_cast<int>(obj.center.x);
      const int py = static_cast<int>(obj.center.y);
      CHECK(scene.image.at(px, py, 0) == rgb[0]);
      CHECK(scene.image.at(px, py, 1) == rgb[1]);
      CHECK(scene.image.at(px, py, 2) == rgb[2]);
    }
    // re-render is byte-identical
    const Image again = render(scene);
    CHECK(again.data == scene.image.data);
  }

  // empty-background render
  Scene empty;
  empty.side = 32;
  empty.background_id = 2;
  empty.objects.push_back(make_object_at(0, {16, 16}, 0, 10));
  empty.objects.clear();
  const Image img = render(empty);
  const auto bg = background_rgb(2);
  for (size_t i = 0; i < img.data.size(); i += 3) CHECK(img.data[i] == bg[0]);
}

TEST_CASE("gen_dataset honors invariants") {
  DatasetConfig cfg = small_config();
  const Dataset ds = gen_dataset(cfg);

  const int expected_test = std::max(1, cfg.n_scenes / 5);
  int n_train = 0, n_seen = 0, n_unseen = 0;
  const std::set<int> unseen(ds.config.unseen_categories.begin(),
                             ds.config.unseen_categories.end());
  for (const Scene& scene : ds.scenes) {
    REQUIRE_FALSE(scene.objects.empty());
    // pairwise overlap bound
    for (size_t i = 0; i < scene.objects.size(); ++i) {
      for (size_t j = i + 1; j < scene.objects.size(); ++j) {
        CHECK(axis_iou(scene.objects[i].bbox, scene.objects[j].bbox) <= 0.05);
      }
    }
    switch (scene.split) {
      case Split::train: n_train++; break;
      case Split::test_seen: n_seen++; break;
      case Split::test_unseen: n_unseen++; break;
    }
    for (const ObjectSpec& obj : scene.objects) {
      if (scene.split == Split::test_unseen) {
        CHECK(unseen.count(obj.category_id) == 1);
      } else {
        CHECK(unseen.count(obj.category_id) == 0);  // split hygiene
      }
    }
  }
  CHECK(n_train == cfg.n_scenes);
  CHECK(n_seen == expected_test);
  CHECK(n_unseen == expected_test);

  // empty config gives an empty dataset; zero categories is an error
  DatasetConfig none = small_config();
  none.n_scenes = 0;
  CHECK(gen_dataset(none).scenes.empty());
  DatasetConfig bad = small_config();
  bad.seen_categories = {};
  bad.unseen_categories = {1};
  CHECK_THROWS_AS(gen_dataset(bad), std::invalid_argument);
}

TEST_CASE("determinism: same config, byte-identical manifests") {
  const DatasetConfig cfg = small_config();
  const fs::path dir1 = fs::temp_directory_path() / "gb_det_a";
  const fs::path dir2 = fs::temp_directory_path() / "gb_det_b";
  save_dataset(gen_dataset(cfg), dir1);
  save_dataset(gen_dataset(cfg), dir2);
  CHECK(slurp(dir1 / "manifest.jsonl") == slurp(dir2 / "manifest.jsonl"));
  CHECK(slurp(dir1 / "scene_00000.ppm") == slurp(dir2 / "scene_00000.ppm"));
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("save/load roundtrip") {
  const DatasetConfig cfg = small_config();
  const Dataset ds = gen_dataset(cfg);
  const fs::path dir = fs::temp_directory_path() / "gb_roundtrip";
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  REQUIRE(back.scenes.size() == ds.scenes.size());
  for (size_t i = 0; i < ds.scenes.size(); ++i) {
    CHECK(back.scenes[i].image.data == ds.scenes[i].image.data);
    CHECK(back.scenes[i].split == ds.scenes[i].split);
    CHECK(back.scenes[i].background_id == ds.scenes[i].background_id);
    REQUIRE(back.scenes[i].objects.size() == ds.scenes[i].objects.size());
    for (size_t o = 0; o < ds.scenes[i].objects.size(); ++o) {
      const ObjectSpec& a = ds.scenes[i].objects[o];
      const ObjectSpec& b = back.scenes[i].objects[o];
      CHECK(a.category_id == b.category_id);
      CHECK(a.bbox.x_min == b.bbox.x_min);  // exact double roundtrip
      REQUIRE(a.grasps.size() == b.grasps.size());
      for (size_t g = 0; g < a.grasps.size(); ++g) {
        CHECK(a.grasps[g].x == b.grasps[g].x);
        CHECK(a.grasps[g].theta == b.grasps[g].theta);
      }
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("distractor scenes keep target annotations unchanged") {
  DatasetConfig cfg = small_config();
  const Dataset plain = gen_dataset(cfg);
  cfg.distractors = true;
  const Dataset with = gen_dataset(cfg);
  REQUIRE(plain.scenes.size() == with.scenes.size());
  for (size_t i = 0; i < plain.scenes.size(); ++i) {
    CHECK_FALSE(with.scenes[i].distractors.empty());
    REQUIRE(with.scenes[i].objects.size() == plain.scenes[i].objects.size());
    for (size_t o = 0; o < plain.scenes[i].objects.size(); ++o) {
      const ObjectSpec& a = plain.scenes[i].objects[o];
      const ObjectSpec& b = with.scenes[i].objects[o];
      CHECK(a.category_id == b.category_id);
      CHECK(a.center.x == b.center.x);
      CHECK(a.orientation == b.orientation);
      CHECK(a.scale == b.scale);
    }
    // distractors never share a category with a target
    std::set<int> target_cats;
    for (const ObjectSpec& t : with.scenes[i].objects) target_cats.insert(t.category_id);
    for (const ObjectSpec& d : with.scenes[i].distractors) {
      CHECK(target_cats.count(d.category_id) == 0);
    }
  }
}

TEST_CASE("instruction ids are injective with distinct task flags") {
  std::set<int> seen_ids;
  for (int cat = 0; cat < kNumCategories; ++cat) {
    const ObjectSpec obj = make_object_at(cat, {32, 32}, 0, 16);
    const Instruction instr = instruction_of(obj);
    CHECK(instr.detect_id != instr.grasp_id);
    CHECK(seen_ids.insert(instr.detect_id).second);
    CHECK(seen_ids.insert(instr.grasp_id).second);
    CHECK(instr.detect_id < condition_count());
    CHECK(instr.grasp_id < condition_count());
  }
  // same category in two scenes maps to the same ids
  const ObjectSpec a = make_object_at(7, {10, 10}, 0, 16);
  const ObjectSpec b = make_object_at(7, {40, 40}, 90, 20);
  CHECK(instruction_of(a).detect_id == instruction_of(b).detect_id);
}
