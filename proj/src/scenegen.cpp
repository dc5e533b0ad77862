#include "graspbench/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace graspbench {

namespace {

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
constexpr double kGraspClearance = 4.0;  // opening width margin over the stroke
constexpr double kFingerWidth = 6.0;
constexpr double kMaxPlacementIou = 0.05;
constexpr int kMaxPlacementAttempts = 200;

// Stream tags for per-scene RNG derivation.
constexpr uint64_t kObjectStream = 0x01;
constexpr uint64_t kBackgroundStream = 0x02;
constexpr uint64_t kDistractorStream = 0x03;

struct Stroke {
  Vec2 center;
  double length;
  double width;
  double angle_deg;  // direction of the long axis
};

double stroke_width(double scale) { return std::max(2.5, 0.28 * scale); }

Vec2 rotated(Vec2 p, double deg) {
  const double t = deg * kDegToRad;
  const double c = std::cos(t), s = std::sin(t);
  return {p.x * c - p.y * s, p.x * s + p.y * c};
}

// Strokes in the global frame for a rectangle-based shape. The anchor
// (object center) always lies on the first stroke.
std::vector<Stroke> shape_strokes(ShapeKind kind, Vec2 center, double phi,
                                  double scale) {
  const double L = scale;
  const double W = stroke_width(scale);
  std::vector<Stroke> local;
  switch (kind) {
    case ShapeKind::bar:
      local.push_back({{0, 0}, L, W, 0.0});
      break;
    case ShapeKind::tee:
      local.push_back({{0, 0}, L, W, 90.0});                    // stem
      local.push_back({{0, -0.5 * L + 0.5 * W}, L, W, 0.0});    // cap
      break;
    case ShapeKind::ell:
      local.push_back({{0, 0}, L, W, 90.0});                          // stem
      local.push_back({{0.5 * (L - W), 0.5 * L - 0.5 * W}, L, W, 0.0});  // foot
      break;
    case ShapeKind::disc:
      return {};
  }
  std::vector<Stroke> out;
  out.reserve(local.size());
  for (const Stroke& s : local) {
    out.push_back({center + rotated(s.center, phi), s.length, s.width,
                   normalize_angle_deg(s.angle_deg + phi)});
  }
  return out;
}

void extend_hull(const Stroke& s, double& x0, double& y0, double& x1, double& y1) {
  const double t = s.angle_deg * kDegToRad;
  const Vec2 u{std::cos(t), std::sin(t)};
  const Vec2 v{-u.y, u.x};
  const double ex = std::abs(u.x) * 0.5 * s.length + std::abs(v.x) * 0.5 * s.width;
  const double ey = std::abs(u.y) * 0.5 * s.length + std::abs(v.y) * 0.5 * s.width;
  x0 = std::min(x0, s.center.x - ex);
  x1 = std::max(x1, s.center.x + ex);
  y0 = std::min(y0, s.center.y - ey);
  y1 = std::max(y1, s.center.y + ey);
}

GraspRect stroke_grasp(const Stroke& s) {
  return GraspRect(s.center.x, s.center.y, s.width + kGraspClearance,
                   kFingerWidth, s.angle_deg + 90.0);
}

bool contains(const AxisBox& b, Vec2 p) {
  return p.x >= b.x_min && p.x <= b.x_max && p.y >= b.y_min && p.y <= b.y_max;
}

// Overlap rule for rejection sampling: near-disjoint boxes, and no box may
// swallow another object's anchor (keeps every anchor pixel visible).
bool placement_ok(const ObjectSpec& cand, const std::vector<ObjectSpec>& placed) {
  for (const ObjectSpec& p : placed) {
    if (axis_iou(cand.bbox, p.bbox) > kMaxPlacementIou) return false;
    if (contains(cand.bbox, p.center) || contains(p.bbox, cand.center)) return false;
  }
  return true;
}

void draw_stroke(Image& img, const Stroke& s, std::array<uint8_t, 3> rgb) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  extend_hull(s, x0, y0, x1, y1);
  const int px0 = std::max(0, static_cast<int>(std::floor(x0)));
  const int px1 = std::min(img.width - 1, static_cast<int>(std::ceil(x1)));
  const int py0 = std::max(0, static_cast<int>(std::floor(y0)));
  const int py1 = std::min(img.height - 1, static_cast<int>(std::ceil(y1)));
  const double t = s.angle_deg * kDegToRad;
  const Vec2 u{std::cos(t), std::sin(t)};
  const Vec2 v{-u.y, u.x};
  for (int py = py0; py <= py1; ++py) {
    for (int px = px0; px <= px1; ++px) {
      const Vec2 d{px + 0.5 - s.center.x, py + 0.5 - s.center.y};
      if (std::abs(dot(d, u)) <= 0.5 * s.length && std::abs(dot(d, v)) <= 0.5 * s.width) {
        img.at(px, py, 0) = rgb[0];
        img.at(px, py, 1) = rgb[1];
        img.at(px, py, 2) = rgb[2];
      }
    }
  }
}

void draw_object(Image& img, const ObjectSpec& obj) {
  const auto rgb = color_rgb(obj.color_id);
  if (obj.shape == ShapeKind::disc) {
    const double r = 0.5 * obj.scale;
    const int px0 = std::max(0, static_cast<int>(std::floor(obj.center.x - r)));
    const int px1 = std::min(img.width - 1, static_cast<int>(std::ceil(obj.center.x + r)));
    const int py0 = std::max(0, static_cast<int>(std::floor(obj.center.y - r)));
    const int py1 = std::min(img.height - 1, static_cast<int>(std::ceil(obj.center.y + r)));
    for (int py = py0; py <= py1; ++py) {
      for (int px = px0; px <= px1; ++px) {
        const double dx = px + 0.5 - obj.center.x;
        const double dy = py + 0.5 - obj.center.y;
        if (dx * dx + dy * dy <= r * r) {
          img.at(px, py, 0) = rgb[0];
          img.at(px, py, 1) = rgb[1];
          img.at(px, py, 2) = rgb[2];
        }
      }
    }
    return;
  }
  for (const Stroke& s : shape_strokes(obj.shape, obj.center, obj.orientation, obj.scale)) {
    draw_stroke(img, s, rgb);
  }
}

std::vector<int> default_unseen() {
  // Novel color-shape pairings: every color and every shape still occurs
  // among the seen categories.
  std::vector<int> out;
  for (int c = 0; c < kNumColors; ++c) {
    out.push_back(category_of(c, static_cast<ShapeKind>((c + 2) % kNumShapes)));
  }
  return out;
}

// Draws k distinct categories from the pool.
std::vector<int> sample_categories(Rng& rng, const std::vector<int>& pool, int k) {
  std::vector<int> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<int> out;
  for (int i = 0; i < k && !idx.empty(); ++i) {
    const int j = rng.uniform_int(static_cast<int>(idx.size()));
    out.push_back(pool[idx[j]]);
    idx.erase(idx.begin() + j);
  }
  return out;
}

ObjectSpec sample_placed_object(Rng& rng, int category, int image_side,
                                double scale_lo, double scale_hi) {
  const double phi = rng.uniform(0.0, 180.0);
  const double scale = rng.uniform(scale_lo, scale_hi);
  const ObjectSpec probe = make_object_at(category, {0.0, 0.0}, phi, scale);
  const double margin = 1.0;
  const double cx_lo = margin - probe.bbox.x_min;
  const double cx_hi = image_side - margin - probe.bbox.x_max;
  const double cy_lo = margin - probe.bbox.y_min;
  const double cy_hi = image_side - margin - probe.bbox.y_max;
  if (cx_lo > cx_hi || cy_lo > cy_hi) {
    throw std::logic_error("scenegen: object too large for image");
  }
  const Vec2 c{rng.uniform(cx_lo, cx_hi), rng.uniform(cy_lo, cy_hi)};
  return make_object_at(category, c, phi, scale);
}

Scene gen_scene(const DatasetConfig& cfg, Split split, int scene_index,
                const std::vector<int>& pool) {
  Rng obj_rng(mix_seed({cfg.seed, static_cast<uint64_t>(split), static_cast<uint64_t>(scene_index), kObjectStream}));
  Rng bg_rng(mix_seed({cfg.seed, static_cast<uint64_t>(split), static_cast<uint64_t>(scene_index), kBackgroundStream}));
  Rng dis_rng(mix_seed({cfg.seed, static_cast<uint64_t>(split), static_cast<uint64_t>(scene_index), kDistractorStream}));

  Scene scene;
  scene.side = cfg.image_side;
  scene.split = split;
  scene.background_id = cfg.background_set[bg_rng.uniform_int(static_cast<int>(cfg.background_set.size()))];

  const double scale_lo = 0.22 * cfg.image_side;
  const double scale_hi = 0.375 * cfg.image_side;

  int want = cfg.objects_min + obj_rng.uniform_int(cfg.objects_max - cfg.objects_min + 1);
  want = std::min<int>(want, static_cast<int>(pool.size()));
  const std::vector<int> cats = sample_categories(obj_rng, pool, want);
  for (int cat : cats) {
    for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
      ObjectSpec obj = sample_placed_object(obj_rng, cat, cfg.image_side, scale_lo, scale_hi);
      if (placement_ok(obj, scene.objects)) {
        scene.objects.push_back(std::move(obj));
        break;
      }
    }
  }

  if (cfg.distractors) {
    // Distractors come from their own stream so target annotations match
    // the distractor-free generator exactly. They are drawn from seen
    // categories absent from this scene, so instructions stay unambiguous.
    std::set<int> taken(cats.begin(), cats.end());
    std::vector<int> dpool;
    for (int cat : cfg.seen_categories) {
      if (!taken.count(cat)) dpool.push_back(cat);
    }
    const int n_dis = 1 + dis_rng.uniform_int(2);
    const double dlo = 0.16 * cfg.image_side, dhi = 0.25 * cfg.image_side;
    for (int d = 0; d < n_dis && !dpool.empty(); ++d) {
      const int cat = dpool[dis_rng.uniform_int(static_cast<int>(dpool.size()))];
      std::vector<ObjectSpec> all(scene.objects);
      all.insert(all.end(), scene.distractors.begin(), scene.distractors.end());
      for (int attempt = 0; attempt < 10 * kMaxPlacementAttempts; ++attempt) {
        ObjectSpec obj = sample_placed_object(dis_rng, cat, cfg.image_side, dlo, dhi);
        if (placement_ok(obj, all)) {
          scene.distractors.push_back(std::move(obj));
          break;
        }
      }
    }
    if (scene.distractors.empty()) {
      throw std::runtime_error("scenegen: could not place any distractor");
    }
  }

  scene.image = render(scene);
  return scene;
}

}  // namespace

const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::bar: return "bar";
    case ShapeKind::disc: return "disc";
    case ShapeKind::tee: return "tee";
    case ShapeKind::ell: return "ell";
  }
  return "?";
}

ShapeKind shape_from_name(const std::string& name) {
  if (name == "bar") return ShapeKind::bar;
  if (name == "disc") return ShapeKind::disc;
  if (name == "tee") return ShapeKind::tee;
  if (name == "ell") return ShapeKind::ell;
  throw std::invalid_argument("unknown shape: " + name);
}

int category_of(int color_id, ShapeKind shape) {
  return color_id * kNumShapes + static_cast<int>(shape);
}

int color_of_category(int category_id) { return category_id / kNumShapes; }

ShapeKind shape_of_category(int category_id) {
  return static_cast<ShapeKind>(category_id % kNumShapes);
}

std::array<uint8_t, 3> color_rgb(int color_id) {
  static constexpr std::array<std::array<uint8_t, 3>, kNumColors> kColors{{
      {220, 50, 47},   // red
      {64, 192, 87},   // green
      {66, 99, 235},   // blue
      {250, 219, 20},  // yellow
      {204, 93, 232},  // magenta
      {34, 211, 238},  // cyan
  }};
  return kColors.at(static_cast<size_t>(color_id));
}

std::array<uint8_t, 3> background_rgb(int background_id) {
  static constexpr std::array<std::array<uint8_t, 3>, kNumBackgrounds> kBackgrounds{{
      {52, 58, 64},     // dark gray
      {134, 142, 150},  // light gray
      {110, 79, 58},    // brown
      {30, 40, 80},     // navy
      {88, 94, 50},     // olive
      {26, 99, 97},     // teal
  }};
  return kBackgrounds.at(static_cast<size_t>(background_id));
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test_seen: return "test_seen";
    case Split::test_unseen: return "test_unseen";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "test_seen") return Split::test_seen;
  if (name == "test_unseen") return Split::test_unseen;
  throw std::invalid_argument("unknown split: " + name);
}

void DatasetConfig::apply_defaults() {
  if (seen_categories.empty() && unseen_categories.empty()) {
    unseen_categories = default_unseen();
    std::set<int> unseen(unseen_categories.begin(), unseen_categories.end());
    for (int cat = 0; cat < kNumCategories; ++cat) {
      if (!unseen.count(cat)) seen_categories.push_back(cat);
    }
  }
}

void DatasetConfig::validate() const {
  if (n_scenes < 0) throw std::invalid_argument("DatasetConfig: n_scenes must be >= 0");
  if (image_side < 32) throw std::invalid_argument("DatasetConfig: image_side must be >= 32");
  if (objects_min < 1 || objects_max < objects_min) {
    throw std::invalid_argument("DatasetConfig: bad objects_per_scene range");
  }
  if (seen_categories.empty()) {
    throw std::invalid_argument("DatasetConfig: no seen categories");
  }
  if (background_set.empty()) {
    throw std::invalid_argument("DatasetConfig: empty background_set");
  }
  for (int cat : seen_categories) {
    if (cat < 0 || cat >= kNumCategories) throw std::invalid_argument("DatasetConfig: bad category id");
  }
  for (int cat : unseen_categories) {
    if (cat < 0 || cat >= kNumCategories) throw std::invalid_argument("DatasetConfig: bad category id");
  }
  for (int bg : background_set) {
    if (bg < 0 || bg >= kNumBackgrounds) throw std::invalid_argument("DatasetConfig: bad background id");
  }
  std::set<int> seen(seen_categories.begin(), seen_categories.end());
  for (int cat : unseen_categories) {
    if (seen.count(cat)) throw std::invalid_argument("DatasetConfig: seen and unseen categories overlap");
  }
  if (test_unseen_count() > 0 && unseen_categories.empty()) {
    throw std::invalid_argument("DatasetConfig: test_unseen requested but no unseen categories");
  }
}

int DatasetConfig::test_seen_count() const {
  if (n_test_seen >= 0) return n_test_seen;
  return n_scenes == 0 ? 0 : std::max(1, n_scenes / 5);
}

int DatasetConfig::test_unseen_count() const {
  if (n_test_unseen >= 0) return n_test_unseen;
  return n_scenes == 0 ? 0 : std::max(1, n_scenes / 5);
}

ObjectSpec make_object_at(int category_id, Vec2 center, double orientation_deg,
                          double scale) {
  if (category_id < 0 || category_id >= kNumCategories) {
    throw std::invalid_argument("make_object_at: unknown category");
  }
  if (scale <= 0.0) throw std::invalid_argument("make_object_at: scale must be positive");

  ObjectSpec obj;
  obj.category_id = category_id;
  obj.color_id = color_of_category(category_id);
  obj.shape = shape_of_category(category_id);
  obj.center = center;
  obj.orientation = normalize_angle_deg(orientation_deg);
  obj.scale = scale;

  if (obj.shape == ShapeKind::disc) {
    const double r = 0.5 * scale;
    obj.bbox = AxisBox(center.x - r, center.y - r, center.x + r, center.y + r);
    for (double theta : {0.0, 45.0, 90.0, 135.0}) {
      obj.grasps.emplace_back(center.x, center.y, 2.0 * r + kGraspClearance,
                              kFingerWidth, theta);
    }
    return obj;
  }

  const auto strokes = shape_strokes(obj.shape, center, obj.orientation, scale);
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const Stroke& s : strokes) extend_hull(s, x0, y0, x1, y1);
  obj.bbox = AxisBox(x0, y0, x1, y1);

  if (obj.shape == ShapeKind::bar) {
    const Stroke& s = strokes[0];
    const Vec2 axis = rotated({1, 0}, s.angle_deg);
    for (double offset : {0.0, 0.25 * s.length, -0.25 * s.length}) {
      const Vec2 at = s.center + axis * offset;
      GraspRect g = stroke_grasp(s);
      obj.grasps.emplace_back(at.x, at.y, g.w, g.h, g.theta);
    }
  } else {
    for (const Stroke& s : strokes) obj.grasps.push_back(stroke_grasp(s));
  }
  return obj;
}

ObjectSpec make_object(Rng& rng, int category_id, int image_side) {
  return sample_placed_object(rng, category_id, image_side,
                              0.22 * image_side, 0.375 * image_side);
}

Image render(const Scene& scene) {
  Image img = Image::filled(scene.side, scene.side, background_rgb(scene.background_id));
  for (const ObjectSpec& obj : scene.distractors) draw_object(img, obj);
  for (const ObjectSpec& obj : scene.objects) draw_object(img, obj);
  return img;
}

Dataset gen_dataset(const DatasetConfig& cfg_in) {
  DatasetConfig cfg = cfg_in;
  cfg.apply_defaults();
  cfg.validate();

  Dataset ds;
  ds.config = cfg;
  const struct {
    Split split;
    int count;
    const std::vector<int>* pool;
  } parts[] = {
      {Split::train, cfg.n_scenes, &cfg.seen_categories},
      {Split::test_seen, cfg.test_seen_count(), &cfg.seen_categories},
      {Split::test_unseen, cfg.test_unseen_count(), &cfg.unseen_categories},
  };
  for (const auto& part : parts) {
    if (part.count > 0 && part.pool->empty()) {
      throw std::invalid_argument("gen_dataset: empty category pool for a requested split");
    }
    for (int i = 0; i < part.count; ++i) {
      ds.scenes.push_back(gen_scene(cfg, part.split, i, *part.pool));
    }
  }
  return ds;
}

Instruction instruction_of(const ObjectSpec& obj) {
  return {2 * obj.category_id, 2 * obj.category_id + 1};
}

int condition_count() { return 2 * kNumCategories; }

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw std::runtime_error("save_dataset: cannot open manifest");
  char name[32];
  for (size_t i = 0; i < ds.scenes.size(); ++i) {
    const Scene& scene = ds.scenes[i];
    std::snprintf(name, sizeof(name), "scene_%05zu.ppm", i);
    write_ppm(scene.image, dir / name);

    nlohmann::json objects = nlohmann::json::array();
    for (const ObjectSpec& obj : scene.objects) {
      nlohmann::json grasps = nlohmann::json::array();
      for (const GraspRect& g : obj.grasps) {
        grasps.push_back({g.x, g.y, g.w, g.h, g.theta});
      }
      objects.push_back({
          {"category", obj.category_id},
          {"color", obj.color_id},
          {"shape", shape_name(obj.shape)},
          {"bbox", {obj.bbox.x_min, obj.bbox.y_min, obj.bbox.x_max, obj.bbox.y_max}},
          {"grasps", grasps},
      });
    }
    const nlohmann::json row = {
        {"image", name},
        {"split", split_name(scene.split)},
        {"background_id", scene.background_id},
        {"objects", objects},
    };
    manifest << row.dump() << "\n";
  }
  if (!manifest) throw std::runtime_error("save_dataset: manifest write failed");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) {
    throw std::runtime_error("load_dataset: cannot open " + (dir / "manifest.jsonl").string());
  }
  Dataset ds;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const nlohmann::json row = nlohmann::json::parse(line);
    Scene scene;
    scene.image = read_ppm(dir / row.at("image").get<std::string>());
    scene.side = scene.image.width;
    scene.split = split_from_name(row.at("split").get<std::string>());
    scene.background_id = row.at("background_id").get<int>();
    for (const auto& jobj : row.at("objects")) {
      ObjectSpec obj;
      obj.category_id = jobj.at("category").get<int>();
      obj.color_id = jobj.at("color").get<int>();
      obj.shape = shape_from_name(jobj.at("shape").get<std::string>());
      const auto& bb = jobj.at("bbox");
      obj.bbox = AxisBox(bb.at(0).get<double>(), bb.at(1).get<double>(),
                         bb.at(2).get<double>(), bb.at(3).get<double>());
      obj.center = obj.bbox.center();  // pose fields are not serialized
      for (const auto& jg : jobj.at("grasps")) {
        obj.grasps.emplace_back(jg.at(0).get<double>(), jg.at(1).get<double>(),
                                jg.at(2).get<double>(), jg.at(3).get<double>(),
                                jg.at(4).get<double>());
      }
      scene.objects.push_back(std::move(obj));
    }
    ds.scenes.push_back(std::move(scene));
  }
  if (!ds.scenes.empty()) ds.config.image_side = ds.scenes.front().side;
  ds.config.n_scenes = 0;
  for (const Scene& s : ds.scenes) {
    if (s.split == Split::train) ds.config.n_scenes++;
  }
  return ds;
}

}  // namespace graspbench
