#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "graspbench/geometry.hpp"
#include "graspbench/rng.hpp"

using namespace graspbench;

namespace {

// Matches a corner set against expected points up to cyclic order/reversal.
bool same_corner_set(const Quad& q, const std::vector<Vec2>& expected) {
  for (const Vec2& e : expected) {
    bool found = false;
    for (const Vec2& p : q.pts) {
      if (std::abs(p.x - e.x) < 1e-9 && std::abs(p.y - e.y) < 1e-9) {
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

GraspRect random_rect(Rng& rng) {
  return GraspRect(rng.uniform(0.0, 64.0), rng.uniform(0.0, 64.0),
                   rng.uniform(2.0, 30.0), rng.uniform(2.0, 30.0),
                   rng.uniform(0.0, 180.0));
}

}  // namespace

TEST_CASE("corner formula on an axis-aligned square") {
  const Quad q = corners(GraspRect(0, 0, 2, 2, 0));
  CHECK(same_corner_set(q, {{1, 1}, {-1, 1}, {-1, -1}, {1, -1}}));
  // positive shoelace orientation
  CHECK(quad_area(q) == doctest::Approx(4.0));
}

TEST_CASE("corner formula at 90 degrees swaps the extents") {
  const Quad q = corners(GraspRect(5, 5, 4, 2, 90));
  double x0 = 1e9, x1 = -1e9, y0 = 1e9, y1 = -1e9;
  for (const Vec2& p : q.pts) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  CHECK(x0 == doctest::Approx(4.0));
  CHECK(x1 == doctest::Approx(6.0));
  CHECK(y0 == doctest::Approx(3.0));
  CHECK(y1 == doctest::Approx(7.0));
}

TEST_CASE("theta and theta+180 give the same rectangle") {
  const Quad a = corners(GraspRect(3, 4, 5, 2, 30));
  const Quad b = corners(GraspRect(3, 4, 5, 2, 210));
  CHECK(same_corner_set(a, {b.pts[0], b.pts[1], b.pts[2], b.pts[3]}));
}

TEST_CASE("rect construction validates") {
  CHECK_THROWS_AS(GraspRect(0, 0, 0, 2, 0), std::invalid_argument);
  CHECK_THROWS_AS(GraspRect(0, 0, 2, -1, 0), std::invalid_argument);
  CHECK_THROWS_AS(GraspRect(std::nan(""), 0, 2, 2, 0), std::invalid_argument);
  CHECK(GraspRect(0, 0, 1, 1, -30).theta == doctest::Approx(150.0));
  CHECK(GraspRect(0, 0, 1, 1, 360.0).theta == doctest::Approx(0.0));
}

TEST_CASE("polygon intersection of identical unit squares") {
  const Quad q = corners(GraspRect(0.5, 0.5, 1, 1, 0));
  CHECK(polygon_intersection_area(q, q) == doctest::Approx(1.0));
}

TEST_CASE("polygon intersection of disjoint squares is zero") {
  const Quad a = corners(GraspRect(0, 0, 1, 1, 0));
  const Quad b = corners(GraspRect(2, 0, 1, 1, 0));
  CHECK(polygon_intersection_area(a, b) == 0.0);
}

TEST_CASE("polygon intersection of offset squares") {
  const Quad a = corners(GraspRect(1, 1, 2, 2, 0));  // [0,2]^2
  const Quad b = corners(GraspRect(2, 2, 2, 2, 0));  // [1,3]^2
  CHECK(polygon_intersection_area(a, b) == doctest::Approx(1.0));
}

TEST_CASE("rect_iou basics") {
  const GraspRect g(3, 4, 6, 2, 25);
  CHECK(rect_iou(g, g) == doctest::Approx(1.0).epsilon(1e-12));

  const GraspRect a(0, 0, 4, 2, 0);
  const GraspRect b(1, 0, 4, 2, 0);
  CHECK(rect_iou(a, b) == doctest::Approx(0.6));

  // square rotated 90 degrees about its own center is the same square
  const GraspRect sq(5, 5, 3, 3, 0);
  const GraspRect sq90(5, 5, 3, 3, 90);
  CHECK(rect_iou(sq, sq90) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("rect_iou is exactly symmetric") {
  Rng rng(2024);
  for (int i = 0; i < 200; ++i) {
    const GraspRect a = random_rect(rng);
    const GraspRect b = random_rect(rng);
    CHECK(rect_iou(a, b) == rect_iou(b, a));  // identical code path
  }
}

TEST_CASE("rect_iou bounds and intersection cap") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const GraspRect a = random_rect(rng);
    const GraspRect b = random_rect(rng);
    const double iou = rect_iou(a, b);
    CHECK(iou >= 0.0);
    CHECK(iou <= 1.0);
    const double inter = polygon_intersection_area(corners(a), corners(b));
    CHECK(inter <= std::min(a.w * a.h, b.w * b.h) + 1e-9);
  }
}

TEST_CASE("rect_iou is similarity invariant") {
  Rng rng(99);
  for (int i = 0; i < 200; ++i) {
    const GraspRect a = random_rect(rng);
    const GraspRect b = random_rect(rng);
    const double iou = rect_iou(a, b);

    const double rot = rng.uniform(0.0, 180.0);
    const double s = rng.uniform(0.5, 2.0);
    const double tx = rng.uniform(-20.0, 20.0), ty = rng.uniform(-20.0, 20.0);
    const double cr = std::cos(rot * 3.14159265358979323846 / 180.0);
    const double sr = std::sin(rot * 3.14159265358979323846 / 180.0);
    auto transform = [&](const GraspRect& g) {
      const double x = (g.x * cr - g.y * sr) * s + tx;
      const double y = (g.x * sr + g.y * cr) * s + ty;
      return GraspRect(x, y, g.w * s, g.h * s, g.theta + rot);
    };
    CHECK(rect_iou(transform(a), transform(b)) == doctest::Approx(iou).epsilon(1e-9));
  }
}

TEST_CASE("axis_iou") {
  const AxisBox a(0, 0, 2, 2);
  CHECK(axis_iou(a, a) == doctest::Approx(1.0));
  CHECK(axis_iou(a, AxisBox(5, 5, 6, 6)) == 0.0);
  CHECK(axis_iou(a, AxisBox(1, 1, 3, 3)) == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("angle_delta") {
  CHECK(angle_delta(10, 170) == doctest::Approx(20.0));
  CHECK(angle_delta(42.5, 42.5) == 0.0);
  CHECK(angle_delta(0, 90) == doctest::Approx(90.0));
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    const double t1 = rng.uniform(-720.0, 720.0);
    const double t2 = rng.uniform(-720.0, 720.0);
    const double d = angle_delta(t1, t2);
    CHECK(d >= 0.0);
    CHECK(d <= 90.0);
    CHECK(d == doctest::Approx(angle_delta(t2, t1)));
    const int k = rng.uniform_int(5) - 2;
    CHECK(angle_delta(t1, t1 + 180.0 * k) == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("grasp_success thresholds") {
  const GraspRect truth(10, 10, 8, 4, 20);
  const std::vector<GraspRect> truths{truth};

  CHECK(grasp_success(truth, truths));

  // high IoU but 45 degree deviation fails the angle bound
  const GraspRect square(10, 10, 6, 6, 0);
  const GraspRect square45(10, 10, 6, 6, 45);
  CHECK(rect_iou(square, square45) > 0.25);
  CHECK_FALSE(grasp_success(square45, std::vector<GraspRect>{square}));

  // IoU exactly 0.25 fails the strict inequality; all values dyadic
  const GraspRect a(0, 0, 5, 2, 0);
  const GraspRect shifted(3, 0, 5, 2, 0);
  CHECK(rect_iou(a, shifted) == 0.25);
  CHECK_FALSE(grasp_success(shifted, std::vector<GraspRect>{a}));

  // angle deviation of exactly 30 degrees is inclusive
  const GraspRect rot30(10, 10, 6, 6, 30);
  CHECK(grasp_success(rot30, std::vector<GraspRect>{square}));

  CHECK_THROWS_AS(grasp_success(truth, std::vector<GraspRect>{}), std::invalid_argument);
}

TEST_CASE("raster oracle endpoints") {
  const GraspRect g(8, 9, 10, 4, 77);
  CHECK(raster_iou_oracle(g, g, 128) == doctest::Approx(1.0));
  const GraspRect far(200, 200, 4, 4, 0);
  CHECK(raster_iou_oracle(g, far, 128) == 0.0);
  CHECK_THROWS_AS(raster_iou_oracle(g, g, 32), std::invalid_argument);
}

TEST_CASE("clipping path agrees with the rasterization oracle") {
  // The acceptance suite runs the full 1000-pair grid=1024 version; this is
  // the fast everyday variant.
  Rng rng(515);
  double max_err = 0.0;
  for (int i = 0; i < 200; ++i) {
    const GraspRect a = random_rect(rng);
    const GraspRect b = random_rect(rng);
    const double err = std::abs(rect_iou(a, b) - raster_iou_oracle(a, b, 256));
    max_err = std::max(max_err, err);
  }
  CHECK(max_err <= 0.02);
}
