#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "graspbench/codec.hpp"
#include "graspbench/rng.hpp"

using namespace graspbench;

TEST_CASE("encode_grasp bin arithmetic") {
  const GraspRect g(208, 100, 40, 12, 0);
  const GraspTokens t = encode_grasp(g, 416, 416);
  CHECK(t.bins[0] == 512);  // floor(208/416 * 1024)

  CHECK(encode_grasp(GraspRect(1, 1, 1, 1, 0.0), 64, 64).bins[4] == 0);
  CHECK(encode_grasp(GraspRect(1, 1, 1, 1, 179.9), 64, 64).bins[4] == 1023);

  // out-of-frame center clamps to the last bin
  CHECK(encode_grasp(GraspRect(416, 1, 1, 1, 0), 416, 416).bins[0] == 1023);
  CHECK_THROWS_AS(encode_grasp(g, 0, 416), std::invalid_argument);
}

TEST_CASE("decode at bin centers") {
  GraspTokens t{{512, 512, 100, 100, 0}};
  const GraspRect g = decode_grasp(t, 416, 416);
  CHECK(g.x == doctest::Approx(208.203125).epsilon(1e-12));
  CHECK(g.theta == doctest::Approx((0.5 / 1024.0) * 180.0));
}

TEST_CASE("token-space roundtrips") {
  Rng rng(71);
  for (int i = 0; i < 2000; ++i) {
    GraspTokens t;
    for (int& b : t.bins) b = rng.uniform_int(kNumBins);
    const double side = rng.uniform_int(2) == 0 ? 64.0 : 416.0;

    // decode . encode . decode == decode everywhere (w/h low bins collapse
    // onto the one-pixel floor, which is itself a bin center)
    const GraspRect d1 = decode_grasp(t, side, side);
    const GraspTokens t2 = encode_grasp(d1, side, side);
    const GraspRect d2 = decode_grasp(t2, side, side);
    CHECK(d2.x == d1.x);
    CHECK(d2.y == d1.y);
    CHECK(d2.w == d1.w);
    CHECK(d2.h == d1.h);
    CHECK(d2.theta == d1.theta);

    // encode . decode is the identity wherever the floor is inactive
    CHECK(t2.bins[0] == t.bins[0]);
    CHECK(t2.bins[1] == t.bins[1]);
    CHECK(t2.bins[4] == t.bins[4]);
    const int floor_bin = static_cast<int>(std::ceil(kNumBins / side - 0.5));
    if (t.bins[2] >= floor_bin) CHECK(t2.bins[2] == t.bins[2]);
    if (t.bins[3] >= floor_bin) CHECK(t2.bins[3] == t.bins[3]);
  }
}

TEST_CASE("roundtrip quantization error within half a bin") {
  Rng rng(72);
  for (double side : {64.0, 416.0}) {
    const double half_bin = side / 2048.0;
    for (int i = 0; i < 2000; ++i) {
      const GraspRect g(rng.uniform(0.0, side), rng.uniform(0.0, side),
                        rng.uniform(1.0, side / 2), rng.uniform(1.0, side / 2),
                        rng.uniform(0.0, 180.0));
      const GraspRect r = decode_grasp(encode_grasp(g, side, side), side, side);
      CHECK(std::abs(r.x - g.x) <= half_bin);
      CHECK(std::abs(r.y - g.y) <= half_bin);
      CHECK(std::abs(r.w - g.w) <= half_bin);
      CHECK(std::abs(r.h - g.h) <= half_bin);
      CHECK(std::abs(r.theta - g.theta) <= 180.0 / 2048.0);
    }
  }
}

TEST_CASE("encode is monotone per dimension") {
  Rng rng(73);
  for (int i = 0; i < 500; ++i) {
    const double lo = rng.uniform(0.0, 60.0);
    const double hi = lo + rng.uniform(0.0, 4.0);
    const GraspTokens a = encode_grasp(GraspRect(lo, 5, 5, 5, 10), 64, 64);
    const GraspTokens b = encode_grasp(GraspRect(hi, 5, 5, 5, 10), 64, 64);
    CHECK(a.bins[0] <= b.bins[0]);
  }
}

TEST_CASE("box tokens") {
  const BoxTokens full = encode_box(AxisBox(0, 0, 416, 416), 416, 416);
  CHECK(full.bins[0] == 0);
  CHECK(full.bins[1] == 0);
  CHECK(full.bins[2] == 1023);
  CHECK(full.bins[3] == 1023);

  // degenerate tokens expand to a one-bin-wide box
  const AxisBox degen = decode_box(BoxTokens{{100, 200, 100, 200}}, 64, 64);
  CHECK(degen.x_max - degen.x_min == doctest::Approx(64.0 / 1024.0));
  CHECK(degen.y_max - degen.y_min == doctest::Approx(64.0 / 1024.0));

  // inverted tokens are sorted into a valid box
  const AxisBox inv = decode_box(BoxTokens{{900, 800, 100, 200}}, 64, 64);
  CHECK(inv.x_min < inv.x_max);
  CHECK(inv.y_min < inv.y_max);

  Rng rng(74);
  for (int i = 0; i < 1000; ++i) {
    const double x0 = rng.uniform(0.0, 60.0);
    const double y0 = rng.uniform(0.0, 60.0);
    const AxisBox b(x0, y0, x0 + rng.uniform(1.0, 4.0), y0 + rng.uniform(1.0, 4.0));
    const AxisBox r = decode_box(encode_box(b, 64, 64), 64, 64);
    const double half_bin = 64.0 / 2048.0;
    CHECK(std::abs(r.x_min - b.x_min) <= half_bin);
    CHECK(std::abs(r.y_min - b.y_min) <= half_bin);
    CHECK(std::abs(r.x_max - b.x_max) <= half_bin);
    CHECK(std::abs(r.y_max - b.y_max) <= half_bin);
  }
}
