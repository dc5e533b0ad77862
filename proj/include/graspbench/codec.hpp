#pragma once

#include <array>

#include "graspbench/geometry.hpp"

namespace graspbench {

inline constexpr int kNumBins = 1024;
inline constexpr double kAngleRange = 180.0;

/// Discretized grasp: bin indices in [0, 1023], ordered (x, y, w, h, theta).
struct GraspTokens {
  std::array<int, 5> bins{};
};

/// Discretized axis box: bins ordered (x_min, y_min, x_max, y_max).
struct BoxTokens {
  std::array<int, 4> bins{};
};

// x and w normalize by image width, y and h by image height, theta by 180.
// bin = clamp(floor(n * 1024), 0, 1023); decoding returns bin centers.
GraspTokens encode_grasp(const GraspRect& g, double img_w, double img_h);
GraspRect decode_grasp(const GraspTokens& t, double img_w, double img_h);

BoxTokens encode_box(const AxisBox& b, double img_w, double img_h);
// Sorts inverted coordinate pairs and widens degenerate ones by one bin, so
// the result is always a valid AxisBox.
AxisBox decode_box(const BoxTokens& t, double img_w, double img_h);

}  // namespace graspbench
