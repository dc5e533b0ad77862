#pragma once

#include <array>
#include <span>

namespace graspbench {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

// Normalizes an angle in degrees into [0, 180).
double normalize_angle_deg(double deg);

/// Oriented grasp rectangle in pixel coordinates.
///
/// Coordinates are (column, row) with the row axis pointing down; theta
/// rotates from +column toward +row. w is the gripper opening width along
/// the rectangle's long direction, h the finger width across it.
struct GraspRect {
  double x, y;    // center
  double w, h;    // opening width, finger width; both > 0
  double theta;   // degrees, normalized to [0, 180)

  GraspRect(double x, double y, double w, double h, double theta_deg);
};

/// Axis-aligned box, x_min < x_max and y_min < y_max.
struct AxisBox {
  double x_min, y_min, x_max, y_max;

  AxisBox(double x_min, double y_min, double x_max, double y_max);
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  Vec2 center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }
};

/// Convex quadrilateral ordered so the signed shoelace area is positive.
struct Quad {
  std::array<Vec2, 4> pts;
};

Quad corners(const GraspRect& g);
double quad_area(const Quad& q);

// Area of the intersection of two convex quads (Sutherland-Hodgman clipping
// followed by the shoelace formula). 0 for disjoint inputs.
double polygon_intersection_area(const Quad& a, const Quad& b);

// Rotated-rectangle IoU in [0, 1]. Exactly symmetric in its arguments.
double rect_iou(const GraspRect& a, const GraspRect& b);

double axis_iou(const AxisBox& a, const AxisBox& b);

// Minimal deviation between two gripper orientations, in [0, 90] degrees.
double angle_delta(double t1_deg, double t2_deg);

// True iff some ground-truth grasp has rect_iou strictly above iou_thresh
// and orientation deviation within angle_thresh_deg (inclusive).
// Throws std::invalid_argument when truths is empty.
bool grasp_success(const GraspRect& pred, std::span<const GraspRect> truths,
                   double iou_thresh = 0.25, double angle_thresh_deg = 30.0);

// Independent IoU estimate from point-in-rectangle tests over a grid x grid
// lattice covering the pair's axis-aligned hull. Shares no code with
// rect_iou; used to cross-check the clipping path. grid must be >= 64.
double raster_iou_oracle(const GraspRect& a, const GraspRect& b, int grid = 1024);

}  // namespace graspbench
