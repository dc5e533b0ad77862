#include "graspbench/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace graspbench {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;

// Points within this signed distance of a clip edge count as inside, so
// shared edges do not shed slivers.
constexpr double kEdgeEps = 1e-9;

struct RectFrame {
  Vec2 c;
  Vec2 u;   // long axis
  Vec2 v;   // finger axis
  double hw, hh;
};

RectFrame frame_of(const GraspRect& g) {
  const double t = g.theta * kDegToRad;
  const double ct = std::cos(t), st = std::sin(t);
  return {{g.x, g.y}, {ct, st}, {-st, ct}, 0.5 * g.w, 0.5 * g.h};
}

}  // namespace

double normalize_angle_deg(double deg) {
  double t = std::fmod(deg, 180.0);
  if (t < 0.0) t += 180.0;
  if (t >= 180.0) t -= 180.0;
  return t;
}

GraspRect::GraspRect(double x_, double y_, double w_, double h_, double theta_deg)
    : x(x_), y(y_), w(w_), h(h_), theta(0.0) {
  if (!std::isfinite(x_) || !std::isfinite(y_) || !std::isfinite(w_) ||
      !std::isfinite(h_) || !std::isfinite(theta_deg)) {
    throw std::invalid_argument("GraspRect: non-finite field");
  }
  if (w_ <= 0.0 || h_ <= 0.0) {
    throw std::invalid_argument("GraspRect: w and h must be positive");
  }
  theta = normalize_angle_deg(theta_deg);
}

AxisBox::AxisBox(double x_min_, double y_min_, double x_max_, double y_max_)
    : x_min(x_min_), y_min(y_min_), x_max(x_max_), y_max(y_max_) {
  if (!(x_min < x_max) || !(y_min < y_max)) {
    throw std::invalid_argument("AxisBox: requires x_min < x_max and y_min < y_max");
  }
}

Quad corners(const GraspRect& g) {
  const RectFrame f = frame_of(g);
  const Vec2 eu = f.u * f.hw;
  const Vec2 ev = f.v * f.hh;
  // Positive-shoelace order; the rotation [u v] has determinant +1, so the
  // orientation is independent of theta.
  return Quad{{f.c + eu + ev, f.c - eu + ev, f.c - eu - ev, f.c + eu - ev}};
}

double quad_area(const Quad& q) {
  double s = 0.0;
  for (int i = 0; i < 4; ++i) {
    s += cross(q.pts[i], q.pts[(i + 1) % 4]);
  }
  return 0.5 * std::abs(s);
}

namespace {

// One Sutherland-Hodgman pass: keep the part of `subject` on the interior
// side of the directed edge a->b of a positively oriented clip polygon.
void clip_against_edge(const std::vector<Vec2>& subject, Vec2 a, Vec2 b,
                       std::vector<Vec2>& out) {
  out.clear();
  const Vec2 e = b - a;
  const double elen = std::sqrt(dot(e, e));
  if (elen <= 0.0) {
    out = subject;
    return;
  }
  const double inv = 1.0 / elen;
  const size_t n = subject.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2 p = subject[i];
    const Vec2 q = subject[(i + 1) % n];
    const double dp = cross(e, p - a) * inv;  // signed distance, > 0 inside
    const double dq = cross(e, q - a) * inv;
    const bool in_p = dp >= -kEdgeEps;
    const bool in_q = dq >= -kEdgeEps;
    if (in_p) out.push_back(p);
    if (in_p != in_q) {
      const double t = dp / (dp - dq);
      out.push_back(p + (q - p) * t);
    }
  }
}

}  // namespace

double polygon_intersection_area(const Quad& a, const Quad& b) {
  std::vector<Vec2> poly(a.pts.begin(), a.pts.end());
  std::vector<Vec2> next;
  poly.reserve(16);
  next.reserve(16);
  for (int i = 0; i < 4 && !poly.empty(); ++i) {
    clip_against_edge(poly, b.pts[i], b.pts[(i + 1) % 4], next);
    poly.swap(next);
  }
  if (poly.size() < 3) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    s += cross(poly[i], poly[(i + 1) % poly.size()]);
  }
  return std::max(0.0, 0.5 * s);
}

double rect_iou(const GraspRect& a, const GraspRect& b) {
  // Order the pair canonically so commuted arguments run the identical
  // sequence of operations and agree bit-for-bit.
  const auto ka = std::make_tuple(a.x, a.y, a.w, a.h, a.theta);
  const auto kb = std::make_tuple(b.x, b.y, b.w, b.h, b.theta);
  const GraspRect& p = (ka <= kb) ? a : b;
  const GraspRect& q = (ka <= kb) ? b : a;

  const Quad qp = corners(p);
  const Quad qq = corners(q);
  const double inter = polygon_intersection_area(qp, qq);
  const double uni = quad_area(qp) + quad_area(qq) - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double axis_iou(const AxisBox& a, const AxisBox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

double angle_delta(double t1_deg, double t2_deg) {
  const double d = std::fmod(std::abs(t1_deg - t2_deg), 180.0);
  return std::min(d, 180.0 - d);
}

bool grasp_success(const GraspRect& pred, std::span<const GraspRect> truths,
                   double iou_thresh, double angle_thresh_deg) {
  if (truths.empty()) {
    throw std::invalid_argument("grasp_success: no ground truth");
  }
  for (const GraspRect& t : truths) {
    if (rect_iou(pred, t) > iou_thresh &&
        angle_delta(pred.theta, t.theta) <= angle_thresh_deg) {
      return true;
    }
  }
  return false;
}

double raster_iou_oracle(const GraspRect& a, const GraspRect& b, int grid) {
  if (grid < 64) throw std::invalid_argument("raster_iou_oracle: grid must be >= 64");

  const Quad qa = corners(a);
  const Quad qb = corners(b);
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0;
  double y0 = x0, y1 = -x0;
  for (const Quad* q : {&qa, &qb}) {
    for (const Vec2& p : q->pts) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
  }
  const double sx = (x1 - x0) / grid;
  const double sy = (y1 - y0) / grid;

  const RectFrame fa = frame_of(a);
  const RectFrame fb = frame_of(b);
  int64_t in_both = 0;
  int64_t in_any = 0;
  for (int iy = 0; iy < grid; ++iy) {
    const double py = y0 + (iy + 0.5) * sy;
    const double ay = py - fa.c.y;
    const double by = py - fb.c.y;
    // Hoist the row-dependent terms; the inner loop is branch-free.
    const double au_y = ay * fa.u.y, av_y = ay * fa.v.y;
    const double bu_y = by * fb.u.y, bv_y = by * fb.v.y;
    for (int ix = 0; ix < grid; ++ix) {
      const double px = x0 + (ix + 0.5) * sx;
      const double ax = px - fa.c.x;
      const double bx = px - fb.c.x;
      const bool ina = std::abs(ax * fa.u.x + au_y) <= fa.hw &&
                       std::abs(ax * fa.v.x + av_y) <= fa.hh;
      const bool inb = std::abs(bx * fb.u.x + bu_y) <= fb.hw &&
                       std::abs(bx * fb.v.x + bv_y) <= fb.hh;
      in_both += (ina && inb) ? 1 : 0;
      in_any += (ina || inb) ? 1 : 0;
    }
  }
  if (in_any == 0) return 0.0;
  return static_cast<double>(in_both) / static_cast<double>(in_any);
}

}  // namespace graspbench
