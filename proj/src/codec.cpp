#include "graspbench/codec.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace graspbench {

namespace {

int encode_value(double v, double range) {
  if (!std::isfinite(v) || !std::isfinite(range) || range <= 0.0) {
    throw std::invalid_argument("codec: non-finite or non-positive input");
  }
  const int bin = static_cast<int>(std::floor(v / range * kNumBins));
  return std::clamp(bin, 0, kNumBins - 1);
}

double decode_value(int bin, double range) {
  if (bin < 0 || bin >= kNumBins) {
    throw std::invalid_argument("codec: bin out of range");
  }
  return (bin + 0.5) / kNumBins * range;
}

// Smallest decodable value >= 1 px, i.e. the center of the first bin whose
// center reaches one pixel. Flooring to a bin center (rather than to 1.0
// exactly) keeps decode(encode(decode(t))) == decode(t) on all of token
// space.
double min_extent(double range) {
  const int b = std::clamp(
      static_cast<int>(std::ceil(kNumBins / range - 0.5)), 0, kNumBins - 1);
  return decode_value(b, range);
}

}  // namespace

GraspTokens encode_grasp(const GraspRect& g, double img_w, double img_h) {
  if (img_w <= 0.0 || img_h <= 0.0) {
    throw std::invalid_argument("encode_grasp: image dimensions must be positive");
  }
  GraspTokens t;
  t.bins[0] = encode_value(g.x, img_w);
  t.bins[1] = encode_value(g.y, img_h);
  t.bins[2] = encode_value(g.w, img_w);
  t.bins[3] = encode_value(g.h, img_h);
  t.bins[4] = encode_value(g.theta, kAngleRange);
  return t;
}

GraspRect decode_grasp(const GraspTokens& t, double img_w, double img_h) {
  if (img_w <= 0.0 || img_h <= 0.0) {
    throw std::invalid_argument("decode_grasp: image dimensions must be positive");
  }
  const double x = decode_value(t.bins[0], img_w);
  const double y = decode_value(t.bins[1], img_h);
  const double w = std::max(decode_value(t.bins[2], img_w), min_extent(img_w));
  const double h = std::max(decode_value(t.bins[3], img_h), min_extent(img_h));
  const double theta = decode_value(t.bins[4], kAngleRange);
  return GraspRect(x, y, w, h, theta);
}

BoxTokens encode_box(const AxisBox& b, double img_w, double img_h) {
  if (img_w <= 0.0 || img_h <= 0.0) {
    throw std::invalid_argument("encode_box: image dimensions must be positive");
  }
  BoxTokens t;
  t.bins[0] = encode_value(b.x_min, img_w);
  t.bins[1] = encode_value(b.y_min, img_h);
  t.bins[2] = encode_value(b.x_max, img_w);
  t.bins[3] = encode_value(b.y_max, img_h);
  return t;
}

AxisBox decode_box(const BoxTokens& t, double img_w, double img_h) {
  if (img_w <= 0.0 || img_h <= 0.0) {
    throw std::invalid_argument("decode_box: image dimensions must be positive");
  }
  double x_lo = decode_value(std::min(t.bins[0], t.bins[2]), img_w);
  double x_hi = decode_value(std::max(t.bins[0], t.bins[2]), img_w);
  double y_lo = decode_value(std::min(t.bins[1], t.bins[3]), img_h);
  double y_hi = decode_value(std::max(t.bins[1], t.bins[3]), img_h);
  if (x_hi <= x_lo) x_hi = x_lo + img_w / kNumBins;
  if (y_hi <= y_lo) y_hi = y_lo + img_h / kNumBins;
  return AxisBox(x_lo, y_lo, x_hi, y_hi);
}

}  // namespace graspbench
