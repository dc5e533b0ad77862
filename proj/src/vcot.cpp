#include "graspbench/vcot.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace graspbench {

CropSpec square_expand(const AxisBox& b, double img_w, double img_h,
                       double margin, int out_side) {
  if (img_w <= 0.0 || img_h <= 0.0) {
    throw std::invalid_argument("square_expand: image dimensions must be positive");
  }
  if (out_side <= 0) {
    throw std::invalid_argument("square_expand: out_side must be positive");
  }
  if (b.x_max <= 0.0 || b.x_min >= img_w || b.y_max <= 0.0 || b.y_min >= img_h) {
    throw std::invalid_argument("square_expand: box does not intersect the image");
  }

  double side = std::max(b.width(), b.height()) * (1.0 + margin);
  if (side <= 0.0) side = 8.0;  // zero-extent box
  side = std::min(side, std::min(img_w, img_h));

  const Vec2 c = b.center();
  CropSpec spec;
  spec.side = side;
  spec.out_side = out_side;
  spec.x0 = std::clamp(c.x - 0.5 * side, 0.0, img_w - side);
  spec.y0 = std::clamp(c.y - 0.5 * side, 0.0, img_h - side);
  return spec;
}

Image crop_resize(const Image& src, const CropSpec& spec) {
  if (spec.side <= 0.0 || spec.out_side <= 0) {
    throw std::invalid_argument("crop_resize: invalid crop spec");
  }
  if (spec.x0 < 0.0 || spec.y0 < 0.0 || spec.x0 + spec.side > src.width + 1e-9 ||
      spec.y0 + spec.side > src.height + 1e-9) {
    throw std::invalid_argument("crop_resize: crop window outside the image");
  }

  Image out(spec.out_side, spec.out_side, src.channels);
  const double step = spec.side / spec.out_side;
  for (int oy = 0; oy < spec.out_side; ++oy) {
    // Pixel centers map to pixel centers: sampling the whole image at its
    // own resolution reproduces it exactly.
    const double sy = spec.y0 + (oy + 0.5) * step - 0.5;
    const int y0i = std::clamp(static_cast<int>(std::floor(sy)), 0, src.height - 1);
    const int y1i = std::min(y0i + 1, src.height - 1);
    const double fy = std::clamp(sy - y0i, 0.0, 1.0);
    for (int ox = 0; ox < spec.out_side; ++ox) {
      const double sx = spec.x0 + (ox + 0.5) * step - 0.5;
      const int x0i = std::clamp(static_cast<int>(std::floor(sx)), 0, src.width - 1);
      const int x1i = std::min(x0i + 1, src.width - 1);
      const double fx = std::clamp(sx - x0i, 0.0, 1.0);
      for (int c = 0; c < src.channels; ++c) {
        const double top = src.at(x0i, y0i, c) * (1.0 - fx) + src.at(x1i, y0i, c) * fx;
        const double bot = src.at(x0i, y1i, c) * (1.0 - fx) + src.at(x1i, y1i, c) * fx;
        const double val = top * (1.0 - fy) + bot * fy;
        out.at(ox, oy, c) = static_cast<uint8_t>(std::lround(std::clamp(val, 0.0, 255.0)));
      }
    }
  }
  return out;
}

GraspRect to_crop_frame(const GraspRect& g, const CropSpec& spec) {
  const double s = spec.scale();
  return GraspRect((g.x - spec.x0) * s, (g.y - spec.y0) * s, g.w * s, g.h * s, g.theta);
}

GraspRect from_crop_frame(const GraspRect& g, const CropSpec& spec) {
  const double s = spec.scale();
  return GraspRect(g.x / s + spec.x0, g.y / s + spec.y0, g.w / s, g.h / s, g.theta);
}

PipelineResult run_pipeline(const GraspPolicy& policy, const Image& image,
                            const Instruction& instr, PipelineMode mode,
                            double margin) {
  if (mode == PipelineMode::single_turn) {
    return {policy.predict_grasp(image, nullptr, instr.grasp_id), std::nullopt};
  }
  const BoxTokens tokens = policy.predict_box(image, instr.detect_id);
  const AxisBox box = decode_box(tokens, image.width, image.height);
  const CropSpec spec = square_expand(box, image.width, image.height, margin,
                                      /*out_side=*/image.width);
  const Image crop = crop_resize(image, spec);
  const GraspRect in_crop = policy.predict_grasp(image, &crop, instr.grasp_id);
  return {from_crop_frame(in_crop, spec), box};
}

}  // namespace graspbench
