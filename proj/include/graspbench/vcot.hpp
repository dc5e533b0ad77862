#pragma once

#include <optional>

#include "graspbench/codec.hpp"
#include "graspbench/geometry.hpp"
#include "graspbench/image.hpp"

namespace graspbench {

/// Square crop window in the source frame plus the side of the resized
/// output. After construction via square_expand the window lies fully
/// inside the source image.
struct CropSpec {
  double x0 = 0.0;
  double y0 = 0.0;
  double side = 0.0;
  int out_side = 0;

  double scale() const { return out_side / side; }
};

// Expands an axis box to a square window with a relative margin, clamped to
// stay inside the image (translated, never shrunk below the expanded side,
// except by the image's shorter dimension). Zero-extent boxes fall back to
// an 8 px window.
CropSpec square_expand(const AxisBox& b, double img_w, double img_h,
                       double margin = 0.1, int out_side = 64);

// Deterministic bilinear crop-and-resize to out_side x out_side.
Image crop_resize(const Image& src, const CropSpec& spec);

// Maps a grasp between the source frame and the crop's output frame.
// Uniform scaling: theta is preserved exactly.
GraspRect to_crop_frame(const GraspRect& g, const CropSpec& spec);
GraspRect from_crop_frame(const GraspRect& g, const CropSpec& spec);

/// Condition identifiers for the two turn types of one target category.
struct Instruction {
  int detect_id = 0;
  int grasp_id = 0;
};

enum class PipelineMode { vcot, single_turn };

/// What a trained model must expose to drive the pipeline. Grasp
/// predictions are in the frame of the most-zoomed image handed in (the
/// crop when present, the full image otherwise).
class GraspPolicy {
 public:
  virtual ~GraspPolicy() = default;
  virtual BoxTokens predict_box(const Image& full, int detect_cond) const = 0;
  virtual GraspRect predict_grasp(const Image& full, const Image* crop,
                                  int grasp_cond) const = 0;
};

struct PipelineResult {
  GraspRect grasp;
  std::optional<AxisBox> box;  // absent in single_turn mode
};

// Two-turn inference: predict the target's box, zoom into it, predict the
// grasp in the crop frame and map it back. single_turn skips localization
// and the crop entirely. The crop output side equals the input resolution.
PipelineResult run_pipeline(const GraspPolicy& policy, const Image& image,
                            const Instruction& instr, PipelineMode mode,
                            double margin = 0.1);

}  // namespace graspbench
