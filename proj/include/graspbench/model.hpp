#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "graspbench/codec.hpp"
#include "graspbench/image.hpp"
#include "graspbench/tensor.hpp"
#include "graspbench/vcot.hpp"

namespace graspbench {

enum class HeadKind { token, regression };

const char* head_name(HeadKind k);
HeadKind head_from_name(const std::string& name);

struct ModelConfig {
  int image_side = 64;
  int patch = 8;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int mlp_ratio = 4;
  int n_bins = 1024;
  int n_conditions = 48;  // categories x 2 task flags
  HeadKind head_kind = HeadKind::token;
  int grasp_slots = 5;
  int box_slots = 4;
  uint64_t seed = 0;

  int n_patches() const {
    const int per_side = image_side / patch;
    return per_side * per_side;
  }
  int patch_dim() const { return patch * patch * 3; }
  int d_mlp() const { return d_model * mlp_ratio; }

  void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Per-block weights. Linear weights are stored [in, out].
struct BlockParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

struct ModelParams {
  ModelConfig config;
  Tensor patch_w, patch_b;  // [patch_dim, d], [d]
  Tensor pos_emb;           // [n_patches, d]
  Tensor cond_emb;          // [n_conditions, d]; zero-initialized so unseen
                            // conditions act as "no instruction"
  Tensor query_emb;         // [box_slots + grasp_slots, d]; box slots first
  std::vector<BlockParams> blocks;
  Tensor lm_w, lm_b;        // [d, n_bins]; zero-initialized (uniform logits)
  Tensor reg_w1, reg_b1;    // [d, d]
  Tensor reg_w2, reg_b2;    // [d, 1]; zero-initialized

  static ModelParams zeros(const ModelConfig& cfg);
  static ModelParams init(const ModelConfig& cfg);  // seeded from cfg.seed

  // Stable declaration-order enumeration; drives init, the optimizer,
  // checkpoints and gradient checks.
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
};

enum class QuerySet { box, grasp };

// Patch tokens for one image: flatten each patch (pixels scaled to [0,1]),
// apply the shared linear map, add positional embeddings.
Tensor patch_embed(const ModelParams& params, const Image& image);

// Full encoder pass over concat(token_sets) ++ condition ++ query slots;
// returns the final-layer states of the query slots, [slots, d].
Tensor encoder_forward(const ModelParams& params,
                       const std::vector<Tensor>& token_sets, int condition,
                       QuerySet queries);

struct StageOut {
  Tensor logits;  // [slots, n_bins]; box output, or grasp output (token head)
  Tensor values;  // [grasp_slots]; grasp output after the logistic squash
  int seq_len = 0;
};

StageOut stage1_forward(const ModelParams& params, const Image& image,
                        int condition);
StageOut stage2_forward(const ModelParams& params, const Image& full,
                        const Image* crop, int condition);

struct GraspTarget {
  GraspTokens tokens;
  std::array<double, 5> norm{};  // codec-normalized values for the L1 head
};

// L_g + lambda * L_b; cross-entropies are means over slots, the regression
// loss is the mean absolute error over the 5 normalized dimensions.
double loss_total(const StageOut& stage1, const StageOut& stage2,
                  const BoxTokens& box_target, const GraspTarget& grasp_target,
                  double lambda, HeadKind head);

/// One (scene, target object) pair, fully preprocessed.
struct TrainExample {
  Image full;
  Image crop;  // meaningful iff has_crop
  bool has_crop = false;
  int detect_cond = 0;
  int grasp_cond = 0;
  BoxTokens box_target;
  GraspTarget grasp_target;
};

double batch_loss(const ModelParams& params,
                  std::span<const TrainExample> batch, double lambda);

struct BackwardResult {
  double loss = 0.0;
  ModelParams grads;
};

// Analytic gradients of the mean batch loss w.r.t. every parameter.
// Throws std::runtime_error naming the tensor if a gradient is non-finite.
BackwardResult backward(const ModelParams& params,
                        std::span<const TrainExample> batch, double lambda);

struct GradCheckEntry {
  std::string tensor;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  int n_checked = 0;
  double max_rel_err = 0.0;
  bool pass = false;
  GradCheckEntry worst;
};

// Central finite differences against the analytic path on a random batch.
// Checks at least one coordinate of every tensor plus extra random draws
// until min_coords is reached. rel_err uses max(|a|, |fd|, 1e-3) as the
// denominator so near-zero gradients do not amplify FD noise.
GradCheckReport grad_check(const ModelConfig& cfg, uint64_t seed,
                           int min_coords = 200, double eps = 1e-5,
                           double tol = 1e-5);

/// Bridges trained parameters to the two-turn pipeline. Argmax decoding for
/// the token head, logistic denormalization for the regression head.
class NetPolicy final : public GraspPolicy {
 public:
  NetPolicy(const ModelParams& params, PipelineMode mode)
      : params_(&params), mode_(mode) {}

  BoxTokens predict_box(const Image& full, int detect_cond) const override;
  GraspRect predict_grasp(const Image& full, const Image* crop,
                          int grasp_cond) const override;

 private:
  const ModelParams* params_;
  PipelineMode mode_;
};

}  // namespace graspbench
