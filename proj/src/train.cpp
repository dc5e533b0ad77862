#include "graspbench/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "graspbench/rng.hpp"

namespace graspbench {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr char kCheckpointVersion[] = "vcotg-ckpt-1";

bool decays(const std::string& name, const Tensor& t) {
  if (t.shape.size() < 2) return false;
  return name != "pos_emb" && name != "cond_emb" && name != "query_emb";
}

std::array<double, 5> normalized_grasp(const GraspRect& g, double img_w, double img_h) {
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return {clamp01(g.x / img_w), clamp01(g.y / img_h), clamp01(g.w / img_w),
          clamp01(g.h / img_h), g.theta / kAngleRange};
}

constexpr uint64_t kJitterStream = 0x71773E5ULL;

// One (scene, target) example. With a jitter rng the teacher box is shifted
// and rescaled before cropping, so stage 2 learns to locate the grasp inside
// an imperfect window instead of memorizing the centered-crop bias; predicted
// boxes at evaluation are exactly such imperfect windows.
TrainExample make_example(const Scene& scene, const ObjectSpec& obj,
                          const ModelConfig& cfg, PipelineMode mode, double margin,
                          Rng* jitter) {
  const double side = cfg.image_side;
  TrainExample ex;
  ex.full = scene.image;
  const Instruction instr = instruction_of(obj);
  ex.detect_cond = instr.detect_id;
  ex.grasp_cond = instr.grasp_id;
  ex.box_target = encode_box(obj.bbox, side, side);
  const GraspRect& label = obj.grasps.front();
  if (mode == PipelineMode::vcot) {
    AxisBox box = obj.bbox;
    if (jitter != nullptr) {
      const double ext = std::max(box.width(), box.height());
      const double dx = jitter->uniform(-0.12, 0.12) * ext;
      const double dy = jitter->uniform(-0.12, 0.12) * ext;
      const double grow = jitter->uniform(0.9, 1.15);
      const Vec2 c = box.center();
      const double hw = 0.5 * box.width() * grow;
      const double hh = 0.5 * box.height() * grow;
      box = AxisBox(c.x + dx - hw, c.y + dy - hh, c.x + dx + hw, c.y + dy + hh);
    }
    const CropSpec spec = square_expand(box, side, side, margin, cfg.image_side);
    ex.crop = crop_resize(scene.image, spec);
    ex.has_crop = true;
    const GraspRect in_crop = to_crop_frame(label, spec);
    ex.grasp_target.tokens = encode_grasp(in_crop, side, side);
    ex.grasp_target.norm = normalized_grasp(in_crop, side, side);
  } else {
    ex.grasp_target.tokens = encode_grasp(label, side, side);
    ex.grasp_target.norm = normalized_grasp(label, side, side);
  }
  return ex;
}

}  // namespace

void TrainConfig::validate() const {
  if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (warmup_ratio <= 0.0 || warmup_ratio >= 1.0) {
    throw std::invalid_argument("TrainConfig: warmup_ratio must be in (0, 1)");
  }
  if (schedule != "cosine") {
    throw std::invalid_argument("TrainConfig: unknown schedule: " + schedule);
  }
  if (weight_decay < 0.0 || lambda < 0.0) {
    throw std::invalid_argument("TrainConfig: negative weight_decay or lambda");
  }
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {
      {"lr", cfg.lr},
      {"batch", cfg.batch},
      {"epochs", cfg.epochs},
      {"warmup_ratio", cfg.warmup_ratio},
      {"schedule", cfg.schedule},
      {"weight_decay", cfg.weight_decay},
      {"lambda", cfg.lambda},
      {"seed", cfg.seed},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.lr = j.value("lr", cfg.lr);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.warmup_ratio = j.value("warmup_ratio", cfg.warmup_ratio);
  cfg.schedule = j.value("schedule", cfg.schedule);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

double lr_at(int64_t step, int64_t total_steps, double base_lr, double warmup_ratio) {
  if (total_steps <= 0) return 0.0;
  const int64_t warmup =
      std::max<int64_t>(1, std::llround(warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (step >= total_steps) return 0.0;
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total_steps - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

OptState OptState::init(const ModelConfig& cfg) {
  OptState st;
  st.m = ModelParams::zeros(cfg);
  st.v = ModelParams::zeros(cfg);
  st.step = 0;
  return st;
}

void opt_step(ModelParams& params, const ModelParams& grads, OptState& state,
              double lr, double weight_decay) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));

  auto pt = params.named_tensors();
  auto gt = grads.named_tensors();
  auto mt = state.m.named_tensors();
  auto vt = state.v.named_tensors();
  for (size_t i = 0; i < pt.size(); ++i) {
    Tensor& p = *pt[i].second;
    const Tensor& g = *gt[i].second;
    Tensor& m = *mt[i].second;
    Tensor& v = *vt[i].second;
    const double wd = decays(pt[i].first, p) ? weight_decay : 0.0;
    for (size_t k = 0; k < p.data.size(); ++k) {
      m.data[k] = kBeta1 * m.data[k] + (1.0 - kBeta1) * g.data[k];
      v.data[k] = kBeta2 * v.data[k] + (1.0 - kBeta2) * g.data[k] * g.data[k];
      const double mh = m.data[k] / bc1;
      const double vh = v.data[k] / bc2;
      p.data[k] -= lr * (mh / (std::sqrt(vh) + kAdamEps) + wd * p.data[k]);
    }
  }
}

std::vector<TrainExample> build_examples(const Dataset& ds, const ModelConfig& cfg,
                                         PipelineMode mode, double margin) {
  std::vector<TrainExample> out;
  for (const Scene& scene : ds.scenes) {
    if (scene.split != Split::train) continue;
    for (const ObjectSpec& obj : scene.objects) {
      if (obj.grasps.empty()) continue;
      out.push_back(make_example(scene, obj, cfg, mode, margin, nullptr));
    }
  }
  return out;
}

TrainResult train_model(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const Dataset& dataset, PipelineMode mode,
                        const EvalFn& eval_fn) {
  model_cfg.validate();
  train_cfg.validate();

  struct Source {
    const Scene* scene;
    const ObjectSpec* obj;
  };
  std::vector<Source> sources;
  for (const Scene& scene : dataset.scenes) {
    if (scene.split != Split::train) continue;
    for (const ObjectSpec& obj : scene.objects) {
      if (!obj.grasps.empty()) sources.push_back({&scene, &obj});
    }
  }
  if (sources.empty()) {
    throw std::invalid_argument("train_model: dataset has no training examples");
  }

  TrainResult result;
  result.mode = mode;
  result.params = ModelParams::init(model_cfg);
  OptState opt = OptState::init(model_cfg);

  const int n = static_cast<int>(sources.size());
  const int batches_per_epoch = (n + train_cfg.batch - 1) / train_cfg.batch;
  const int64_t total_steps =
      static_cast<int64_t>(batches_per_epoch) * train_cfg.epochs;

  std::vector<int> order(sources.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TrainExample> examples;
  examples.reserve(sources.size());
  std::vector<TrainExample> batch;
  int64_t global_step = 0;

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    // Fresh teacher-crop jitter every epoch; single-turn examples are static
    // but rebuilding keeps the code path uniform.
    Rng jitter(mix_seed({train_cfg.seed, static_cast<uint64_t>(epoch), kJitterStream}));
    examples.clear();
    for (const Source& src : sources) {
      examples.push_back(make_example(*src.scene, *src.obj, model_cfg, mode, 0.1,
                                      mode == PipelineMode::vcot ? &jitter : nullptr));
    }

    Rng shuffle_rng(mix_seed({train_cfg.seed, static_cast<uint64_t>(epoch), 0x5481FF1EULL}));
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);
    }

    double loss_sum = 0.0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      batch.clear();
      const int lo = b * train_cfg.batch;
      const int hi = std::min(n, lo + train_cfg.batch);
      for (int i = lo; i < hi; ++i) batch.push_back(examples[order[i]]);

      const BackwardResult bw = backward(result.params, batch, train_cfg.lambda);
      const double lr = lr_at(global_step, total_steps, train_cfg.lr, train_cfg.warmup_ratio);
      opt_step(result.params, bw.grads, opt, lr, train_cfg.weight_decay);
      loss_sum += bw.loss;
      global_step++;
    }

    EpochLog log;
    log.epoch = epoch + 1;
    log.mean_loss = loss_sum / batches_per_epoch;
    if (eval_fn) {
      const auto rates = eval_fn(result.params, mode);
      log.eval_seen = rates[0];
      log.eval_unseen = rates[1];
      log.eval_avg = rates[2];
    }
    result.log.push_back(log);
  }
  return result;
}

void save_checkpoint(const ModelParams& params, PipelineMode mode,
                     const std::filesystem::path& path) {
  const auto tensors = params.named_tensors();
  nlohmann::json tensor_list = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    tensor_list.push_back({{"name", name}, {"shape", t->shape}, {"offset", offset}});
    offset += static_cast<uint64_t>(t->size()) * sizeof(double);
  }
  const nlohmann::json header = {
      {"version", kCheckpointVersion},
      {"mode", mode == PipelineMode::vcot ? "vcot" : "single_turn"},
      {"config", model_config_to_json(params.config)},
      {"tensors", tensor_list},
  };
  const std::string header_str = header.dump();
  const uint64_t header_len = header_str.size();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t->data.data()),
              static_cast<std::streamsize>(t->data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || header_len == 0 || header_len > (1u << 20)) {
    throw std::runtime_error("load_checkpoint: bad header length");
  }
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("load_checkpoint: truncated header");
  const nlohmann::json header = nlohmann::json::parse(header_str);
  if (header.at("version").get<std::string>() != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported version");
  }

  Checkpoint ckpt{ModelParams::zeros(model_config_from_json(header.at("config"))),
                  header.at("mode").get<std::string>() == "vcot"
                      ? PipelineMode::vcot
                      : PipelineMode::single_turn};

  auto tensors = ckpt.params.named_tensors();
  const auto& tensor_list = header.at("tensors");
  if (tensor_list.size() != tensors.size()) {
    throw std::runtime_error("load_checkpoint: tensor count mismatch");
  }
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = tensor_list[i];
    if (entry.at("name").get<std::string>() != tensors[i].first) {
      throw std::runtime_error("load_checkpoint: tensor name mismatch at index " +
                               std::to_string(i));
    }
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape != tensors[i].second->shape) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + tensors[i].first);
    }
    in.read(reinterpret_cast<char*>(tensors[i].second->data.data()),
            static_cast<std::streamsize>(tensors[i].second->data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("load_checkpoint: truncated payload");
  }
  return ckpt;
}

}  // namespace graspbench
