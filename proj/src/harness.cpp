#include "graspbench/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace graspbench {

namespace {

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

nlohmann::json dataset_config_to_json(const DatasetConfig& cfg) {
  return {
      {"n_scenes", cfg.n_scenes},
      {"objects_per_scene", {cfg.objects_min, cfg.objects_max}},
      {"image_side", cfg.image_side},
      {"seed", cfg.seed},
      {"seen_categories", cfg.seen_categories},
      {"unseen_categories", cfg.unseen_categories},
      {"distractors", cfg.distractors},
      {"background_set", cfg.background_set},
      {"n_test_seen", cfg.n_test_seen},
      {"n_test_unseen", cfg.n_test_unseen},
  };
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig cfg;
  cfg.n_scenes = j.value("n_scenes", cfg.n_scenes);
  if (j.contains("objects_per_scene")) {
    cfg.objects_min = j.at("objects_per_scene").at(0).get<int>();
    cfg.objects_max = j.at("objects_per_scene").at(1).get<int>();
  }
  cfg.image_side = j.value("image_side", cfg.image_side);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.seen_categories = j.value("seen_categories", cfg.seen_categories);
  cfg.unseen_categories = j.value("unseen_categories", cfg.unseen_categories);
  cfg.distractors = j.value("distractors", cfg.distractors);
  cfg.background_set = j.value("background_set", cfg.background_set);
  cfg.n_test_seen = j.value("n_test_seen", cfg.n_test_seen);
  cfg.n_test_unseen = j.value("n_test_unseen", cfg.n_test_unseen);
  return cfg;
}

nlohmann::json detector_config_to_json(const DetectorConfig& cfg) {
  return {{"jitter_sigma", cfg.jitter_sigma},
          {"fail_prob", cfg.fail_prob},
          {"seed", cfg.seed}};
}

DetectorConfig detector_config_from_json(const nlohmann::json& j) {
  DetectorConfig cfg;
  cfg.jitter_sigma = j.value("jitter_sigma", cfg.jitter_sigma);
  cfg.fail_prob = j.value("fail_prob", cfg.fail_prob);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

PipelineMode mode_from_string(const std::string& s) {
  if (s == "vcot" || s == "on") return PipelineMode::vcot;
  if (s == "single_turn" || s == "off") return PipelineMode::single_turn;
  throw std::invalid_argument("unknown pipeline mode: " + s);
}

double mean_of(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Shared shape of all grid runners: per-seed rows followed by a mean row.
void append_mean_row(std::vector<ResultRow>& rows, const std::string& cell,
                     size_t first_seed_row) {
  ResultRow mean;
  mean.cell = cell;
  mean.seed = "mean";
  std::vector<double> seen, unseen, avg;
  for (size_t i = first_seed_row; i < rows.size(); ++i) {
    seen.push_back(rows[i].seen);
    unseen.push_back(rows[i].unseen);
    avg.push_back(rows[i].avg);
    mean.successes += rows[i].successes;
    mean.trials += rows[i].trials;
  }
  mean.seen = mean_of(seen);
  mean.unseen = mean_of(unseen);
  mean.avg = mean_of(avg);
  rows.push_back(mean);
}

ResultRow row_from_report(const std::string& cell, uint64_t seed,
                          const EvalReport& rep) {
  ResultRow row;
  row.cell = cell;
  row.seed = std::to_string(seed);
  row.seen = rep.success_rate_seen;
  row.unseen = rep.success_rate_unseen;
  row.avg = rep.success_rate_avg;
  row.successes = rep.successes_seen + rep.successes_unseen;
  row.trials = rep.trials_seen + rep.trials_unseen;
  return row;
}

TrainResult train_cell(const ExperimentConfig& cfg, const Dataset& ds,
                       PipelineMode mode, HeadKind head, uint64_t seed,
                       int epochs, const EvalFn& eval_fn = nullptr) {
  ModelConfig mc = cfg.model;
  mc.head_kind = head;
  mc.seed = seed;
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  tc.epochs = epochs;
  return train_model(mc, tc, ds, mode, eval_fn);
}

}  // namespace

std::string fingerprint(const nlohmann::json& j) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per_cat = nlohmann::json::object();
  for (const auto& [cat, st] : per_category) {
    per_cat[std::to_string(cat)] = {{"successes", st.first}, {"trials", st.second}};
  }
  return {
      {"successes_seen", successes_seen},
      {"trials_seen", trials_seen},
      {"successes_unseen", successes_unseen},
      {"trials_unseen", trials_unseen},
      {"success_rate_seen", success_rate_seen},
      {"success_rate_unseen", success_rate_unseen},
      {"success_rate_avg", success_rate_avg},
      {"success_rate_macro", success_rate_macro},
      {"per_category", per_cat},
      {"config_fingerprint", config_fingerprint},
      {"seeds", seeds},
  };
}

EvalReport evaluate(const ModelParams& params, PipelineMode mode, const Dataset& ds,
                    double margin, int n_threads) {
  const NetPolicy policy(params, mode);
  return evaluate_policy(policy, mode, ds, margin, n_threads);
}

EvalReport evaluate_policy(const GraspPolicy& policy, PipelineMode mode,
                           const Dataset& ds, double margin, int n_threads) {
  struct Target {
    const Scene* scene;
    const ObjectSpec* obj;
  };
  std::vector<Target> targets;
  for (const Scene& scene : ds.scenes) {
    if (scene.split == Split::train) continue;
    for (const ObjectSpec& obj : scene.objects) {
      targets.push_back({&scene, &obj});
    }
  }
  if (targets.empty()) {
    throw std::invalid_argument("evaluate: no test targets in the dataset");
  }

  std::vector<uint8_t> ok(targets.size(), 0);
  auto work = [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      const PipelineResult res = run_pipeline(policy, targets[i].scene->image,
                                              instruction_of(*targets[i].obj), mode, margin);
      ok[i] = grasp_success(res.grasp, targets[i].obj->grasps) ? 1 : 0;
    }
  };
  if (n_threads <= 1) {
    work(0, targets.size());
  } else {
    std::vector<std::thread> threads;
    const size_t chunk = (targets.size() + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const size_t lo = std::min(targets.size(), t * chunk);
      const size_t hi = std::min(targets.size(), lo + chunk);
      if (lo < hi) threads.emplace_back(work, lo, hi);
    }
    for (std::thread& t : threads) t.join();
  }

  EvalReport rep;
  for (size_t i = 0; i < targets.size(); ++i) {
    const bool success = ok[i] != 0;
    auto& [cat_s, cat_t] = rep.per_category[targets[i].obj->category_id];
    cat_t++;
    if (success) cat_s++;
    if (targets[i].scene->split == Split::test_seen) {
      rep.trials_seen++;
      if (success) rep.successes_seen++;
    } else {
      rep.trials_unseen++;
      if (success) rep.successes_unseen++;
    }
  }
  rep.success_rate_seen =
      rep.trials_seen > 0 ? static_cast<double>(rep.successes_seen) / rep.trials_seen : 0.0;
  rep.success_rate_unseen =
      rep.trials_unseen > 0 ? static_cast<double>(rep.successes_unseen) / rep.trials_unseen
                            : 0.0;
  rep.success_rate_avg = static_cast<double>(rep.successes_seen + rep.successes_unseen) /
                         static_cast<double>(rep.trials_seen + rep.trials_unseen);
  int n_splits = 0;
  double macro = 0.0;
  if (rep.trials_seen > 0) {
    macro += rep.success_rate_seen;
    n_splits++;
  }
  if (rep.trials_unseen > 0) {
    macro += rep.success_rate_unseen;
    n_splits++;
  }
  rep.success_rate_macro = n_splits > 0 ? macro / n_splits : 0.0;
  return rep;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: seeds must be non-empty");
  for (double f : data_fractions) {
    if (!(f > 0.0 && f <= 1.0)) {
      throw std::invalid_argument("ExperimentConfig: data fractions must be in (0, 1]");
    }
  }
  for (const std::string& v : vcot_axis) mode_from_string(v);
  for (const std::string& h : head_axis) head_from_name(h);
  for (const std::string& v : robustness_variants) {
    if (v != "original" && v != "background" && v != "distractors") {
      throw std::invalid_argument("ExperimentConfig: unknown robustness variant: " + v);
    }
  }
  for (int e : epochs_sweep) {
    if (e < 1) throw std::invalid_argument("ExperimentConfig: epochs must be >= 1");
  }
  mode_from_string(mode);
  if (filter_tau < 0.0 || filter_tau > 1.0) {
    throw std::invalid_argument("ExperimentConfig: filter_tau must be in [0, 1]");
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  return {
      {"dataset_dir", dataset_dir},
      {"mode", mode},
      {"filter_tau", filter_tau},
      {"margin", margin},
      {"dataset", dataset_config_to_json(dataset)},
      {"model", model_config_to_json(model)},
      {"train", train_config_to_json(train)},
      {"detector", detector_config_to_json(detector)},
      {"ablation",
       {{"vcot", vcot_axis},
        {"head", head_axis},
        {"data_fraction", data_fractions},
        {"epochs_sweep", epochs_sweep},
        {"robustness", robustness_variants},
        {"seeds", seeds}}},
  };
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.dataset_dir = j.value("dataset_dir", cfg.dataset_dir);
  cfg.mode = j.value("mode", cfg.mode);
  cfg.filter_tau = j.value("filter_tau", cfg.filter_tau);
  cfg.margin = j.value("margin", cfg.margin);
  if (j.contains("dataset")) cfg.dataset = dataset_config_from_json(j.at("dataset"));
  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
  if (j.contains("detector")) cfg.detector = detector_config_from_json(j.at("detector"));
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    cfg.vcot_axis = a.value("vcot", cfg.vcot_axis);
    cfg.head_axis = a.value("head", cfg.head_axis);
    cfg.data_fractions = a.value("data_fraction", cfg.data_fractions);
    cfg.epochs_sweep = a.value("epochs_sweep", cfg.epochs_sweep);
    cfg.robustness_variants = a.value("robustness", cfg.robustness_variants);
    cfg.seeds = a.value("seeds", cfg.seeds);
  }
  cfg.validate();
  return cfg;
}

std::string ExperimentConfig::fingerprint() const {
  return graspbench::fingerprint(to_json());
}

std::vector<ResultRow> run_ablation(const ExperimentConfig& cfg, const Dataset& ds) {
  cfg.validate();
  std::vector<ResultRow> rows;
  for (const std::string& vcot : cfg.vcot_axis) {
    for (const std::string& head : cfg.head_axis) {
      const std::string cell = "vcot=" + vcot + ",head=" + head;
      const size_t first = rows.size();
      for (uint64_t seed : cfg.seeds) {
        const TrainResult tr = train_cell(cfg, ds, mode_from_string(vcot),
                                          head_from_name(head), seed, cfg.train.epochs);
        const EvalReport rep = evaluate(tr.params, tr.mode, ds, cfg.margin);
        rows.push_back(row_from_report(cell, seed, rep));
      }
      append_mean_row(rows, cell, first);
    }
  }
  return rows;
}

Dataset subset_train(const Dataset& ds, double fraction, uint64_t shuffle_seed) {
  std::vector<size_t> train_idx;
  for (size_t i = 0; i < ds.scenes.size(); ++i) {
    if (ds.scenes[i].split == Split::train) train_idx.push_back(i);
  }
  const int64_t count = std::llround(fraction * static_cast<double>(train_idx.size()));
  if (count <= 0) {
    throw std::invalid_argument("subset_train: fraction yields zero train scenes");
  }
  Rng rng(mix_seed({shuffle_seed, 0x5CA11E5ULL}));
  for (int i = static_cast<int>(train_idx.size()) - 1; i > 0; --i) {
    std::swap(train_idx[i], train_idx[rng.uniform_int(i + 1)]);
  }
  train_idx.resize(std::min<size_t>(train_idx.size(), static_cast<size_t>(count)));
  std::sort(train_idx.begin(), train_idx.end());

  Dataset out;
  out.config = ds.config;
  out.config.n_scenes = static_cast<int>(train_idx.size());
  for (size_t i : train_idx) out.scenes.push_back(ds.scenes[i]);
  for (const Scene& s : ds.scenes) {
    if (s.split != Split::train) out.scenes.push_back(s);
  }
  return out;
}

std::vector<ResultRow> run_scaling(const ExperimentConfig& cfg, const Dataset& ds) {
  cfg.validate();
  std::vector<double> fractions = cfg.data_fractions;
  std::sort(fractions.begin(), fractions.end());
  std::vector<ResultRow> rows;
  char cell[32];
  for (double f : fractions) {
    const Dataset sub = subset_train(ds, f, cfg.dataset.seed);
    std::snprintf(cell, sizeof(cell), "%.2f", f);
    const size_t first = rows.size();
    for (uint64_t seed : cfg.seeds) {
      const TrainResult tr =
          train_cell(cfg, sub, mode_from_string(cfg.mode), cfg.model.head_kind, seed,
                     cfg.train.epochs);
      const EvalReport rep = evaluate(tr.params, tr.mode, sub, cfg.margin);
      rows.push_back(row_from_report(cell, seed, rep));
    }
    append_mean_row(rows, cell, first);
  }
  return rows;
}

std::vector<ResultRow> run_epochs(const ExperimentConfig& cfg, const Dataset& ds) {
  cfg.validate();
  const int max_epochs = *std::max_element(cfg.epochs_sweep.begin(), cfg.epochs_sweep.end());
  // per seed, per epoch: full report
  std::vector<std::vector<EvalReport>> reports(cfg.seeds.size());
  for (size_t si = 0; si < cfg.seeds.size(); ++si) {
    auto& per_epoch = reports[si];
    const EvalFn eval_fn = [&](const ModelParams& params, PipelineMode mode) {
      const EvalReport rep = evaluate(params, mode, ds, cfg.margin);
      per_epoch.push_back(rep);
      return std::array<double, 3>{rep.success_rate_seen, rep.success_rate_unseen,
                                   rep.success_rate_avg};
    };
    train_cell(cfg, ds, mode_from_string(cfg.mode), cfg.model.head_kind,
               cfg.seeds[si], max_epochs, eval_fn);
  }

  std::vector<int> sweep = cfg.epochs_sweep;
  std::sort(sweep.begin(), sweep.end());
  std::vector<ResultRow> rows;
  for (int epoch : sweep) {
    const std::string cell = std::to_string(epoch);
    const size_t first = rows.size();
    for (size_t si = 0; si < cfg.seeds.size(); ++si) {
      rows.push_back(row_from_report(cell, cfg.seeds[si],
                                     reports[si].at(static_cast<size_t>(epoch - 1))));
    }
    append_mean_row(rows, cell, first);
  }
  return rows;
}

Dataset robustness_variant(const DatasetConfig& base, const std::string& variant) {
  DatasetConfig cfg = base;
  cfg.apply_defaults();
  // Pin the test split sizes before zeroing the train count; test scene
  // streams are keyed by (seed, split, index) so their content is identical
  // across variants.
  cfg.n_test_seen = cfg.test_seen_count();
  cfg.n_test_unseen = cfg.test_unseen_count();
  cfg.n_scenes = 0;
  if (variant == "background") {
    std::vector<int> held_out;
    for (int bg = 0; bg < kNumBackgrounds; ++bg) {
      if (std::find(base.background_set.begin(), base.background_set.end(), bg) ==
          base.background_set.end()) {
        held_out.push_back(bg);
      }
    }
    if (held_out.empty()) {
      throw std::invalid_argument("robustness_variant: no held-out backgrounds available");
    }
    cfg.background_set = held_out;
  } else if (variant == "distractors") {
    cfg.distractors = true;
  } else if (variant != "original") {
    throw std::invalid_argument("robustness_variant: unknown variant: " + variant);
  }
  return gen_dataset(cfg);
}

std::vector<ResultRow> run_robustness(const ExperimentConfig& cfg, const Dataset& ds) {
  cfg.validate();
  std::vector<Dataset> variants;
  for (const std::string& name : cfg.robustness_variants) {
    variants.push_back(robustness_variant(cfg.dataset, name));
  }

  // rows grouped per variant; train once per seed, evaluate on all variants
  std::vector<std::vector<ResultRow>> grouped(variants.size());
  for (uint64_t seed : cfg.seeds) {
    const TrainResult tr = train_cell(cfg, ds, mode_from_string(cfg.mode),
                                      cfg.model.head_kind, seed, cfg.train.epochs);
    for (size_t v = 0; v < variants.size(); ++v) {
      const EvalReport rep = evaluate(tr.params, tr.mode, variants[v], cfg.margin);
      grouped[v].push_back(row_from_report(cfg.robustness_variants[v], seed, rep));
    }
  }
  std::vector<ResultRow> rows;
  for (size_t v = 0; v < grouped.size(); ++v) {
    const size_t first = rows.size();
    rows.insert(rows.end(), grouped[v].begin(), grouped[v].end());
    append_mean_row(rows, cfg.robustness_variants[v], first);
  }
  return rows;
}

void write_rows_csv(const std::vector<ResultRow>& rows, const std::string& x_name,
                    const std::string& fingerprint,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_rows_csv: cannot open " + path.string());
  out << x_name << ",seed,seen,unseen,avg,successes,trials,fingerprint\n";
  char buf[160];
  for (const ResultRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f", row.seen, row.unseen, row.avg);
    out << row.cell << "," << row.seed << "," << buf << "," << row.successes << ","
        << row.trials << "," << fingerprint << "\n";
  }
  if (!out) throw std::runtime_error("write_rows_csv: write failed");
}

}  // namespace graspbench
