// Command-line front end: dataset generation, refinement, training,
// evaluation and the experiment grids, all driven by one JSON config.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "graspbench/harness.hpp"

namespace fs = std::filesystem;
using namespace graspbench;

namespace {

ExperimentConfig load_config(const std::string& path, int64_t seed_override) {
  ExperimentConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    nlohmann::json j;
    in >> j;
    cfg = ExperimentConfig::from_json(j);
  }
  if (seed_override >= 0) {
    cfg.dataset.seed = static_cast<uint64_t>(seed_override);
    cfg.model.seed = static_cast<uint64_t>(seed_override);
    cfg.train.seed = static_cast<uint64_t>(seed_override);
    cfg.detector.seed = static_cast<uint64_t>(seed_override);
  }
  return cfg;
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << j.dump(2) << "\n";
}

PipelineMode parse_mode(const std::string& s) {
  if (s == "vcot") return PipelineMode::vcot;
  if (s == "single_turn") return PipelineMode::single_turn;
  throw std::invalid_argument("mode must be vcot or single_turn, got: " + s);
}

Dataset load_dataset_dir(const ExperimentConfig& cfg) {
  if (cfg.dataset_dir.empty()) {
    throw std::invalid_argument("config needs dataset_dir for this command");
  }
  return load_dataset(cfg.dataset_dir);
}

void write_train_log(const TrainResult& result, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "epoch,loss,seen,unseen,avg\n";
  char buf[160];
  for (const EpochLog& log : result.log) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f", log.epoch, log.mean_loss,
                  log.eval_seen, log.eval_unseen, log.eval_avg);
    out << buf << "\n";
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Visual chain-of-thought grasp bench"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::string out_dir = "out";
  int64_t seed_override = -1;
  app.add_option("--config", config_path, "JSON experiment config");
  app.add_option("--seed", seed_override, "override every config seed");
  app.add_option("--out", out_dir, "output directory");

  auto* cmd_gen = app.add_subcommand("gen", "generate a synthetic dataset");
  auto* cmd_refine = app.add_subcommand("refine", "filter a dataset against the simulated detector");
  auto* cmd_train = app.add_subcommand("train", "train a model on a dataset");
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on the test splits");
  auto* cmd_ablate = app.add_subcommand("ablate", "vcot x action-head grid");
  auto* cmd_scaling = app.add_subcommand("scaling", "data-fraction curve");
  auto* cmd_epochs = app.add_subcommand("epochs", "per-epoch curve");
  auto* cmd_robust = app.add_subcommand("robustness", "background/distractor variants");
  auto* cmd_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");

  std::string ckpt_path;
  cmd_eval->add_option("--ckpt", ckpt_path, "checkpoint file (default <out>/checkpoint.bin)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  const ExperimentConfig cfg = load_config(config_path, seed_override);
  const std::string fp = cfg.fingerprint();
  fs::create_directories(out_dir);

  if (cmd_gen->parsed()) {
    const Dataset ds = gen_dataset(cfg.dataset);
    save_dataset(ds, out_dir);
    const DatasetStats stats = dataset_stats(ds);
    nlohmann::json j = stats.to_json();
    j["config_fingerprint"] = fp;
    write_json(j, fs::path(out_dir) / "stats.json");
    std::cout << "gen: " << ds.scenes.size() << " scenes -> " << out_dir << "\n";
    return 0;
  }

  if (cmd_refine->parsed()) {
    const Dataset ds = load_dataset_dir(cfg);
    const DetectorSim detector(cfg.detector, ds.config.image_side);
    auto [filtered, report] = filter_dataset(ds, detector, cfg.filter_tau);
    save_dataset(filtered, out_dir);
    nlohmann::json j = report.to_json();
    j["config_fingerprint"] = fp;
    write_json(j, fs::path(out_dir) / "refine_report.json");
    std::cout << "refine: kept " << report.kept << "/" << report.total << " objects, "
              << report.scenes_after << "/" << report.scenes_before << " scenes\n";
    return 0;
  }

  if (cmd_train->parsed()) {
    const Dataset ds = load_dataset_dir(cfg);
    const PipelineMode mode = parse_mode(cfg.mode);
    const EvalFn eval_fn = [&](const ModelParams& params, PipelineMode m) {
      const EvalReport rep = evaluate(params, m, ds, cfg.margin);
      return std::array<double, 3>{rep.success_rate_seen, rep.success_rate_unseen,
                                   rep.success_rate_avg};
    };
    const TrainResult result = train_model(cfg.model, cfg.train, ds, mode, eval_fn);
    save_checkpoint(result.params, result.mode, fs::path(out_dir) / "checkpoint.bin");
    write_train_log(result, fs::path(out_dir) / "train_log.csv");
    std::cout << "train: " << result.log.size() << " epochs, final loss "
              << result.log.back().mean_loss << ", seen " << result.log.back().eval_seen
              << "\n";
    return 0;
  }

  if (cmd_eval->parsed()) {
    const Dataset ds = load_dataset_dir(cfg);
    if (ckpt_path.empty()) ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    EvalReport rep = evaluate(ckpt.params, ckpt.mode, ds, cfg.margin);
    rep.config_fingerprint = fp;
    rep.seeds = {ckpt.params.config.seed};
    write_json(rep.to_json(), fs::path(out_dir) / "report.json");
    std::cout << "eval: seen " << rep.success_rate_seen << " unseen "
              << rep.success_rate_unseen << " avg " << rep.success_rate_avg << "\n";
    return 0;
  }

  auto run_grid = [&](const char* name, const char* x_name,
                      std::vector<ResultRow> (*fn)(const ExperimentConfig&, const Dataset&),
                      const char* file) {
    const Dataset ds = load_dataset_dir(cfg);
    const std::vector<ResultRow> rows = fn(cfg, ds);
    write_rows_csv(rows, x_name, fp, fs::path(out_dir) / file);
    std::cout << name << ": " << rows.size() << " rows -> " << (fs::path(out_dir) / file).string()
              << "\n";
    for (const ResultRow& row : rows) {
      if (row.seed == "mean") {
        std::printf("  %-28s %3d/%-3d  seen %.3f  unseen %.3f  avg %.3f\n",
                    row.cell.c_str(), row.successes, row.trials, row.seen, row.unseen,
                    row.avg);
      }
    }
  };

  if (cmd_ablate->parsed()) {
    run_grid("ablate", "cell", run_ablation, "table.csv");
    return 0;
  }
  if (cmd_scaling->parsed()) {
    run_grid("scaling", "fraction", run_scaling, "curve.csv");
    return 0;
  }
  if (cmd_epochs->parsed()) {
    run_grid("epochs", "epoch", run_epochs, "curve.csv");
    return 0;
  }
  if (cmd_robust->parsed()) {
    run_grid("robustness", "variant", run_robustness, "table.csv");
    return 0;
  }

  if (cmd_gradcheck->parsed()) {
    ModelConfig small;
    small.image_side = 16;
    small.patch = 8;
    small.d_model = 16;
    small.n_heads = 2;
    small.n_layers = 2;
    small.n_conditions = 8;
    nlohmann::json results = nlohmann::json::array();
    bool all_pass = true;
    for (HeadKind head : {HeadKind::token, HeadKind::regression}) {
      small.head_kind = head;
      const GradCheckReport rep = grad_check(small, cfg.model.seed, 200, 1e-5, 1e-5);
      all_pass = all_pass && rep.pass;
      results.push_back({{"head", head_name(head)},
                         {"n_checked", rep.n_checked},
                         {"max_rel_err", rep.max_rel_err},
                         {"pass", rep.pass},
                         {"worst_tensor", rep.worst.tensor}});
      std::printf("gradcheck %-10s: %d coords, max rel err %.3e (%s)\n", head_name(head),
                  rep.n_checked, rep.max_rel_err, rep.pass ? "pass" : "FAIL");
    }
    write_json({{"results", results}, {"config_fingerprint", fp}},
               fs::path(out_dir) / "gradcheck.json");
    return all_pass ? 0 : 2;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
