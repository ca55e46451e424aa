#include "atlab/cli.hpp"

#include "atlab/diagnostics.hpp"
#include "atlab/run_config.hpp"
#include "atlab/trainer.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

namespace atlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int threads_from_env() {
  if (const char* env = std::getenv("AT_LAB_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    std::cerr << "ignoring invalid AT_LAB_THREADS='" << env << "'\n";
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

namespace {

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
};

struct EvalArgs {
  std::string checkpoint;
  std::string attack = "pgd10";
  std::string dataset;
  std::string split = "test";
  std::optional<double> epsilon;
  std::uint64_t seed = 0;
  std::string report;
};

struct LandscapeArgs {
  std::string checkpoint;
  std::string dataset;
  std::string split = "train";
  std::optional<double> epsilon;
  std::uint64_t seed = 0;
  int points = 21;
  std::string out;
};

/// Dataset selector plus the training epsilon, from either a run config
/// (e.g. a config.json echo) or a bare dataset object.
struct DatasetSource {
  DatasetSpec spec;
  double epsilon = 8.0 / 255.0;
};

DatasetSource read_dataset_source(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed dataset file " + path + ": " + e.what());
  }
  if (doc.is_object() && doc.contains("dataset")) {
    const RunConfig cfg = parse_run_config(doc);
    return {cfg.dataset, cfg.train.attack.epsilon};
  }
  return {parse_dataset_spec(doc), 8.0 / 255.0};
}

Dataset pick_split(const DatasetSpec& spec, const std::string& split) {
  auto [train, test] = load_datasets(spec);
  return split == "train" ? std::move(train) : std::move(test);
}

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = load_run_config(args.config, args.overrides);
  if (!args.out.empty()) cfg.output_dir = args.out;
  cfg.train.threads = threads_from_env();
  const auto [train_set, test_set] = load_datasets(cfg.dataset);

  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const json echo = to_json(cfg);
  write_text(dir / "config.json", echo.dump(2) + "\n");

  const TrainedModel model = train(cfg.train, train_set, test_set, {}, [&](const MetricsRecord& r) {
    std::cerr << fmt::format("epoch {:3d} lr {:.4g} lambda {:.4g} loss {:.4f} nat {:.4f}/{:.4f} rob {:.4f}/{:.4f} gap {:.4f}\n",
                             r.epoch, r.lr, r.lambda, r.train_loss, r.nat_train, r.nat_test, r.rob_train, r.rob_test,
                             r.gap);
  });

  const auto& last = model.history.back();
  write_metrics_csv(model.history, dir / "metrics.csv");
  write_metrics_json(model.history, echo, dir / "metrics.json",
                     {{"best_epoch", model.best_epoch},
                      {"final", {{"nat_test", last.nat_test}, {"rob_test", last.rob_test}, {"gap", last.gap}}}});
  save_checkpoint(model.reported(cfg.train.method), dir / "last.json");
  save_checkpoint(model.best, dir / "best.json");
  if (uses_mean_teacher(cfg.train.method)) save_checkpoint(model.student, dir / "student_last.json");

  std::cout << fmt::format("{} {:.4f} {:.4f} {:.4f}\n", to_string(cfg.train.method), last.nat_test, last.rob_test,
                           last.gap);
  return 0;
}

int cmd_eval(const EvalArgs& args) {
  const ModelParams params = load_checkpoint(args.checkpoint);
  const DatasetSource source = read_dataset_source(args.dataset);
  const Dataset data = pick_split(source.spec, args.split);
  const double epsilon = args.epsilon.value_or(source.epsilon);

  const double natural = natural_accuracy(params, data);
  double robust = natural;
  int steps = 0;
  if (args.attack != "none") {
    steps = args.attack == "pgd10" ? 10 : 100;
    const AttackConfig cfg = AttackConfig::evaluation(steps, epsilon);
    const EvalLoss loss = args.attack == "cw100" ? EvalLoss::margin : EvalLoss::cross_entropy;
    robust = robust_accuracy(params, data, cfg, loss, args.seed, threads_from_env());
  }

  const fs::path report = args.report.empty()
                              ? fs::path(args.checkpoint).parent_path() /
                                    fmt::format("{}_eval_{}.json", fs::path(args.checkpoint).stem().string(), args.attack)
                              : fs::path(args.report);
  const json doc = {{"checkpoint", args.checkpoint},
                    {"dataset", to_json(source.spec)},
                    {"split", args.split},
                    {"attack", args.attack},
                    {"epsilon", epsilon},
                    {"steps", steps},
                    {"seed", args.seed},
                    {"samples", data.size()},
                    {"natural_accuracy", natural},
                    {"robust_accuracy", robust}};
  write_text(report, doc.dump(2) + "\n");
  std::cout << fmt::format("natural {:.4f} robust {:.4f}\n", natural, robust);
  return 0;
}

int cmd_landscape(const LandscapeArgs& args) {
  const ModelParams params = load_checkpoint(args.checkpoint);
  const DatasetSource source = read_dataset_source(args.dataset);
  const Dataset data = pick_split(source.spec, args.split);
  AttackConfig cfg = AttackConfig::training();
  cfg.epsilon = args.epsilon.value_or(source.epsilon);

  const auto grid = linspace(-1.0, 1.0, args.points);
  const LandscapeSeries series = landscape_probe(params, data, grid, cfg, args.seed, threads_from_env());

  const fs::path out = args.out.empty()
                           ? fs::path(args.checkpoint).parent_path() /
                                 fmt::format("{}_landscape_seed{}.csv", fs::path(args.checkpoint).stem().string(),
                                             args.seed)
                           : fs::path(args.out);
  write_landscape_csv(series, out);
  const json echo = {{"checkpoint", args.checkpoint},
                     {"dataset", to_json(source.spec)},
                     {"split", args.split},
                     {"seed", args.seed},
                     {"points", args.points},
                     {"attack", {{"epsilon", cfg.epsilon}, {"step_size", cfg.step_size}, {"steps", cfg.steps}}},
                     {"range", series.range()}};
  write_text(fs::path(out.string() + ".json"), echo.dump(2) + "\n");
  std::cout << fmt::format("landscape range {:.6f} -> {}\n", series.range(), out.string());
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Adversarial training lab: PGD-AT, TRADES and mean-teacher consistency"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write metrics and checkpoints");
  train_cmd->add_option("--config", train_args.config, "Run config JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--override,-o", train_args.overrides, "key=value with dotted paths, repeatable");
  train_cmd->add_option("--out", train_args.out, "Output directory (overrides output_dir)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Natural and robust accuracy of a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("--attack", eval_args.attack)->check(CLI::IsMember({"pgd10", "pgd100", "cw100", "none"}));
  eval_cmd->add_option("--dataset", eval_args.dataset, "Run config or dataset selector JSON")->required();
  eval_cmd->add_option("--split", eval_args.split)->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_option("--epsilon", eval_args.epsilon);
  eval_cmd->add_option("--seed", eval_args.seed);
  eval_cmd->add_option("--report", eval_args.report, "Report JSON path");

  LandscapeArgs land_args;
  auto* land_cmd = app.add_subcommand("landscape", "Adversarial weight-loss landscape along a random direction");
  land_cmd->add_option("--checkpoint", land_args.checkpoint)->required();
  land_cmd->add_option("--dataset", land_args.dataset, "Run config or dataset selector JSON")->required();
  land_cmd->add_option("--split", land_args.split)->check(CLI::IsMember({"train", "test"}));
  land_cmd->add_option("--epsilon", land_args.epsilon);
  land_cmd->add_option("--seed", land_args.seed);
  land_cmd->add_option("--points", land_args.points)->check(CLI::Range(2, 100001));
  land_cmd->add_option("--out", land_args.out, "CSV path");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (land_cmd->parsed()) return cmd_landscape(land_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace atlab::cli
