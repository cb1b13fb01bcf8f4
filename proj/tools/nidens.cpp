#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <sstream>

#include "nidens/error.hpp"
#include "nidens/pipeline.hpp"
#include "nidens/synth.hpp"

using namespace nidens;
namespace fs = std::filesystem;

namespace {

// Flags that override the config file. Unset ones leave it alone.
struct Overrides {
  std::string config;
  std::string train, test, attack_map, output_dir, learners, mode, metric;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads, budget, k;
  bool no_stack = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--train", o.train, "training file (KDDTrain+.txt)");
  cmd->add_option("--test", o.test, "test file (KDDTest+.txt)");
  cmd->add_option("--attack-map", o.attack_map, "CSV attack,family table (builtin by default)");
  cmd->add_option("-o,--output-dir", o.output_dir, "run directory (default runs/default)");
  cmd->add_option("--seed", o.seed, "master seed (default 42)");
  cmd->add_option("-j,--threads", o.threads, "worker threads, 0 = all cores (default 0)");
  cmd->add_option("--learners", o.learners, "comma list of forest,xgb,cat,lgbm (default all)");
  cmd->add_option("--mode", o.mode, "defaults | tune (default defaults)");
  cmd->add_option("--budget", o.budget, "tuning trials per learner (default 10)");
  cmd->add_option("--metric", o.metric, "tuning metric: logloss | accuracy | weighted_f1 (default logloss)");
  cmd->add_option("-k,--folds", o.k, "cross-validation folds (default 10)");
  cmd->add_flag("--no-stack", o.no_stack, "skip the stacked ensemble");
}

RunConfig build_config(const Overrides& o) {
  RunConfig cfg;
  if (!o.config.empty()) {
    cfg = RunConfig::load(o.config);
  } else {
    cfg.apply_environment();
  }
  if (!o.train.empty()) cfg.train_path = o.train;
  if (!o.test.empty()) cfg.test_path = o.test;
  if (!o.attack_map.empty()) cfg.attack_map = fs::path(o.attack_map);
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.budget) cfg.budget = *o.budget;
  if (o.k) cfg.k = *o.k;
  if (!o.mode.empty()) cfg.mode = hyper_mode_from_string(o.mode);
  if (!o.metric.empty()) cfg.tune_metric = metric_from_string(o.metric);
  if (o.no_stack) cfg.stack = false;
  if (!o.learners.empty()) {
    cfg.learners.clear();
    std::stringstream ss(o.learners);
    for (std::string item; std::getline(ss, item, ',');) {
      if (!item.empty()) cfg.learners.push_back(learner_kind_from_string(item));
    }
  }
  cfg.validate();
  return cfg;
}

SplitTag split_from(const std::string& s) {
  if (s == "test") return SplitTag::test;
  if (s == "train") return SplitTag::train;
  throw Error("--on must be test or train");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nidens: tree ensembles and stacking for NSL-KDD intrusion detection"};
  app.set_version_flag("--version", std::string(toolkit_version()));
  app.require_subcommand(1);

  Overrides o;
  std::string on = "test";
  auto* ingest = app.add_subcommand("ingest", "parse the data files, write caches and the class-count report");
  auto* tune = app.add_subcommand("tune", "cross-validated hyperparameter search per learner");
  auto* train = app.add_subcommand("train", "train the selected learners on the full training set");
  auto* stack = app.add_subcommand("stack", "fit the stacked ensemble from out-of-fold predictions");
  auto* evaluate = app.add_subcommand("evaluate", "score every model on the test (or train) split");
  auto* report = app.add_subcommand("report", "write metrics CSV/JSON and plot data");
  auto* run = app.add_subcommand("run", "ingest, [tune], train, stack, evaluate and report");
  for (auto* c : {ingest, tune, train, stack, evaluate, report, run}) add_common(c, o);
  for (auto* c : {evaluate, report}) {
    c->add_option("--on", on, "split to score: test | train (default test)")->check(CLI::IsMember({"test", "train"}));
  }

  auto* verify = app.add_subcommand("verify", "check every manifest artifact against its recorded hash");
  std::string verify_dir;
  verify->add_option("dir", verify_dir, "run directory")->required();

  auto* config = app.add_subcommand("config", "print a config file with every default filled in");

  auto* synth = app.add_subcommand("synth", "write synthetic KDDTrain+.txt / KDDTest+.txt");
  std::string synth_out;
  SynthOptions synth_opts;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--scale", synth_opts.scale, "row-count multiplier (default 1.0)");
  synth->add_option("--seed", synth_opts.seed, "generator seed (default 7)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto files = write_synth_nslkdd(synth_out, synth_opts);
      std::cout << files.train.string() << "\n" << files.test.string() << "\n";
      return 0;
    }
    if (*verify) {
      const auto problems = verify_manifest(verify_dir);
      for (const auto& p : problems) std::cerr << p << "\n";
      if (problems.empty()) std::cout << "manifest ok\n";
      return problems.empty() ? 0 : 1;
    }
    if (*config) {
      RunConfig cfg;
      cfg.train_path = "data/nslkdd/KDDTrain+.txt";
      cfg.test_path = "data/nslkdd/KDDTest+.txt";
      std::cout << cfg.to_json().dump(2) << "\n";
      return 0;
    }
    const auto cfg = build_config(o);
    if (*ingest) cmd_ingest(cfg, std::cout);
    if (*tune) cmd_tune(cfg, std::cout);
    if (*train) {
      const auto r = cmd_train(cfg, std::cout);
      if (!r.failed.empty()) return 1;
    }
    if (*stack) cmd_stack(cfg, std::cout);
    if (*evaluate) cmd_evaluate(cfg, split_from(on), std::cout);
    if (*report) cmd_report(cfg, split_from(on), std::cout);
    if (*run) cmd_run(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
