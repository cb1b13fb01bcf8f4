#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "nidens/error.hpp"
#include "nidens/hash.hpp"
#include "nidens/pipeline.hpp"
#include "nidens/synth.hpp"

using namespace nidens;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("nidens_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// One small synthetic data set shared by the tests.
const SynthFiles& data() {
  static const SynthFiles files = [] {
    SynthOptions o;
    o.scale = 0.01;
    return write_synth_nslkdd(scratch("data"), o);
  }();
  return files;
}

RunConfig small_config(const fs::path& out) {
  RunConfig c;
  c.train_path = data().train;
  c.test_path = data().test;
  c.output_dir = out;
  c.k = 3;
  c.threads = 1;
  c.seed = 11;
  // cheaper models; the structure is what matters here
  for (auto id : {"xgb", "cat", "lgbm"}) c.overrides[id] = {{"n_rounds", 30}};
  c.overrides["forest"] = {{"n_trees", 30}};
  return c;
}

std::map<std::string, std::string> deterministic_artifacts(const fs::path& out) {
  const auto doc = json::parse(read_file(out / "manifest.json"));
  std::map<std::string, std::string> m;
  for (const auto& [rel, e] : doc.at("artifacts").items()) {
    if (e.at("deterministic").get<bool>()) m[rel] = read_file(out / rel);
  }
  return m;
}

}  // namespace

TEST_CASE("run config round trip, path resolution and validation") {
  RunConfig c = small_config("out");
  c.mode = HyperMode::tune;
  c.budget = 3;
  c.learners = {LearnerKind::cat, LearnerKind::forest};
  c.spaces["cat"] = HyperparamSpace::defaults(LearnerKind::cat).to_json();
  const auto back = RunConfig::from_json(json::parse(c.to_json().dump()));
  CHECK(back.to_json() == c.to_json());
  CHECK_FALSE(c.to_json(false).contains("threads"));

  const auto rel = RunConfig::from_json(json::parse(R"({"data": {"train": "a.txt", "test": "/abs/b.txt"},
                                                        "output_dir": "runs/x"})"),
                                        "/cfg");
  CHECK(rel.train_path == fs::path("/cfg/a.txt"));
  CHECK(rel.test_path == fs::path("/abs/b.txt"));
  CHECK(rel.output_dir == fs::path("/cfg/runs/x"));
  CHECK(rel.k == 10);
  CHECK(rel.mode == HyperMode::defaults);
  CHECK(rel.learners.size() == 4);

  CHECK_THROWS_WITH_AS(RunConfig::from_json(json::parse(R"({"sed": 1})")), doctest::Contains("sed"), Error);
  auto bad = small_config("out");
  bad.k = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = small_config("out");
  bad.mode = HyperMode::tune;
  bad.budget = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = small_config("out");
  bad.overrides["xgb"]["no_such_param"] = 1;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("no_such_param"), Error);
}

TEST_CASE("output dir comes from the environment when set") {
  const auto dir = scratch("env");
  write_file(dir / "run.json", R"({"data": {"train": "t", "test": "u"}, "output_dir": "here"})");
  ::setenv("NIDENS_OUTPUT_DIR", "/elsewhere", 1);
  const auto c = RunConfig::load(dir / "run.json");
  ::unsetenv("NIDENS_OUTPUT_DIR");
  CHECK(c.output_dir == fs::path("/elsewhere"));
  CHECK(RunConfig::load(dir / "run.json").output_dir == dir / "here");
}

TEST_CASE("ingest writes a stable cache and reports class counts") {
  const auto out = scratch("ingest");
  auto cfg = small_config(out);
  std::ostringstream log;
  const auto r = cmd_ingest(cfg, log);
  // scaled counts cannot match the full-size table: warning, not error
  CHECK_FALSE(r.train.match);
  CHECK(r.warnings.size() == 2);
  CHECK(log.str().find("MISMATCH") != std::string::npos);
  const RunPaths paths{out};
  const auto h1 = sha256_file(paths.train_cache());
  cmd_ingest(cfg, log);
  CHECK(sha256_file(paths.train_cache()) == h1);
  const auto report = json::parse(read_file(paths.ingest_report()));
  CHECK(report.at("train").at("rows") == read_cache(paths.train_cache()).n_rows());

  // truncated record: the parse error names the line
  const auto text = read_file(data().train);
  const auto cut = text.find('\n', text.size() / 2);
  write_file(out / "broken.txt", text.substr(0, cut) + "\n0,tcp,http\n");
  cfg.train_path = out / "broken.txt";
  try {
    cmd_ingest(cfg, log);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line") != std::string::npos);
  }
}

TEST_CASE("full run is complete, verifiable and deterministic across thread counts") {
  const auto a = scratch("run_a");
  const auto b = scratch("run_b");
  std::ostringstream log;
  auto cfg = small_config(a);
  cmd_run(cfg, log);
  cfg.output_dir = b;
  cfg.threads = 4;
  cmd_run(cfg, log);

  CHECK(verify_manifest(a).empty());
  const auto files_a = deterministic_artifacts(a);
  const auto files_b = deterministic_artifacts(b);
  CHECK(files_a.size() == files_b.size());
  for (const auto& [rel, bytes] : files_a) {
    INFO(rel);
    REQUIRE(files_b.count(rel));
    CHECK(bytes == files_b.at(rel));
  }

  // every file in the run directory is in the manifest
  const auto doc = json::parse(read_file(a / "manifest.json"));
  std::size_t n_files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
    ++n_files;
    INFO(e.path());
    CHECK(doc.at("artifacts").contains(fs::relative(e.path(), a).generic_string()));
  }
  CHECK(n_files == doc.at("artifacts").size());
  CHECK(doc.at("config_sha256") == json::parse(read_file(b / "manifest.json")).at("config_sha256"));
  CHECK_FALSE(doc.at("config").contains("threads"));
  CHECK(doc.at("decisions").contains("stacking"));
  CHECK(doc.at("inputs").at("train").at("sha256") == sha256_file(data().train));

  // five models plus a blend file; five-row reports on both splits
  const RunPaths paths{a};
  for (auto id : {"forest", "xgb", "cat", "lgbm"}) CHECK(fs::exists(paths.model(id)));
  CHECK(fs::exists(paths.stacked_dir() / "stacked.json"));
  CHECK(fs::exists(paths.stacked_dir() / "blend.json"));
  const auto csv = read_file(paths.report_dir("test") / "metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  const auto train_report = json::parse(read_file(paths.report_dir("train") / "metrics.json"));
  CHECK(train_report.at("run").at("split") == "train");
  CHECK(train_report.at("run").at("note").get<std::string>().find("overfitting") != std::string::npos);

  // tampering is detected
  write_file(paths.model("xgb"), "{}");
  CHECK(verify_manifest(a) == std::vector<std::string>{"hash mismatch for models/xgb.json"});
}

TEST_CASE("forest-only run trains one model and skips stacking") {
  const auto out = scratch("forest_only");
  auto cfg = small_config(out);
  cfg.learners = {LearnerKind::forest};
  cfg.overrides.clear();
  std::ostringstream log;
  cmd_run(cfg, log);
  CHECK(fs::exists(RunPaths{out}.model("forest")));
  CHECK_FALSE(fs::exists(RunPaths{out}.stacked_dir()));
  const auto model = TrainedModel::from_json(json::parse(read_file(RunPaths{out}.model("forest"))));
  CHECK(model.spec.to_json() == LearnerSpec::defaults(LearnerKind::forest).to_json());
  CHECK_THROWS_AS(cmd_stack(cfg, log), Error);
}

TEST_CASE("tuning logs, fixed spaces and per-learner training failures") {
  const auto out = scratch("tune");
  auto cfg = small_config(out);
  cfg.mode = HyperMode::tune;
  cfg.budget = 1;
  cfg.learners = {LearnerKind::xgb};
  std::ostringstream log;
  cmd_ingest(cfg, log);
  cmd_tune(cfg, log);
  const RunPaths paths{out};
  const auto lines = read_file(paths.trial_log("xgb"));
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 1);

  cfg.budget = 3;
  cfg.learners = {LearnerKind::forest};
  cfg.overrides.clear();
  cfg.spaces["forest"] = HyperparamSpace::defaults(LearnerKind::forest).fixed_at_defaults().to_json();
  cmd_tune(cfg, log);
  const auto trials = read_file(paths.trial_log("forest"));
  CHECK(std::count(trials.begin(), trials.end(), '\n') == 3);
  CHECK(resolve_spec(cfg, LearnerKind::forest).to_json() == LearnerSpec::defaults(LearnerKind::forest).to_json());

  // the tuned OOF vector is reused by stacking
  const auto best = json::parse(read_file(paths.best_params("forest")));
  CHECK(best.at("spec") == LearnerSpec::defaults(LearnerKind::forest).to_json());
  CHECK(fs::exists(paths.oof("forest")));

  // lgbm was never tuned: it fails, forest still trains
  cfg.learners = {LearnerKind::forest, LearnerKind::lgbm};
  const auto r = cmd_train(cfg, log);
  CHECK(r.trained == std::vector<std::string>{"forest"});
  REQUIRE(r.failed.count("lgbm"));
  CHECK(r.failed.at("lgbm").find("tune") != std::string::npos);
  CHECK(fs::exists(paths.model("forest")));
}

TEST_CASE("evaluate refuses missing models before touching data") {
  const auto out = scratch("missing");
  auto cfg = small_config(out);
  cfg.learners = {LearnerKind::forest, LearnerKind::xgb};
  std::ostringstream log;
  // no cache either: the model check must come first
  CHECK_THROWS_WITH_AS(cmd_evaluate(cfg, SplitTag::test, log), doctest::Contains("forest.json"), Error);
  CHECK_FALSE(fs::exists(RunPaths{out}.evaluation("test")));
  CHECK_THROWS_WITH_AS(cmd_report(cfg, SplitTag::test, log), doctest::Contains("evaluate"), Error);
}

TEST_CASE("a model meets data encoded with another vocabulary") {
  const auto a = scratch("vocab_a");
  const auto b = scratch("vocab_b");
  SynthOptions o;
  o.scale = 0.01;
  o.seed = 99;
  const auto other = write_synth_nslkdd(b / "data", o);
  auto cfg = small_config(a);
  cfg.learners = {LearnerKind::forest};
  std::ostringstream log;
  cmd_ingest(cfg, log);
  cmd_train(cfg, log);

  auto cfg_b = cfg;
  cfg_b.output_dir = b;
  cfg_b.train_path = other.train;
  cfg_b.test_path = other.test;
  cmd_ingest(cfg_b, log);
  REQUIRE(read_cache(RunPaths{a}.train_cache()).vocabulary() != read_cache(RunPaths{b}.train_cache()).vocabulary());
  fs::create_directories(b / "models");
  fs::copy_file(RunPaths{a}.model("forest"), RunPaths{b}.model("forest"));
  CHECK_THROWS_WITH_AS(cmd_evaluate(cfg_b, SplitTag::test, log), doctest::Contains("forest"), SchemaError);
}
