#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nidens/dataset.hpp"
#include "nidens/learner.hpp"
#include "nidens/metrics.hpp"
#include "nidens/search.hpp"
#include "nidens/stacker.hpp"

namespace nidens {

enum class HyperMode : std::uint8_t { defaults, tune };
std::string_view to_string(HyperMode m);
HyperMode hyper_mode_from_string(std::string_view s);

/// Everything a run depends on. Relative paths in a config file resolve
/// against the file's directory.
struct RunConfig {
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  std::optional<std::filesystem::path> attack_map;  // builtin table when unset

  std::uint64_t seed = 42;
  std::vector<LearnerKind> learners{std::begin(kAllLearners), std::end(kAllLearners)};
  HyperMode mode = HyperMode::defaults;
  std::size_t budget = 10;
  std::size_t k = 10;
  MetricId tune_metric = MetricId::logloss;
  bool stack = true;
  StackOptions stacking;
  /// learner id -> parameter -> value, applied after defaults or tuned values.
  std::map<std::string, ParamPoint> overrides;
  /// learner id -> search space JSON; HyperparamSpace::defaults otherwise.
  std::map<std::string, nlohmann::json> spaces;

  std::filesystem::path output_dir = "runs/default";
  std::size_t threads = 0;  // 0 = all cores

  void validate() const;
  /// Without `threads` when include_threads is false.
  nlohmann::json to_json(bool include_threads = true) const;
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  /// Reads a config file and applies NIDENS_OUTPUT_DIR if set.
  static RunConfig load(const std::filesystem::path& path);
  /// Applies NIDENS_OUTPUT_DIR if set.
  void apply_environment();
};

/// Toolkit version string.
std::string_view toolkit_version();

/// Resolved values of every design choice a run depends on.
nlohmann::json resolved_decisions(const RunConfig& cfg);

/// manifest.json in the output directory. Artifacts are stored relative to it.
class RunManifest {
 public:
  static RunManifest open(const std::filesystem::path& output_dir);

  void set_config(const RunConfig& cfg);
  void record_input(const std::string& name, const std::filesystem::path& path);
  void record_stage(const std::string& stage, double seconds);
  /// Hashes the file now. `deterministic` is false for files carrying wall time.
  void record_artifact(const std::filesystem::path& path, bool deterministic = true);
  void save() const;

  const nlohmann::json& json() const noexcept { return doc_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  nlohmann::json doc_;
};

/// Problems with a saved manifest: missing files, hash mismatches. Empty when valid.
std::vector<std::string> verify_manifest(const std::filesystem::path& output_dir);

/// Layout of a run directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path train_cache() const { return root / "cache" / "train.nidsds"; }
  std::filesystem::path test_cache() const { return root / "cache" / "test.nidsds"; }
  std::filesystem::path ingest_report() const { return root / "cache" / "ingest_report.json"; }
  std::filesystem::path trial_log(std::string_view id) const;
  std::filesystem::path best_params(std::string_view id) const;
  std::filesystem::path oof(std::string_view id) const;
  std::filesystem::path model(std::string_view id) const;
  std::filesystem::path stacked_dir() const { return root / "models" / "stacked"; }
  std::filesystem::path evaluation(std::string_view split) const;
  std::filesystem::path report_dir(std::string_view split) const { return root / "reports" / std::string(split); }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

struct IngestResult {
  CountCheck train;
  CountCheck test;
  std::vector<std::string> warnings;
};

/// Parses both files, writes the caches and a class-count report.
IngestResult cmd_ingest(const RunConfig& cfg, std::ostream& log);

/// Tunes each selected learner; writes trial logs, best params and the best trial's OOF vector.
void cmd_tune(const RunConfig& cfg, std::ostream& log);

struct TrainResult {
  std::vector<std::string> trained;
  std::map<std::string, std::string> failed;  // learner id -> reason
};

/// Trains the selected learners on the full training cache.
TrainResult cmd_train(const RunConfig& cfg, std::ostream& log);

/// Builds OOF predictions (reusing tuned ones when they match) and fits the
/// stacked model from the trained members.
void cmd_stack(const RunConfig& cfg, std::ostream& log);

/// Scores every model on the chosen split and writes evaluation/<split>.json.
std::vector<EvaluatedModel> cmd_evaluate(const RunConfig& cfg, SplitTag split, std::ostream& log);

/// Emits the report files from evaluation/<split>.json.
ReportFiles cmd_report(const RunConfig& cfg, SplitTag split, std::ostream& log);

/// ingest, [tune], train, [stack], evaluate and report on test and train.
void cmd_run(const RunConfig& cfg, std::ostream& log);

/// The spec a learner is trained with: defaults or tuned values, then overrides.
LearnerSpec resolve_spec(const RunConfig& cfg, LearnerKind kind);

}  // namespace nidens
