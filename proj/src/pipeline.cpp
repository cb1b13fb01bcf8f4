#include "nidens/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "nidens/error.hpp"
#include "nidens/hash.hpp"
#include "nidens/parallel.hpp"
#include "nidens/rng.hpp"

namespace nidens {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::string_view kEvalNote[] = {"training set; overfitting diagnostics, not a generalization estimate",
                                          "held-out test set"};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string id_of(LearnerKind k) { return std::string(to_string(k)); }

json load_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

// Shared prologue of every command.
RunManifest begin(const RunConfig& cfg) {
  cfg.validate();
  set_num_threads(cfg.threads);
  fs::create_directories(cfg.output_dir);
  auto m = RunManifest::open(cfg.output_dir);
  m.set_config(cfg);
  return m;
}

Dataset load_split(const RunPaths& paths, SplitTag split) {
  const auto p = split == SplitTag::train ? paths.train_cache() : paths.test_cache();
  if (!fs::exists(p)) throw Error("no dataset cache at " + p.string() + "; run `nidens ingest` first");
  return read_cache(p);
}

FoldPlan run_folds(const RunConfig& cfg, const Dataset& train) {
  return make_folds(train.labels(), cfg.k, derive_seed(cfg.seed, "folds"));
}

std::uint64_t cv_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "cv"); }

std::string spec_digest(const LearnerSpec& spec) { return sha256_hex(spec.to_json().dump()); }

json class_table(const std::array<std::size_t, kNumAttackClasses>& counts) {
  json j = json::object();
  for (auto c : kAllAttackClasses) j[std::string(to_string(c))] = counts[static_cast<std::size_t>(c)];
  return j;
}

json count_report(const Dataset& ds, const CountCheck& check) {
  return {{"rows", ds.n_rows()},
          {"observed", class_table(check.observed)},
          {"expected", class_table(check.expected)},
          {"match", check.match},
          {"notes", check.notes}};
}

HyperparamSpace space_for(const RunConfig& cfg, LearnerKind kind) {
  const auto id = id_of(kind);
  auto space = cfg.spaces.count(id) ? HyperparamSpace::from_json(cfg.spaces.at(id)) : HyperparamSpace::defaults(kind);
  // overridden parameters are pinned
  if (cfg.overrides.count(id)) {
    for (auto& d : space.params) {
      const auto& o = cfg.overrides.at(id);
      if (auto it = o.find(d.name); it != o.end()) {
        d.kind = ParamDomain::Kind::fixed;
        d.value = it->second;
      }
    }
  }
  return space;
}

LearnerSpec with_overrides(const RunConfig& cfg, LearnerSpec spec) {
  if (auto it = cfg.overrides.find(id_of(spec.kind)); it != cfg.overrides.end()) {
    for (const auto& [name, v] : it->second) spec.set(name, v);
  }
  spec.validate();
  return spec;
}

std::vector<double> fold_oof(const RunConfig& cfg, const Dataset& train, const FoldPlan& folds,
                             const LearnerSpec& spec) {
  auto trial = cross_validate(train, spec, folds, cfg.tune_metric, cv_seed(cfg));
  if (trial.failed) throw Error("out-of-fold predictions for " + id_of(spec.kind) + " failed: " + trial.reason);
  return std::move(trial.oof);
}

void write_oof(const RunConfig& cfg, const RunPaths& paths, RunManifest& manifest, const LearnerSpec& spec,
               const FoldPlan& folds, const std::vector<double>& oof) {
  json doc = {{"format", "nidens-oof"},
              {"learner", id_of(spec.kind)},
              {"spec_sha256", spec_digest(spec)},
              {"k", folds.k},
              {"fold_seed", folds.seed},
              {"cv_seed", cv_seed(cfg)},
              {"oof", oof}};
  const auto p = paths.oof(id_of(spec.kind));
  write_file(p, doc.dump() + "\n");
  manifest.record_artifact(p);
}

std::optional<std::vector<double>> cached_oof(const RunConfig& cfg, const RunPaths& paths, const LearnerSpec& spec,
                                              const FoldPlan& folds) {
  const auto p = paths.oof(id_of(spec.kind));
  if (!fs::exists(p)) return std::nullopt;
  const auto doc = load_json(p);
  if (doc.value("spec_sha256", "") != spec_digest(spec) || doc.value("k", std::size_t{0}) != folds.k ||
      doc.value("fold_seed", std::uint64_t{0}) != folds.seed || doc.value("cv_seed", std::uint64_t{0}) != cv_seed(cfg)) {
    return std::nullopt;
  }
  auto oof = doc.at("oof").get<std::vector<double>>();
  if (oof.size() != folds.n_rows()) return std::nullopt;
  return oof;
}

bool stacking_enabled(const RunConfig& cfg) { return cfg.stack && cfg.learners.size() >= 2; }

json scores_json(std::span<const std::uint8_t> labels, std::span<const double> p) {
  return {{"accuracy", metric_value(MetricId::accuracy, labels, p)},
          {"weighted_f1", metric_value(MetricId::weighted_f1, labels, p)},
          {"logloss", metric_value(MetricId::logloss, labels, p)}};
}

void print_table(std::ostream& log, const std::vector<EvaluatedModel>& models) {
  log << std::left << std::setw(18) << "model" << std::right << std::setw(9) << "accuracy" << std::setw(10)
      << "precision" << std::setw(8) << "recall" << std::setw(6) << "f1" << std::setw(12) << "published\n";
  for (const auto& m : table_order(models)) {
    std::string pub = "-";
    for (const auto& p : published_scores()) {
      if (p.name == m.name) pub = std::to_string(p.accuracy) + "/" + std::to_string(p.f1);
    }
    log << std::left << std::setw(18) << m.name << std::right << std::setw(9) << percent(m.metrics.accuracy)
        << std::setw(10) << percent(m.metrics.precision) << std::setw(8) << percent(m.metrics.recall) << std::setw(6)
        << percent(m.metrics.f1) << std::setw(11) << pub << "\n";
  }
}

}  // namespace

std::string_view to_string(HyperMode m) { return m == HyperMode::tune ? "tune" : "defaults"; }

HyperMode hyper_mode_from_string(std::string_view s) {
  if (s == "defaults") return HyperMode::defaults;
  if (s == "tune") return HyperMode::tune;
  throw Error("unknown hyperparameter mode: " + std::string(s) + " (expected defaults or tune)");
}

std::string_view toolkit_version() { return NIDENS_VERSION; }

// ---------------------------------------------------------------- RunConfig

void RunConfig::validate() const {
  if (train_path.empty() || test_path.empty()) throw Error("config needs both data.train and data.test");
  if (k < 2) throw Error("k must be at least 2");
  if (mode == HyperMode::tune && budget < 1) throw Error("budget must be at least 1 when tuning");
  if (learners.empty()) throw Error("no learners selected");
  std::set<LearnerKind> seen;
  for (auto l : learners) {
    if (!seen.insert(l).second) throw Error("learner listed twice: " + id_of(l));
  }
  for (const auto& [id, params] : overrides) {
    auto spec = LearnerSpec::defaults(learner_kind_from_string(id));
    for (const auto& [name, v] : params) spec.set(name, v);
    spec.validate();
  }
  for (const auto& [id, space] : spaces) {
    learner_kind_from_string(id);
    HyperparamSpace::from_json(space);
  }
  if (!(stacking.meta_lambda > 0)) throw Error("meta_lambda must be positive");
  if (output_dir.empty()) throw Error("output_dir is empty");
}

json RunConfig::to_json(bool include_threads) const {
  json ls = json::array();
  for (auto l : learners) ls.push_back(id_of(l));
  json j = {
      {"data",
       {{"train", train_path.generic_string()},
        {"test", test_path.generic_string()},
        {"attack_map", attack_map ? json(attack_map->generic_string()) : json(nullptr)}}},
      {"seed", seed},
      {"learners", ls},
      {"hyperparameters",
       {{"mode", to_string(mode)},
        {"budget", budget},
        {"metric", to_string(tune_metric)},
        {"overrides", overrides},
        {"spaces", spaces}}},
      {"cv", {{"k", k}}},
      {"stacking",
       {{"enabled", stack},
        {"meta_lambda", stacking.meta_lambda},
        {"blend_metric", to_string(stacking.blend_metric)},
        {"max_iters", stacking.max_iters}}},
      {"output_dir", output_dir.generic_string()},
  };
  if (include_threads) j["threads"] = threads;
  return j;
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
  static const std::set<std::string> known{"data",   "seed",     "learners",   "hyperparameters",
                                           "cv",     "stacking", "output_dir", "threads"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw Error("unknown config key: " + key);
  }
  RunConfig c;
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.train_path = resolve(d.value("train", ""), base);
      c.test_path = resolve(d.value("test", ""), base);
      if (d.contains("attack_map") && !d.at("attack_map").is_null()) {
        c.attack_map = resolve(d.at("attack_map").get<std::string>(), base);
      }
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("learners")) {
      c.learners.clear();
      for (const auto& l : j.at("learners")) c.learners.push_back(learner_kind_from_string(l.get<std::string>()));
    }
    if (j.contains("hyperparameters")) {
      const auto& h = j.at("hyperparameters");
      c.mode = hyper_mode_from_string(h.value("mode", "defaults"));
      c.budget = h.value("budget", c.budget);
      c.tune_metric = metric_from_string(h.value("metric", "logloss"));
      if (h.contains("overrides")) c.overrides = h.at("overrides").get<std::map<std::string, ParamPoint>>();
      if (h.contains("spaces")) c.spaces = h.at("spaces").get<std::map<std::string, json>>();
    }
    if (j.contains("cv")) c.k = j.at("cv").value("k", c.k);
    if (j.contains("stacking")) {
      const auto& s = j.at("stacking");
      c.stack = s.value("enabled", c.stack);
      c.stacking.meta_lambda = s.value("meta_lambda", c.stacking.meta_lambda);
      c.stacking.blend_metric = metric_from_string(s.value("blend_metric", "weighted_f1"));
      c.stacking.max_iters = s.value("max_iters", c.stacking.max_iters);
    }
    if (j.contains("output_dir")) c.output_dir = resolve(j.at("output_dir").get<std::string>(), base);
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw Error(std::string("bad config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw Error("config file not found: " + path.string());
  auto c = from_json(load_json(path), path.parent_path());
  c.apply_environment();
  return c;
}

void RunConfig::apply_environment() {
  if (const char* dir = std::getenv("NIDENS_OUTPUT_DIR"); dir && *dir) output_dir = dir;
}

json resolved_decisions(const RunConfig& cfg) {
  json learners = json::object();
  for (auto l : cfg.learners) {
    const auto spec = LearnerSpec::defaults(l);
    learners[id_of(l)] = {{"display_name", display_name(l)}, {"default_spec", spec.to_json()}};
  }
  return {
      {"task", "binary: normal -> 0, every attack family -> 1"},
      {"decision_threshold", "attack when P(attack) >= 0.5"},
      {"loss", "logistic"},
      {"missing_bin", kMissingBin},
      {"unseen_test_category", "mapped to code 0 (<unknown>)"},
      {"forest_leaf", "attack proportion; probability-mean vote"},
      {"boosting_early_stopping", "patience 20 rounds on a 10% stratified carve-out when no holdout is given"},
      {"cv", {{"k", cfg.k}, {"stratified", true}, {"fold_stream", "folds"}, {"model_stream", "cv"}}},
      {"search", {{"method", "tpe"}, {"random_trials", "max(5, budget/5)"}, {"candidates", SearchOptions{}.candidates}}},
      {"tune_metric", to_string(cfg.tune_metric)},
      {"stacking",
       {{"meta", "L2 logistic regression on member log-odds"},
        {"meta_lambda", cfg.stacking.meta_lambda},
        {"blend", "greedy with replacement over members plus cross-fitted meta column"},
        {"blend_metric", to_string(cfg.stacking.blend_metric)},
        {"max_iters", cfg.stacking.max_iters}}},
      {"weighted_metrics", "support-weighted over both classes"},
      {"seed_streams", "derive_seed(seed, purpose)"},
      {"learners", learners},
  };
}

// ---------------------------------------------------------------- manifest

RunManifest RunManifest::open(const fs::path& output_dir) {
  RunManifest m;
  m.dir_ = output_dir;
  const auto p = output_dir / "manifest.json";
  if (fs::exists(p)) {
    m.doc_ = load_json(p);
  } else {
    m.doc_ = {{"format", "nidens-manifest"}, {"version", 1}};
  }
  m.doc_["toolkit"] = {{"name", "nidens"}, {"version", toolkit_version()}};
  for (const char* key : {"inputs", "stages", "artifacts"}) {
    if (!m.doc_.contains(key)) m.doc_[key] = json::object();
  }
  return m;
}

void RunManifest::set_config(const RunConfig& cfg) {
  auto c = cfg.to_json(false);
  // where the run lives does not change what it computes
  auto hashed = c;
  hashed.erase("output_dir");
  const auto digest = sha256_hex(hashed.dump());
  if (doc_.contains("config_sha256") && doc_["config_sha256"] != digest) {
    // another configuration ran here before; its records no longer apply
    doc_["inputs"] = json::object();
    doc_["stages"] = json::object();
    doc_["artifacts"] = json::object();
  }
  doc_["config"] = std::move(c);
  doc_["config_sha256"] = digest;
  doc_["threads"] = num_threads();
  doc_["decisions"] = resolved_decisions(cfg);
}

void RunManifest::record_input(const std::string& name, const fs::path& path) {
  doc_["inputs"][name] = {{"path", path.generic_string()}, {"sha256", sha256_file(path)},
                          {"bytes", fs::file_size(path)}};
}

void RunManifest::record_stage(const std::string& stage, double seconds) {
  doc_["stages"][stage] = {{"seconds", seconds}};
}

void RunManifest::record_artifact(const fs::path& path, bool deterministic) {
  const auto rel = fs::relative(path, dir_).generic_string();
  doc_["artifacts"][rel] = {{"sha256", sha256_file(path)}, {"bytes", fs::file_size(path)},
                            {"deterministic", deterministic}};
}

void RunManifest::save() const { write_json(dir_ / "manifest.json", doc_); }

std::vector<std::string> verify_manifest(const fs::path& output_dir) {
  std::vector<std::string> problems;
  const auto p = output_dir / "manifest.json";
  if (!fs::exists(p)) return {"no manifest at " + p.string()};
  const auto doc = load_json(p);
  const auto artifacts = doc.value("artifacts", json::object());
  for (const auto& [rel, entry] : artifacts.items()) {
    const auto file = output_dir / rel;
    if (!fs::exists(file)) {
      problems.push_back("missing artifact " + rel);
    } else if (sha256_file(file) != entry.at("sha256").get<std::string>()) {
      problems.push_back("hash mismatch for " + rel);
    }
  }
  return problems;
}

fs::path RunPaths::trial_log(std::string_view id) const { return root / "tuning" / (std::string(id) + "_trials.jsonl"); }
fs::path RunPaths::best_params(std::string_view id) const { return root / "tuning" / (std::string(id) + "_best.json"); }
fs::path RunPaths::oof(std::string_view id) const { return root / "oof" / (std::string(id) + ".json"); }
fs::path RunPaths::model(std::string_view id) const { return root / "models" / (std::string(id) + ".json"); }
fs::path RunPaths::evaluation(std::string_view split) const {
  return root / "evaluation" / (std::string(split) + ".json");
}

// ---------------------------------------------------------------- commands

IngestResult cmd_ingest(const RunConfig& cfg, std::ostream& log) {
  auto manifest = begin(cfg);
  const RunPaths paths{cfg.output_dir};
  const Stopwatch clock;
  for (const auto& p : {cfg.train_path, cfg.test_path}) {
    if (!fs::exists(p)) throw Error("data file not found: " + p.string());
  }
  const AttackMap map = cfg.attack_map ? AttackMap::load(*cfg.attack_map) : AttackMap::builtin();
  const auto schema = DatasetSchema::nslkdd();

  ParseOptions opts;
  opts.attack_map = &map;
  const auto train = parse_nslkdd(cfg.train_path, schema, opts);
  const auto vocab = train.vocabulary();
  opts.split = SplitTag::test;
  opts.vocabulary = &vocab;
  const auto test = parse_nslkdd(cfg.test_path, schema, opts);

  manifest.record_input("train", cfg.train_path);
  manifest.record_input("test", cfg.test_path);
  if (cfg.attack_map) manifest.record_input("attack_map", *cfg.attack_map);
  write_cache(train, paths.train_cache(), manifest.json()["inputs"]["train"]["sha256"].get<std::string>());
  write_cache(test, paths.test_cache(), manifest.json()["inputs"]["test"]["sha256"].get<std::string>());

  IngestResult result{check_reference_counts(train), check_reference_counts(test), {}};
  if (!result.train.match) result.warnings.push_back("training class counts differ from the reference table");
  if (!result.test.match) result.warnings.push_back("test class counts differ from the reference table");

  json unseen = json::object();
  for (std::size_t f = 0; f < test.n_features(); ++f) {
    if (schema.features[f].kind != FeatureKind::categorical) continue;
    std::size_t n = 0;
    for (auto code : test.column(f).codes) n += code == kUnknownCode;
    unseen[schema.features[f].name] = n;
  }

  const bool match = result.train.match && result.test.match;
  const std::string summary = match ? "reference class counts: match (with noted total discrepancy)"
                                    : "reference class counts: MISMATCH (warning)";
  json report = {{"summary", summary},
                 {"attack_map_version", map.version},
                 {"train", count_report(train, result.train)},
                 {"test", count_report(test, result.test)},
                 {"test_rows_with_unseen_category", unseen},
                 {"warnings", result.warnings}};
  write_json(paths.ingest_report(), report);

  manifest.record_artifact(paths.train_cache());
  manifest.record_artifact(paths.test_cache());
  manifest.record_artifact(paths.ingest_report());
  manifest.record_stage("ingest", clock.seconds());
  manifest.save();

  log << "ingest: " << train.n_rows() << " train rows, " << test.n_rows() << " test rows\n" << summary << "\n";
  for (const auto& check : {result.train, result.test}) {
    for (const auto& n : check.notes) log << "  note: " << n << "\n";
  }
  for (const auto& w : result.warnings) log << "  warning: " << w << "\n";
  return result;
}

void cmd_tune(const RunConfig& cfg, std::ostream& log) {
  auto manifest = begin(cfg);
  const RunPaths paths{cfg.output_dir};
  const auto train = load_split(paths, SplitTag::train);
  const auto folds = run_folds(cfg, train);
  std::vector<std::string> errors;
  for (auto kind : cfg.learners) {
    const auto id = id_of(kind);
    const Stopwatch clock;
    const auto base = with_overrides(cfg, LearnerSpec::defaults(kind));
    const auto space = space_for(cfg, kind);

    SearchOptions opts;
    opts.budget = cfg.budget;
    opts.seed = derive_seed(cfg.seed, "tune:" + id);
    opts.cv_seed = cv_seed(cfg);
    const auto log_path = paths.trial_log(id);
    fs::create_directories(log_path.parent_path());
    SearchResult result;
    {
      std::ofstream trial_log(log_path, std::ios::trunc);
      if (!trial_log) throw Error("cannot write " + log_path.string());
      opts.trial_log = &trial_log;
      try {
        result = tune(train, base, space, folds, cfg.tune_metric, opts);
      } catch (const Error& e) {
        errors.push_back(id + ": " + e.what());
        log << "tune " << id << ": " << e.what() << "\n";
      }
    }
    // wall times make the log non-reproducible byte for byte
    manifest.record_artifact(log_path, false);
    if (result.trials.empty()) continue;

    const auto& best = result.best;
    const auto spec = apply_point(base, best.params);
    json doc = {{"learner", id},
                {"trial", best.id},
                {"params", best.params},
                {"metric", to_string(best.metric)},
                {"mean", best.mean},
                {"std", best.std},
                {"fold_metrics", best.fold_metrics},
                {"space", space.to_json()},
                {"spec", spec.to_json()}};
    write_json(paths.best_params(id), doc);
    manifest.record_artifact(paths.best_params(id));
    write_oof(cfg, paths, manifest, spec, folds, best.oof);
    manifest.record_stage("tune:" + id, clock.seconds());
    log << "tune " << id << ": best trial " << best.id << " " << to_string(best.metric) << " " << best.mean
        << " +- " << best.std << "\n";
  }
  manifest.save();
  if (!errors.empty()) {
    std::string msg = "tuning failed for";
    for (const auto& e : errors) msg += "\n  " + e;
    throw Error(msg);
  }
}

LearnerSpec resolve_spec(const RunConfig& cfg, LearnerKind kind) {
  if (cfg.mode == HyperMode::defaults) return with_overrides(cfg, LearnerSpec::defaults(kind));
  const auto p = RunPaths{cfg.output_dir}.best_params(id_of(kind));
  if (!fs::exists(p)) throw Error("no tuned parameters at " + p.string() + "; run `nidens tune` first");
  return with_overrides(cfg, LearnerSpec::from_json(load_json(p).at("spec")));
}

TrainResult cmd_train(const RunConfig& cfg, std::ostream& log) {
  auto manifest = begin(cfg);
  const RunPaths paths{cfg.output_dir};
  const auto train = load_split(paths, SplitTag::train);
  TrainResult result;
  json summary = json::object();
  for (auto kind : cfg.learners) {
    const auto id = id_of(kind);
    const Stopwatch clock;
    try {
      const auto spec = resolve_spec(cfg, kind);
      const auto model = train_learner(train, spec, derive_seed(cfg.seed, "train:" + id));
      write_file(paths.model(id), model.to_json().dump() + "\n");
      manifest.record_artifact(paths.model(id));
      const auto p = model.predict_proba(train);
      summary[id] = {{"train_scores", scores_json(train.labels(), p)}, {"spec", spec.to_json()}};
      result.trained.push_back(id);
      manifest.record_stage("train:" + id, clock.seconds());
      log << "train " << id << ": train accuracy " << summary[id]["train_scores"]["accuracy"].get<double>() << " ("
          << clock.seconds() << " s)\n";
    } catch (const Error& e) {
      result.failed[id] = e.what();
      log << "train " << id << " FAILED: " << e.what() << "\n";
    }
  }
  if (!result.trained.empty()) {
    const auto p = cfg.output_dir / "models" / "training_summary.json";
    write_json(p, {{"split", "train"}, {"note", kEvalNote[0]}, {"models", summary}, {"failed", result.failed}});
    manifest.record_artifact(p);
  }
  manifest.save();
  if (result.trained.empty()) throw Error("every learner failed to train");
  return result;
}

void cmd_stack(const RunConfig& cfg, std::ostream& log) {
  if (cfg.learners.size() < 2) throw Error("stacking needs at least two learners");
  auto manifest = begin(cfg);
  const RunPaths paths{cfg.output_dir};
  const Stopwatch clock;
  for (auto kind : cfg.learners) {
    if (!fs::exists(paths.model(id_of(kind)))) {
      throw Error("missing model file " + paths.model(id_of(kind)).string() + "; run `nidens train` first");
    }
  }
  const auto train = load_split(paths, SplitTag::train);
  const auto folds = run_folds(cfg, train);

  std::vector<std::string> ids;
  std::vector<TrainedModel> members;
  OofMatrix oof;
  for (auto kind : cfg.learners) {
    const auto id = id_of(kind);
    auto model = TrainedModel::from_json(load_json(paths.model(id)));
    auto cached = cached_oof(cfg, paths, model.spec, folds);
    if (!cached) {
      log << "stack: building out-of-fold predictions for " << id << "\n";
      cached = fold_oof(cfg, train, folds, model.spec);
      write_oof(cfg, paths, manifest, model.spec, folds, *cached);
    }
    oof.add(id, std::move(*cached));
    ids.push_back(id);
    members.push_back(std::move(model));
  }

  const auto stacked = assemble_stacked(train, ids, std::move(members), oof, folds, cfg.stacking);
  const auto dir = paths.stacked_dir();
  fs::create_directories(dir);
  save_stacked(stacked, dir);
  write_json(dir / "blend.json", stacked.blend.to_json());

  // OOF comparison of every candidate against the blend
  const auto labels = train.labels();
  OofMatrix candidates = oof;
  candidates.add(StackedModel::kMetaId, meta_oof(oof, labels, folds, cfg.stacking.meta_lambda));
  std::vector<double> blended(labels.size());
  std::vector<double> row(stacked.blend.member_ids.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = candidates.column(stacked.blend.member_ids[j])[r];
    blended[r] = stacked.blend.blend(row);
  }
  json cand = json::object();
  std::string best_id;
  double best_f1 = -1;
  for (std::size_t j = 0; j < candidates.model_ids.size(); ++j) {
    const auto& cid = candidates.model_ids[j];
    cand[cid] = scores_json(labels, candidates.columns[j]);
    const double f1 = cand[cid]["weighted_f1"].get<double>();
    if (cid != StackedModel::kMetaId && f1 > best_f1) best_f1 = f1, best_id = cid;
  }
  const auto blend_scores = scores_json(labels, blended);
  const double gain = 100.0 * (blend_scores["weighted_f1"].get<double>() - best_f1);
  write_json(dir / "oof_summary.json", {{"candidates", cand},
                                       {"ensemble", blend_scores},
                                       {"best_single", best_id},
                                       {"weighted_f1_gain_points", gain}});
  for (const auto& e : fs::directory_iterator(dir)) manifest.record_artifact(e.path());
  manifest.record_stage("stack", clock.seconds());
  manifest.save();
  log << "stack: OOF weighted F1 " << blend_scores["weighted_f1"].get<double>() << " vs best single (" << best_id
      << ") " << best_f1 << ", gain " << gain << " points\n";
}

std::vector<EvaluatedModel> cmd_evaluate(const RunConfig& cfg, SplitTag split, std::ostream& log) {
  auto manifest = begin(cfg);
  const RunPaths paths{cfg.output_dir};
  const Stopwatch clock;
  std::vector<std::pair<std::string, fs::path>> files;
  for (auto kind : cfg.learners) files.emplace_back(id_of(kind), paths.model(id_of(kind)));
  if (stacking_enabled(cfg)) files.emplace_back("stacked", paths.stacked_dir() / "stacked.json");
  std::string missing;
  for (const auto& [id, p] : files) {
    if (!fs::exists(p)) missing += "\n  " + p.string();
  }
  if (!missing.empty()) throw Error("missing model files:" + missing);

  const auto ds = load_split(paths, split);
  std::vector<EvaluatedModel> models;
  json entries = json::array();
  for (const auto& [id, p] : files) {
    std::vector<double> prob;
    std::string name;
    try {
      if (id == "stacked") {
        prob = predict_stacked(load_stacked(p), ds).prob_attack;
        name = "Stacked Ensemble";
      } else {
        const auto model = TrainedModel::from_json(load_json(p));
        prob = model.predict_proba(ds);
        name = display_name(model.spec.kind);
      }
    } catch (const SchemaError& e) {
      throw SchemaError("model " + id + " does not fit the " + std::string(to_string(split)) + " data: " + e.what());
    }
    auto metrics = evaluate_probabilities(ds.labels(), prob);
    entries.push_back({{"id", id}, {"name", name}, {"metrics", metrics.to_json()},
                       {"logloss", probability_logloss(ds.labels(), prob)}});
    models.push_back({name, std::move(metrics)});
  }
  const auto split_name = std::string(to_string(split));
  const auto out = paths.evaluation(split_name);
  write_json(out, {{"split", split_name},
                   {"note", kEvalNote[split == SplitTag::test]},
                   {"rows", ds.n_rows()},
                   {"models", entries}});
  manifest.record_artifact(out);
  manifest.record_stage("evaluate:" + split_name, clock.seconds());
  manifest.save();
  log << "evaluate on " << split_name << " (" << kEvalNote[split == SplitTag::test] << ")\n";
  print_table(log, models);
  return models;
}

ReportFiles cmd_report(const RunConfig& cfg, SplitTag split, std::ostream& log) {
  auto manifest = begin(cfg);
  const RunPaths paths{cfg.output_dir};
  const auto split_name = std::string(to_string(split));
  const auto src = paths.evaluation(split_name);
  if (!fs::exists(src)) throw Error("no evaluation at " + src.string() + "; run `nidens evaluate` first");
  const auto doc = load_json(src);
  std::vector<EvaluatedModel> models;
  for (const auto& m : doc.at("models")) {
    models.push_back({m.at("name").get<std::string>(), MetricsReport::from_json(m.at("metrics"))});
  }
  json learners = json::array();
  for (auto l : cfg.learners) learners.push_back(id_of(l));
  const json extra = {{"split", split_name},
                      {"note", doc.at("note")},
                      {"seed", cfg.seed},
                      {"mode", to_string(cfg.mode)},
                      {"k", cfg.k},
                      {"learners", learners},
                      {"config_sha256", manifest.json().at("config_sha256")}};
  const auto files = emit_report(models, paths.report_dir(split_name), extra);
  for (const auto& f : {files.metrics_csv, files.metrics_json, files.fig2_csv, files.fig3_csv}) {
    manifest.record_artifact(f);
  }
  manifest.save();
  log << "report (" << split_name << "): " << paths.report_dir(split_name).string() << "\n";
  return files;
}

void cmd_run(const RunConfig& cfg, std::ostream& log) {
  const Stopwatch clock;
  cmd_ingest(cfg, log);
  if (cfg.mode == HyperMode::tune) cmd_tune(cfg, log);
  const auto trained = cmd_train(cfg, log);
  if (!trained.failed.empty()) {
    std::string msg = "run stopped after training; failed learners:";
    for (const auto& [id, why] : trained.failed) msg += "\n  " + id + ": " + why;
    throw Error(msg);
  }
  if (stacking_enabled(cfg)) cmd_stack(cfg, log);
  for (auto split : {SplitTag::test, SplitTag::train}) {
    cmd_evaluate(cfg, split, log);
    cmd_report(cfg, split, log);
  }
  auto manifest = begin(cfg);
  manifest.record_stage("run", clock.seconds());
  manifest.save();
}

}  // namespace nidens
