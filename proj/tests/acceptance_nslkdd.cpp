// Acceptance checks on the real NSL-KDD files. Exits 77 (skipped) when the
// files are not present; see scripts/fetch_nslkdd.sh.
//
//   acceptance_nslkdd [--data-dir DIR] [--full]
//
// DIR defaults to $NIDENS_DATA_DIR, then data/nslkdd in the source tree.
// --full adds the tuned pipeline (10 trials per learner, k = 10) and its time limit.

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>
#include <thread>

#include "acceptance.hpp"
#include "nidens/hash.hpp"
#include "nidens/parallel.hpp"
#include "nidens/pipeline.hpp"
#include "nidens/rng.hpp"

using namespace nidens;
using namespace nidens::acceptance;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kIngestSeconds = 30.0;
constexpr double kAccuracyBand = 6.0;  // percentage points
constexpr double kStackGainPoints = 1.0;
constexpr double kGbdtSeconds = 180.0;
constexpr double kPipelineSeconds = 45 * 60.0;
constexpr std::size_t kReferenceCores = 8;

std::map<std::string, std::string> deterministic_files(const fs::path& dir) {
  const auto doc = json::parse(read_file(dir / "manifest.json"));
  std::map<std::string, std::string> m;
  for (const auto& [rel, e] : doc.at("artifacts").items()) {
    if (e.at("deterministic").get<bool>()) m[rel] = sha256_file(dir / rel);
  }
  return m;
}

void ingest_checks(Ledger& out, const RunConfig& cfg) {
  std::ostringstream log;
  const Timer t;
  const auto r = cmd_ingest(cfg, log);
  const double s = t.seconds();
  bool noted = false;
  for (const auto& n : r.test.notes) noted |= n.find("22543") != std::string::npos;
  std::string counts;
  for (auto v : r.train.observed) counts += std::to_string(v) + "/";
  counts.back() = ' ';
  counts += "| ";
  for (auto v : r.test.observed) counts += std::to_string(v) + "/";
  counts.pop_back();
  out.check("1", "class counts, train and test", r.train.match && r.test.match && noted && s < kIngestSeconds,
            counts + "; total discrepancy " + (noted ? "logged" : "NOT logged") +
                fmt("; %.1f s (limit 30 s)", s));

  const auto train = read_cache(RunPaths{cfg.output_dir}.train_cache());
  const auto folds = make_folds(train.labels(), 10, derive_seed(cfg.seed, "folds"));
  const auto labels = train.labels();
  double pos = 0;
  for (auto y : labels) pos += y;
  const double global = pos / static_cast<double>(labels.size());
  bool ok = true;
  double worst = 0, bound = 0;
  for (std::size_t f = 0; f < 10; ++f) {
    const auto rows = folds.valid_rows(f);
    double p = 0;
    for (auto row : rows) p += labels[row];
    const double dev = std::abs(p / rows.size() - global);
    bound = 1.0 / static_cast<double>(rows.size());
    ok &= dev <= bound;
    worst = std::max(worst, dev);
  }
  out.check("6", "stratification on the training file, k=10", ok,
            fmt("max |fold rate - global| %.2e vs 1/fold_size %.2e", worst, bound));
}

void accuracy_checks(Ledger& out, const fs::path& run) {
  const auto report = json::parse(read_file(run / "reports/test/metrics.json"));
  const std::map<std::string, double> published{
      {"Random Forest", 78}, {"XGBoost", 80}, {"CatBoost", 80}, {"LGBM", 78}};
  double best_single_f1 = 0, stacked_f1 = 0;
  for (const auto& m : report.at("models")) {
    const auto name = m.at("model").get<std::string>();
    const double acc = 100 * m.at("metrics").at("accuracy").get<double>();
    const double f1 = 100 * m.at("metrics").at("f1").get<double>();
    if (published.count(name)) {
      best_single_f1 = std::max(best_single_f1, f1);
    } else {
      stacked_f1 = f1;
    }
    if (!published.count(name)) {
      out.record("2", "stacked test accuracy / F1 vs 90 / 89", Verdict::info,
                 fmt("accuracy %.2f, weighted F1 %.2f; gap %+.2f / %+.2f points", acc,
                     100 * m.at("metrics").at("f1").get<double>(), acc - 90,
                     100 * m.at("metrics").at("f1").get<double>() - 89));
      continue;
    }
    const double ref = published.at(name);
    out.check("2", "test accuracy within 6 points: " + name, std::abs(acc - ref) <= kAccuracyBand,
              fmt("%.2f vs %.0f (gap %+.2f)", acc, ref, acc - ref));
  }
  out.record("2", "stacked minus best single, test weighted F1", Verdict::info,
             fmt("%+.2f points", stacked_f1 - best_single_f1));
  const auto summary = json::parse(read_file(run / "models/stacked/oof_summary.json"));
  const double gain = summary.at("weighted_f1_gain_points").get<double>();
  out.check("2", "stacked OOF weighted F1 >= best single + 1 point", gain >= kStackGainPoints,
            fmt("gain %+.3f points; best single OOF weighted F1 %.4f, ensemble %.4f", gain,
                summary.at("candidates").at(summary.at("best_single").get<std::string>()).at("weighted_f1").get<double>(),
                summary.at("ensemble").at("weighted_f1").get<double>()));
}

}  // namespace

int main(int argc, char** argv) {
  fs::path data_dir;
  bool full = false;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--data-dir") && i + 1 < argc) {
      data_dir = argv[++i];
    } else if (!std::strcmp(argv[i], "--full")) {
      full = true;
    }
  }
  if (data_dir.empty()) {
    const char* env = std::getenv("NIDENS_DATA_DIR");
    data_dir = env && *env ? fs::path(env) : fs::path(NIDENS_DATA_DIR) / "nslkdd";
  }
  Ledger out;
  const auto train_file = data_dir / "KDDTrain+.txt";
  const auto test_file = data_dir / "KDDTest+.txt";
  if (!fs::exists(train_file) || !fs::exists(test_file)) {
    const std::string why = "NSL-KDD files not found in " + data_dir.string();
    for (const char* c : {"1", "2", "6", "9"}) out.record(c, "real-data criterion", Verdict::blocked, why);
    return 77;
  }

  const auto root = fs::temp_directory_path() / "nidens_acceptance_nslkdd";
  fs::remove_all(root);
  RunConfig cfg;
  cfg.train_path = train_file;
  cfg.test_path = test_file;
  cfg.output_dir = root / "defaults_t1";
  cfg.threads = 1;
  ingest_checks(out, cfg);

  // single GBDT timing on the real training file
  {
    set_num_threads(0);
    const auto train = read_cache(RunPaths{cfg.output_dir}.train_cache());
    auto spec = LearnerSpec::defaults(LearnerKind::xgb);
    spec.boost.early_stopping_patience = 0;
    const Timer t;
    train_learner(train, spec, 1);
    out.check("2", "single GBDT, 200 trees depth 8", t.seconds() <= kGbdtSeconds,
              fmt("%.1f s on %.0f thread(s) (limit 180 s)", t.seconds(), num_threads()));
  }

  std::ostringstream log;
  cmd_run(cfg, log);
  accuracy_checks(out, cfg.output_dir);

  auto cfg8 = cfg;
  cfg8.threads = 8;
  cfg8.output_dir = root / "defaults_t8";
  cmd_run(cfg8, log);
  const auto a = deterministic_files(cfg.output_dir);
  const auto b = deterministic_files(cfg8.output_dir);
  std::size_t differing = a.size() != b.size();
  for (const auto& [rel, h] : a) differing += !b.count(rel) || b.at(rel) != h;
  out.check("9", "determinism, threads 1 vs 8", differing == 0,
            fmt("%.0f artifacts compared, %.0f differ", a.size(), differing));

  if (full) {
    auto tuned = cfg;
    tuned.mode = HyperMode::tune;
    tuned.budget = 10;
    tuned.threads = 0;
    tuned.output_dir = root / "tuned";
    const Timer t;
    cmd_run(tuned, log);
    const double s = t.seconds();
    const std::size_t cores = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (cores < kReferenceCores) {
      out.record("2", "full pipeline <= 45 min on 8 cores", Verdict::blocked,
                 fmt("%.0f s measured on %.0f core(s); the limit is stated for 8", s, cores));
    } else {
      out.check("2", "full pipeline <= 45 min on 8 cores", s <= kPipelineSeconds, fmt("%.0f s", s));
    }
    accuracy_checks(out, tuned.output_dir);
  } else {
    out.record("2", "full pipeline <= 45 min on 8 cores", Verdict::info, "not run; pass --full");
  }
  return out.failed() ? 1 : 0;
}
