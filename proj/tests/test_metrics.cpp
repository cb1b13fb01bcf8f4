#include <doctest.h>
#include <nlohmann/json.hpp>

#include <filesystem>

#include "nidens/error.hpp"
#include "nidens/hash.hpp"
#include "nidens/metrics.hpp"
#include "nidens/rng.hpp"

using namespace nidens;
namespace fs = std::filesystem;

namespace {

using Bytes = std::vector<std::uint8_t>;

// Scalar re-derivation straight from the 2x2 table.
struct Scalar {
  double acc, prec, rec, f1;
};

Scalar scalar_metrics(double tp1, double fp1, double fn1, double tn1) {
  const double n = tp1 + fp1 + fn1 + tn1;
  auto safe = [](double a, double b) { return b > 0 ? a / b : 0.0; };
  // class 1 and class 0 (tp0 = tn1, fp0 = fn1, fn0 = fp1)
  const double p1 = safe(tp1, tp1 + fp1), r1 = safe(tp1, tp1 + fn1);
  const double p0 = safe(tn1, tn1 + fn1), r0 = safe(tn1, tn1 + fp1);
  const double f1_1 = safe(2 * p1 * r1, p1 + r1), f1_0 = safe(2 * p0 * r0, p0 + r0);
  const double s1 = tp1 + fn1, s0 = tn1 + fp1;
  return {(tp1 + tn1) / n, (s1 * p1 + s0 * p0) / n, (s1 * r1 + s0 * r0) / n, (s1 * f1_1 + s0 * f1_0) / n};
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("nidens-metrics-" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("confusion counts") {
  Bytes y{1, 1, 0, 0};
  auto cc = confusion(y, Bytes{1, 0, 0, 1});
  CHECK(cc.classes[1].tp == 1);
  CHECK(cc.classes[1].fn == 1);
  CHECK(cc.classes[1].fp == 1);
  CHECK(cc.classes[1].tn == 1);

  auto ones = confusion(y, Bytes{1, 1, 1, 1});
  CHECK(ones.classes[1].tp == 2);
  CHECK(ones.classes[1].fp == 2);

  auto perfect = confusion(y, y);
  for (const auto& c : perfect.classes) {
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
    CHECK(c.tp == c.support);
  }
  CHECK_THROWS_AS(confusion(y, Bytes{1}), Error);
}

TEST_CASE("hand-evaluated metrics") {
  Bytes y{1, 1, 0, 0};
  auto rep = compute_metrics(confusion(y, Bytes{1, 0, 0, 1}));
  CHECK(rep.accuracy == 0.5);
  CHECK(rep.precision == 0.5);
  CHECK(rep.recall == 0.5);
  CHECK(rep.f1 == 0.5);
  CHECK(rep.false_positive_rate == 0.5);

  auto perfect = compute_metrics(confusion(y, y));
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);
  CHECK_FALSE(perfect.any_undefined);

  CHECK_THROWS_AS(compute_metrics(confusion(Bytes{}, Bytes{})), Error);
}

TEST_CASE("undefined precision counts as zero and is flagged") {
  auto rep = compute_metrics(confusion(Bytes{1, 1, 0, 0}, Bytes{1, 1, 1, 1}));
  CHECK(rep.per_class[0].precision_undefined);
  CHECK(rep.per_class[0].precision == 0.0);
  CHECK(rep.any_undefined);
  CHECK(rep.precision == doctest::Approx(0.25));
}

TEST_CASE("all-attack predictor on the reference test composition") {
  Bytes y(22544, 1);
  std::fill(y.begin(), y.begin() + 9711, 0);
  auto rep = compute_metrics(confusion(y, Bytes(y.size(), 1)));
  CHECK(rep.accuracy == doctest::Approx(12833.0 / 22544.0).epsilon(1e-12));
  CHECK(rep.accuracy == doctest::Approx(0.5692).epsilon(1e-4));
}

TEST_CASE("metrics match a scalar oracle on random tables") {
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.below(60));
    Bytes y(n), p(n);
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t r = 0; r < n; ++r) {
      y[r] = static_cast<std::uint8_t>(rng.below(2));
      p[r] = static_cast<std::uint8_t>(rng.below(2));
      (y[r] ? (p[r] ? tp : fn) : (p[r] ? fp : tn)) += 1;
    }
    auto rep = compute_metrics(confusion(y, p));
    auto ref = scalar_metrics(tp, fp, fn, tn);
    REQUIRE(std::abs(rep.accuracy - ref.acc) <= 1e-12);
    REQUIRE(std::abs(rep.precision - ref.prec) <= 1e-12);
    REQUIRE(std::abs(rep.recall - ref.rec) <= 1e-12);
    REQUIRE(std::abs(rep.f1 - ref.f1) <= 1e-12);
    // Weighted recall is accuracy.
    REQUIRE(std::abs(rep.recall - rep.accuracy) <= 1e-12);
    // Weighted metrics are convex combinations of the per-class ones.
    REQUIRE(rep.precision >= std::min(rep.per_class[0].precision, rep.per_class[1].precision) - 1e-12);
    REQUIRE(rep.precision <= std::max(rep.per_class[0].precision, rep.per_class[1].precision) + 1e-12);
    REQUIRE(rep.f1 >= std::min(rep.per_class[0].f1, rep.per_class[1].f1) - 1e-12);
    REQUIRE(rep.f1 <= std::max(rep.per_class[0].f1, rep.per_class[1].f1) + 1e-12);
  }
}

TEST_CASE("probability thresholding and logloss") {
  Bytes y{1, 0, 1};
  std::vector<double> p{0.5, 0.49, 0.9};
  CHECK(threshold_predictions(p) == Bytes{1, 0, 1});
  CHECK(metric_value(MetricId::accuracy, y, p) == 1.0);
  const double ll = -(std::log(0.5) + std::log(0.51) + std::log(0.9)) / 3.0;
  CHECK(probability_logloss(y, p) == doctest::Approx(ll).epsilon(1e-12));
  CHECK(metric_score(MetricId::logloss, y, p) == doctest::Approx(-ll).epsilon(1e-12));
  CHECK(metric_from_string("weighted_f1") == MetricId::weighted_f1);
  CHECK_THROWS_AS(metric_from_string("auc"), Error);
}

TEST_CASE("report files follow the table layout") {
  auto make = [](const std::string& name, double acc) {
    MetricsReport r;
    r.accuracy = acc;
    r.precision = acc + 0.04;
    r.recall = acc;
    r.f1 = acc - 0.005;
    return EvaluatedModel{name, r};
  };
  std::vector<EvaluatedModel> models{make("Stacked Ensemble", 0.9), make("LGBM", 0.78), make("XGBoost", 0.8),
                                     make("Random Forest", 0.781), make("CatBoost", 0.799)};
  auto dir = scratch_dir("five");
  auto files = emit_report(models, dir, {{"seed", 1}});
  const auto csv = read_file(files.metrics_csv);
  CHECK(csv ==
        "model,accuracy,precision,recall,f1\n"
        "Random Forest,78,82,78,78\n"
        "XGBoost,80,84,80,80\n"
        "CatBoost,80,84,80,79\n"
        "LGBM,78,82,78,78\n"
        "Stacked Ensemble,90,94,90,90\n");
  auto doc = nlohmann::json::parse(read_file(files.metrics_json));
  CHECK(doc["models"].size() == 5);
  CHECK(doc["models"][4]["gap_percent_points"]["accuracy"].get<double>() == doctest::Approx(0.0));
  CHECK(doc["models"][0]["metrics"]["accuracy"].get<double>() == 0.781);
  const auto fig2 = read_file(files.fig2_csv);
  CHECK(fig2.find("Stacked Ensemble") == std::string::npos);
  CHECK(fig2.rfind("model,metric,value\n", 0) == 0);
  CHECK(read_file(files.fig3_csv).find("Stacked Ensemble,accuracy,90,ensemble") != std::string::npos);

  // Same inputs, same bytes.
  auto again = emit_report(models, scratch_dir("again"), {{"seed", 1}});
  CHECK(read_file(again.metrics_csv) == csv);
  CHECK(read_file(again.fig3_csv) == read_file(files.fig3_csv));

  auto one = emit_report({make("XGBoost", 0.8)}, scratch_dir("one"), {});
  CHECK(read_file(one.metrics_csv) == "model,accuracy,precision,recall,f1\nXGBoost,80,84,80,80\n");
  CHECK_THROWS_AS(emit_report({}, dir, {}), Error);
}

TEST_CASE("unwritable report directory") {
  auto blocker = scratch_dir("blocker");
  fs::create_directories(blocker.parent_path());
  write_file(blocker, "not a directory");
  MetricsReport r;
  CHECK_THROWS_AS(emit_report({{"XGBoost", r}}, blocker / "sub", {}), Error);
  fs::remove(blocker);
}
