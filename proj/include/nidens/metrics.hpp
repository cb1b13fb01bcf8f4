#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nidens {

struct ClassCounts {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t support = 0;  // |Y_i| = tp + fn
};

/// One-vs-rest counts for each of m classes.
struct ConfusionCounts {
  std::size_t m = 2;
  std::size_t n = 0;
  std::vector<ClassCounts> classes;
};

ConfusionCounts confusion(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> predictions,
                          std::size_t m = 2);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  bool precision_undefined = false;  // tp + fp == 0
  bool recall_undefined = false;     // tp + fn == 0
};

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;  // support-weighted
  double recall = 0.0;
  double f1 = 0.0;
  double false_positive_rate = 0.0;  // attack task, m = 2 only
  std::size_t n = 0;
  std::vector<ClassMetrics> per_class;
  bool any_undefined = false;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// Accuracy = sum tp_i / n; weighted metrics = sum |Y_i| metric_i / sum |Y_i|.
/// Undefined per-class ratios count as 0 and are flagged. Throws Error when n == 0.
MetricsReport compute_metrics(const ConfusionCounts& cc);

/// Thresholds probabilities at 0.5 (ties predict attack) and scores them.
MetricsReport evaluate_probabilities(std::span<const std::uint8_t> labels, std::span<const double> prob_attack);
std::vector<std::uint8_t> threshold_predictions(std::span<const double> prob_attack);

/// Selectable scalar metrics. Larger is better for all of them; logloss is
/// reported negated under `score`.
enum class MetricId : std::uint8_t { accuracy, weighted_f1, logloss };
std::string_view to_string(MetricId m);
MetricId metric_from_string(std::string_view s);
/// The metric in its natural orientation (logloss positive).
double metric_value(MetricId m, std::span<const std::uint8_t> labels, std::span<const double> prob_attack);
/// Orientation where larger is better.
double metric_score(MetricId m, std::span<const std::uint8_t> labels, std::span<const double> prob_attack);
double probability_logloss(std::span<const std::uint8_t> labels, std::span<const double> prob_attack);

struct EvaluatedModel {
  std::string name;
  MetricsReport metrics;
};

/// Reference scores reported for the published system, in percent.
struct PublishedScores {
  std::string name;
  int accuracy, precision, recall, f1;
};
const std::vector<PublishedScores>& published_scores();

/// Canonical table order: Random Forest, XGBoost, CatBoost, LGBM, Stacked
/// Ensemble; unknown names follow in input order.
std::vector<EvaluatedModel> table_order(std::vector<EvaluatedModel> models);

struct ReportFiles {
  std::filesystem::path metrics_csv;
  std::filesystem::path metrics_json;
  std::filesystem::path fig2_csv;
  std::filesystem::path fig3_csv;
};

/// Writes metrics.csv (integer percentages), metrics.json (full precision,
/// with gaps to the published scores), and two plot-data CSVs. `extra` is
/// merged into metrics.json under "run". Throws Error if the directory
/// cannot be written.
ReportFiles emit_report(const std::vector<EvaluatedModel>& models, const std::filesystem::path& out_dir,
                        const nlohmann::json& extra);

/// Integer percent, rounding half away from zero.
int percent(double fraction);

}  // namespace nidens
