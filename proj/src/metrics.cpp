#include "nidens/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nidens/error.hpp"
#include "nidens/hash.hpp"

namespace nidens {

using nlohmann::json;

ConfusionCounts confusion(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> predictions,
                          std::size_t m) {
  if (labels.size() != predictions.size()) throw Error("labels and predictions differ in length");
  if (m < 2) throw Error("need at least two classes");
  ConfusionCounts cc;
  cc.m = m;
  cc.n = labels.size();
  cc.classes.resize(m);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= m || predictions[r] >= m) throw Error("class id out of range at row " + std::to_string(r));
  }
  for (std::size_t i = 0; i < m; ++i) {
    auto& c = cc.classes[i];
    for (std::size_t r = 0; r < labels.size(); ++r) {
      const bool actual = labels[r] == i;
      const bool predicted = predictions[r] == i;
      if (actual && predicted) ++c.tp;
      else if (actual) ++c.fn;
      else if (predicted) ++c.fp;
      else ++c.tn;
    }
    c.support = c.tp + c.fn;
  }
  return cc;
}

MetricsReport compute_metrics(const ConfusionCounts& cc) {
  if (cc.n == 0) throw Error("no evaluated rows");
  MetricsReport rep;
  rep.n = cc.n;
  double correct = 0.0, total_support = 0.0;
  for (const auto& c : cc.classes) {
    ClassMetrics cm;
    cm.support = c.support;
    const double tp = static_cast<double>(c.tp);
    if (c.tp + c.fp == 0) cm.precision_undefined = true;
    else cm.precision = tp / static_cast<double>(c.tp + c.fp);
    if (c.tp + c.fn == 0) cm.recall_undefined = true;
    else cm.recall = tp / static_cast<double>(c.tp + c.fn);
    cm.f1 = cm.precision + cm.recall > 0.0 ? 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall) : 0.0;
    rep.any_undefined = rep.any_undefined || cm.precision_undefined || cm.recall_undefined;

    const double w = static_cast<double>(c.support);
    rep.precision += w * cm.precision;
    rep.recall += w * cm.recall;
    rep.f1 += w * cm.f1;
    total_support += w;
    correct += tp;
    rep.per_class.push_back(cm);
  }
  rep.precision /= total_support;
  rep.recall /= total_support;
  rep.f1 /= total_support;
  rep.accuracy = correct / static_cast<double>(cc.n);
  if (cc.m == 2) {
    const auto& attack = cc.classes[1];
    const auto negatives = attack.fp + attack.tn;
    rep.false_positive_rate = negatives ? static_cast<double>(attack.fp) / static_cast<double>(negatives) : 0.0;
  }
  return rep;
}

json MetricsReport::to_json() const {
  json classes = json::array();
  for (const auto& c : per_class) {
    classes.push_back({{"precision", c.precision},
                       {"recall", c.recall},
                       {"f1", c.f1},
                       {"support", c.support},
                       {"precision_undefined", c.precision_undefined},
                       {"recall_undefined", c.recall_undefined}});
  }
  return {{"accuracy", accuracy},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1},
          {"false_positive_rate", false_positive_rate},
          {"n", n},
          {"any_undefined", any_undefined},
          {"per_class", std::move(classes)}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.false_positive_rate = j.at("false_positive_rate").get<double>();
  r.n = j.at("n").get<std::size_t>();
  r.any_undefined = j.at("any_undefined").get<bool>();
  for (const auto& c : j.at("per_class")) {
    r.per_class.push_back({c.at("precision").get<double>(), c.at("recall").get<double>(), c.at("f1").get<double>(),
                           c.at("support").get<std::size_t>(), c.at("precision_undefined").get<bool>(),
                           c.at("recall_undefined").get<bool>()});
  }
  return r;
}

std::vector<std::uint8_t> threshold_predictions(std::span<const double> prob_attack) {
  std::vector<std::uint8_t> out(prob_attack.size());
  for (std::size_t i = 0; i < prob_attack.size(); ++i) out[i] = prob_attack[i] >= 0.5 ? 1 : 0;
  return out;
}

MetricsReport evaluate_probabilities(std::span<const std::uint8_t> labels, std::span<const double> prob_attack) {
  return compute_metrics(confusion(labels, threshold_predictions(prob_attack)));
}

std::string_view to_string(MetricId m) {
  switch (m) {
    case MetricId::accuracy: return "accuracy";
    case MetricId::weighted_f1: return "weighted_f1";
    case MetricId::logloss: return "logloss";
  }
  return "?";
}

MetricId metric_from_string(std::string_view s) {
  if (s == "accuracy") return MetricId::accuracy;
  if (s == "weighted_f1" || s == "f1") return MetricId::weighted_f1;
  if (s == "logloss") return MetricId::logloss;
  throw Error("unknown metric: " + std::string(s));
}

double probability_logloss(std::span<const std::uint8_t> labels, std::span<const double> prob_attack) {
  if (labels.size() != prob_attack.size()) throw Error("labels and probabilities differ in length");
  if (labels.empty()) throw Error("no evaluated rows");
  constexpr double eps = 1e-15;
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(prob_attack[i], eps, 1.0 - eps);
    sum -= labels[i] ? std::log(p) : std::log1p(-p);
  }
  return sum / static_cast<double>(labels.size());
}

double metric_value(MetricId m, std::span<const std::uint8_t> labels, std::span<const double> prob_attack) {
  switch (m) {
    case MetricId::accuracy: return evaluate_probabilities(labels, prob_attack).accuracy;
    case MetricId::weighted_f1: return evaluate_probabilities(labels, prob_attack).f1;
    case MetricId::logloss: return probability_logloss(labels, prob_attack);
  }
  return 0.0;
}

double metric_score(MetricId m, std::span<const std::uint8_t> labels, std::span<const double> prob_attack) {
  const double v = metric_value(m, labels, prob_attack);
  return m == MetricId::logloss ? -v : v;
}

const std::vector<PublishedScores>& published_scores() {
  static const std::vector<PublishedScores> scores{
      {"Random Forest", 78, 84, 78, 78}, {"XGBoost", 80, 85, 80, 80},          {"CatBoost", 80, 85, 80, 80},
      {"LGBM", 78, 84, 78, 78},          {"Stacked Ensemble", 90, 90, 89, 89},
  };
  return scores;
}

std::vector<EvaluatedModel> table_order(std::vector<EvaluatedModel> models) {
  auto rank = [](const std::string& name) {
    const auto& ref = published_scores();
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (ref[i].name == name) return i;
    }
    return ref.size();
  };
  std::stable_sort(models.begin(), models.end(),
                   [&](const EvaluatedModel& a, const EvaluatedModel& b) { return rank(a.name) < rank(b.name); });
  return models;
}

int percent(double fraction) { return static_cast<int>(std::lround(fraction * 100.0)); }

ReportFiles emit_report(const std::vector<EvaluatedModel>& models, const std::filesystem::path& out_dir,
                        const json& extra) {
  if (models.empty()) throw Error("report needs at least one evaluated model");
  const auto ordered = table_order(models);

  std::ostringstream csv;
  csv << "model,accuracy,precision,recall,f1\n";
  for (const auto& m : ordered) {
    csv << m.name << ',' << percent(m.metrics.accuracy) << ',' << percent(m.metrics.precision) << ','
        << percent(m.metrics.recall) << ',' << percent(m.metrics.f1) << '\n';
  }

  auto plot_rows = [](std::ostringstream& os, const EvaluatedModel& m, const char* group) {
    const std::pair<const char*, double> metrics[] = {{"accuracy", m.metrics.accuracy},
                                                      {"precision", m.metrics.precision},
                                                      {"recall", m.metrics.recall},
                                                      {"f1", m.metrics.f1}};
    for (auto [metric, value] : metrics) {
      os << m.name << ',' << metric << ',' << percent(value);
      if (group != nullptr) os << ',' << group;
      os << '\n';
    }
  };
  std::ostringstream fig2, fig3;
  fig2 << "model,metric,value\n";
  fig3 << "model,metric,value,group\n";
  for (const auto& m : ordered) {
    const bool ensemble = m.name == "Stacked Ensemble";
    if (!ensemble) plot_rows(fig2, m, nullptr);
    plot_rows(fig3, m, ensemble ? "ensemble" : "single");
  }

  json rows = json::array();
  for (const auto& m : ordered) {
    json row = {{"model", m.name}, {"metrics", m.metrics.to_json()}};
    for (const auto& ref : published_scores()) {
      if (ref.name != m.name) continue;
      row["published_percent"] = {
          {"accuracy", ref.accuracy}, {"precision", ref.precision}, {"recall", ref.recall}, {"f1", ref.f1}};
      row["gap_percent_points"] = {{"accuracy", 100.0 * m.metrics.accuracy - ref.accuracy},
                                   {"precision", 100.0 * m.metrics.precision - ref.precision},
                                   {"recall", 100.0 * m.metrics.recall - ref.recall},
                                   {"f1", 100.0 * m.metrics.f1 - ref.f1}};
    }
    rows.push_back(std::move(row));
  }
  json doc = {{"schema_version", 1}, {"models", std::move(rows)}, {"run", extra}};

  ReportFiles files{out_dir / "metrics.csv", out_dir / "metrics.json", out_dir / "fig2_model_evaluation.csv",
                    out_dir / "fig3_single_vs_ensemble.csv"};
  try {
    write_file(files.metrics_csv, csv.str());
    write_file(files.metrics_json, doc.dump(2) + "\n");
    write_file(files.fig2_csv, fig2.str());
    write_file(files.fig3_csv, fig3.str());
  } catch (const std::exception& e) {
    throw Error("cannot write report to " + out_dir.string() + ": " + e.what());
  }
  return files;
}

}  // namespace nidens
