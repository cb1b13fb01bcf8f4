#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nidens/learner.hpp"
#include "nidens/metrics.hpp"
#include "nidens/search.hpp"

namespace nidens {

/// Out-of-fold attack probabilities, one column per model, all produced under
/// one fold plan.
struct OofMatrix {
  std::vector<std::string> model_ids;
  std::vector<std::vector<double>> columns;  // [model][row]
  std::size_t n_rows = 0;

  /// Throws Error on a length mismatch or a value outside [0, 1].
  void add(std::string id, std::vector<double> column);
  const std::vector<double>& column(std::string_view id) const;
};

using NamedSpec = std::pair<std::string, LearnerSpec>;

/// Column j is cross_validate(specs[j]).oof. A failed fold run throws
/// Error naming the model.
OofMatrix build_oof(const Dataset& ds, std::span<const NamedSpec> specs, const FoldPlan& folds, std::uint64_t seed);

/// Logistic regression over the base models' log-odds.
struct MetaLearner {
  std::vector<double> weights;
  double intercept = 0.0;
  double lambda = 1e-3;
  std::size_t iterations = 0;
  bool converged = false;

  double predict(std::span<const double> member_probs) const;
  nlohmann::json to_json() const;
  static MetaLearner from_json(const nlohmann::json& j);
};

/// Probability clamped to [1e-15, 1 - 1e-15] and mapped to log-odds.
double clamped_logit(double p) noexcept;

/// Newton's method on sum_i logloss + lambda/2 ||w||^2 (intercept not
/// penalized); stops when ||gradient|| < 1e-8 or after 1000 iterations.
/// `rows` restricts the fit (all rows when empty). Throws Error on
/// non-finite input or fewer than 2 columns.
MetaLearner fit_meta(const OofMatrix& oof, std::span<const std::uint8_t> labels, double lambda = 1e-3,
                     std::span<const std::size_t> rows = {});

/// Cross-fitted meta predictions: fold f's rows are scored by a meta learner
/// fitted on the other folds.
std::vector<double> meta_oof(const OofMatrix& oof, std::span<const std::uint8_t> labels, const FoldPlan& folds,
                             double lambda = 1e-3);

struct EnsembleBlend {
  std::vector<std::string> member_ids;
  std::vector<double> weights;  // non-negative, summing to 1
  std::vector<std::size_t> selections;  // hill-climb trace, indices into member_ids
  MetricId metric = MetricId::weighted_f1;
  double oof_metric = 0.0;  // natural orientation

  double blend(std::span<const double> member_probs) const;
  nlohmann::json to_json() const;
  static EnsembleBlend from_json(const nlohmann::json& j);
};

/// Greedy selection with replacement, starting from the best single
/// candidate; weights are selection frequencies.
EnsembleBlend greedy_blend(const OofMatrix& candidates, std::span<const std::uint8_t> labels,
                           MetricId metric = MetricId::weighted_f1, std::size_t max_iters = 50);

struct StackedModel {
  std::vector<std::string> member_ids;
  std::vector<TrainedModel> members;  // refit on the full training set
  MetaLearner meta;
  EnsembleBlend blend;  // over member_ids plus "meta"
  nlohmann::json provenance;

  static constexpr const char* kMetaId = "meta";
};

struct StackedPrediction {
  std::vector<double> prob_attack;
  std::vector<std::uint8_t> label;
  /// [member][row]; members in member_ids order followed by the meta learner.
  std::vector<std::vector<double>> member_probs;
};

struct StackOptions {
  double meta_lambda = 1e-3;
  MetricId blend_metric = MetricId::weighted_f1;
  std::size_t max_iters = 50;
};

/// Fits the meta learner and the blend on `oof` only (the meta learner's own
/// candidate column is cross-fitted), then refits every spec on all of `train`.
StackedModel fit_stacked(const Dataset& train, std::span<const NamedSpec> specs, const OofMatrix& oof,
                         const FoldPlan& folds, const StackOptions& opts, std::uint64_t seed);

/// Same, with members already trained on `train`, in `oof` column order.
StackedModel assemble_stacked(const Dataset& train, std::vector<std::string> ids, std::vector<TrainedModel> members,
                              const OofMatrix& oof, const FoldPlan& folds, const StackOptions& opts);

StackedPrediction predict_stacked(const StackedModel& model, const Dataset& ds);

/// Writes one file per member plus stacked.json, which names each member
/// file with its SHA-256. Returns the path of stacked.json.
std::filesystem::path save_stacked(const StackedModel& model, const std::filesystem::path& dir);
/// Loads stacked.json and its members; throws Error when a member's hash
/// does not match.
StackedModel load_stacked(const std::filesystem::path& stacked_json);

}  // namespace nidens
