#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nidens/forest.hpp"
#include "nidens/tree.hpp"

namespace nidens {

enum class BoostProfile : std::uint8_t { xgb, cat, lgbm };

std::string_view to_string(BoostProfile p);
BoostProfile boost_profile_from_string(std::string_view s);

struct BoostParams {
  BoostProfile profile = BoostProfile::xgb;
  double learning_rate = 0.3;
  std::size_t n_rounds = 200;
  GrowthPolicy growth = GrowthPolicy::depth_wise(6);
  RegularizationParams reg;
  double subsample = 1.0;         // rows drawn per round (bagging_fraction)
  double colsample_bytree = 1.0;  // features drawn per round (feature_fraction)
  double rsm = 1.0;               // features drawn per split
  std::size_t early_stopping_patience = 20;  // 0 disables early stopping
  double validation_fraction = 0.1;          // carve-out used when no holdout is given
  std::optional<double> base_score;          // log-odds; training rate when unset
  std::size_t ordered_folds = 2;             // cat profile only

  /// Profile defaults with the published settings filled in.
  static BoostParams defaults(BoostProfile profile);

  void validate() const;
  nlohmann::json to_json() const;
  static BoostParams from_json(const nlohmann::json& j);
};

/// Sets a hyperparameter by name. Accepts the upstream aliases (eta,
/// depth, l2_leaf_reg, bagging_fraction, feature_fraction, ...). Throws
/// Error on an unknown name.
void set_boost_param(BoostParams& params, std::string_view name, double value);

struct GradHess {
  std::vector<double> g;
  std::vector<double> h;
};

double sigmoid(double x) noexcept;
/// -[y log p + (1-y) log(1-p)] with p = sigmoid(raw), computed stably.
double logloss(std::uint8_t y, double raw) noexcept;
double mean_logloss(std::span<const std::uint8_t> labels, std::span<const double> raw);
GradHess logloss_grad_hess(std::span<const std::uint8_t> labels, std::span<const double> raw_scores);

struct BoostLog {
  std::vector<double> train_loss;  // mean logloss after each round
  std::vector<double> valid_loss;  // empty without validation
  std::size_t best_round = 0;      // 1-based count of kept trees
  bool stopped_early = false;
};

struct BoostedModel {
  BoostProfile profile = BoostProfile::xgb;
  BoostParams params;
  double base_score = 0.0;  // log-odds
  double learning_rate = 0.0;
  std::vector<DecisionTree> trees;  // unscaled leaf values
  BoostLog log;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static BoostedModel from_json(const nlohmann::json& j);
};

struct Holdout {
  const BinnedView* view = nullptr;
  std::span<const std::uint8_t> labels;
};

/// Records, per round, the raw score each training row's gradient was
/// computed from. Filled by the cat profile only.
struct OrderedTrace {
  std::vector<std::size_t> fold_of_row;
  std::vector<std::vector<double>> gradient_scores;
};

struct RowSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
};

/// Per class, round(fraction * n_class) rows go to `valid`. Both lists sorted.
RowSplit stratified_holdout(std::span<const std::uint8_t> labels, double fraction, std::uint64_t seed);

BoostedModel train_boosted(const BinnedView& view, std::span<const std::uint8_t> labels, const BoostParams& params,
                           std::uint64_t seed, const Holdout* valid = nullptr, OrderedTrace* trace = nullptr);

struct BoostPrediction {
  int label = 0;
  double prob_attack = 0.0;
  double raw_score = 0.0;
};

BoostPrediction predict_boosted(const BoostedModel& model, std::span<const std::uint8_t> row_bins);
BoostPrediction predict_boosted(const BoostedModel& model, const BinnedView& view, std::size_t row);
std::vector<double> predict_boosted_raw(const BoostedModel& model, const BinnedView& view);

/// Omega of one tree: gamma*T + lambda/2 ||w||^2, or lambda ||w||^2 + alpha*T.
double tree_penalty(const DecisionTree& tree, const RegularizationParams& reg);

/// Summed logloss over the view plus the penalty of every tree.
double regularized_objective(const BoostedModel& model, const BinnedView& view,
                             std::span<const std::uint8_t> labels, const RegularizationParams& reg);

}  // namespace nidens
