#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <span>
#include <vector>

#include "nidens/tree.hpp"

namespace nidens {

enum class VoteRule : std::uint8_t { probability_mean, hard_majority };

struct ForestParams {
  std::size_t n_trees = 200;
  int max_depth = 4;
  double max_features = 0.5;  // fraction of features re-drawn per split
  std::size_t min_samples_split = 20;
  bool bootstrap = true;
  VoteRule vote = VoteRule::probability_mean;

  void validate() const;
  nlohmann::json to_json() const;
  static ForestParams from_json(const nlohmann::json& j);
  bool operator==(const ForestParams&) const = default;
};

struct ForestModel {
  ForestParams params;
  std::uint64_t seed = 0;
  std::vector<DecisionTree> trees;  // leaves hold the attack proportion
  double oob_accuracy = 0.0;
  std::size_t oob_rows = 0;

  nlohmann::json to_json() const;
  static ForestModel from_json(const nlohmann::json& j);
};

struct ClassPrediction {
  int label = 0;
  double prob_attack = 0.0;
};

/// Majority class among per-tree votes; a tie votes attack.
int majority_vote(std::span<const int> votes);

/// Bootstrapped Gini trees. Tree k draws from its own stream hash(seed, k),
/// so the result does not depend on how trees are scheduled.
ForestModel train_forest(const BinnedView& view, std::span<const std::uint8_t> labels, const ForestParams& params,
                         std::uint64_t seed);

/// Class is attack when prob_attack >= 0.5 (ties fail closed).
ClassPrediction predict_forest(const ForestModel& model, std::span<const std::uint8_t> row_bins);
ClassPrediction predict_forest(const ForestModel& model, const BinnedView& view, std::size_t row);
std::vector<double> predict_forest_proba(const ForestModel& model, const BinnedView& view);

}  // namespace nidens
