#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "nidens/features.hpp"
#include "nidens/rng.hpp"

namespace nidens {

/// How the leaf penalty enters the objective.
///   half_l2_gamma:  gamma * T + 1/2 * lambda * ||w||^2   (xgb and lgbm profiles)
///   l2_alpha:       lambda * ||w||^2 + alpha * T          (cat profile)
enum class PenaltyForm : std::uint8_t { half_l2_gamma, l2_alpha };

struct RegularizationParams {
  double lambda = 1.0;
  double gamma = 0.0;
  double alpha = 0.0;
  std::size_t min_samples_split = 2;
  std::size_t min_data_in_leaf = 1;
  double min_child_weight = 0.0;  // minimum hessian sum per child
  PenaltyForm penalty = PenaltyForm::half_l2_gamma;

  void validate() const;
  /// Curvature added to H in gains and leaf values: lambda, or 2*lambda for l2_alpha.
  double l2() const noexcept { return penalty == PenaltyForm::l2_alpha ? 2.0 * lambda : lambda; }
  double leaf_penalty() const noexcept { return penalty == PenaltyForm::l2_alpha ? alpha : gamma; }
};

struct GrowthPolicy {
  enum class Kind : std::uint8_t { depth_wise, leaf_wise, symmetric };
  Kind kind = Kind::depth_wise;
  int max_depth = 6;   // depth for symmetric, cap for leaf-wise (<= 0: none)
  int num_leaves = 31;  // leaf-wise only

  static GrowthPolicy depth_wise(int max_depth) { return {Kind::depth_wise, max_depth, 0}; }
  static GrowthPolicy leaf_wise(int num_leaves, int max_depth = -1) { return {Kind::leaf_wise, max_depth, num_leaves}; }
  static GrowthPolicy symmetric(int depth) { return {Kind::symmetric, depth, 0}; }
  void validate() const;
};

std::string_view to_string(GrowthPolicy::Kind k);

/// 1 - sum(p_i^2). Proportions must be non-negative and sum to 1.
double gini_impurity(std::span<const double> class_proportions);

struct SplitCandidate {
  std::size_t feature = 0;
  std::uint8_t threshold = 0;  // rows with bin <= threshold go left
  double gain = 0.0;
  bool default_left = true;    // missing bins follow this side
  double left_count = 0.0;
  double right_count = 0.0;
};

/// Minimum gain a split must exceed. Shared with the brute-force oracles.
inline constexpr double kMinSplitGain = 1e-12;

/// Gini decrease: gini(parent) - nL/n gini(L) - nR/n gini(R). `rows` may repeat.
std::optional<SplitCandidate> best_split_gini(const BinnedView& view, std::span<const std::size_t> rows,
                                              std::span<const std::uint8_t> labels,
                                              std::span<const std::size_t> candidate_features,
                                              const RegularizationParams& reg);

/// Second-order gain 1/2 [GL^2/(HL+l2) + GR^2/(HR+l2) - G^2/(H+l2)] - leaf_penalty.
std::optional<SplitCandidate> best_split_grad(const BinnedView& view, std::span<const std::size_t> rows,
                                              std::span<const double> grad, std::span<const double> hess,
                                              const RegularizationParams& reg,
                                              std::span<const std::size_t> candidate_features);

/// -G / (H + l2); 0 when the denominator vanishes.
double optimal_leaf_value(double sum_grad, double sum_hess, const RegularizationParams& reg) noexcept;

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  std::uint8_t threshold = 0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  bool default_left = true;
  double value = 0.0;  // leaf: attack proportion (gini) or additive score (gradient)
  double count = 0.0;  // training rows reaching the node
  double gain = 0.0;   // split gain; for symmetric trees the level total

  bool is_leaf() const noexcept { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  GrowthPolicy::Kind kind = GrowthPolicy::Kind::depth_wise;
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  /// Symmetric trees: the split shared by every node of each level.
  std::vector<std::pair<std::size_t, std::uint8_t>> levels;

  std::size_t n_leaves() const;
  int depth() const;

  /// Routes a row given as one bin per feature. Throws SchemaError when the
  /// row is too short for a split feature.
  double predict(std::span<const std::uint8_t> row_bins) const;
  double predict(const BinnedView& view, std::size_t row) const;
  std::size_t leaf_index(const BinnedView& view, std::size_t row) const;

  nlohmann::json to_json() const;
  static DecisionTree from_json(const nlohmann::json& j);
  bool operator==(const DecisionTree&) const = default;
};

inline double predict_tree(const DecisionTree& tree, std::span<const std::uint8_t> row_bins) {
  return tree.predict(row_bins);
}

struct GiniTarget {
  std::span<const std::uint8_t> labels;
};
struct GradTarget {
  std::span<const double> grad;
  std::span<const double> hess;
};
using TreeTarget = std::variant<GiniTarget, GradTarget>;

struct GrowOptions {
  /// Features the tree may use; all when empty.
  std::vector<std::size_t> features;
  /// Fraction of `features` re-drawn for every split (for symmetric trees,
  /// every level). 1 disables per-split sampling.
  double split_feature_fraction = 1.0;
};

/// Grows one tree over `rows` (repeats allowed). Throws Error on empty rows.
DecisionTree grow_tree(const BinnedView& view, std::span<const std::size_t> rows, const TreeTarget& target,
                       const GrowthPolicy& policy, const RegularizationParams& reg, const GrowOptions& opts,
                       Rng& rng);

/// ceil(fraction * n), at least 1.
std::size_t sampled_count(double fraction, std::size_t n);

}  // namespace nidens
