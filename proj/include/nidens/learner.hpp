#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nidens/boosting.hpp"
#include "nidens/dataset.hpp"
#include "nidens/features.hpp"
#include "nidens/forest.hpp"

namespace nidens {

enum class LearnerKind : std::uint8_t { forest, xgb, cat, lgbm };

std::string_view to_string(LearnerKind k);
/// "Random Forest", "XGBoost", "CatBoost", "LGBM".
std::string_view display_name(LearnerKind k);
LearnerKind learner_kind_from_string(std::string_view s);
inline constexpr LearnerKind kAllLearners[] = {LearnerKind::forest, LearnerKind::xgb, LearnerKind::cat,
                                               LearnerKind::lgbm};

/// Everything needed to train one base model from a raw dataset.
struct LearnerSpec {
  LearnerKind kind = LearnerKind::forest;
  ForestParams forest;
  BoostParams boost;
  CategoricalEncoding encoding = CategoricalEncoding::passthrough;
  std::size_t max_bins = 255;

  /// Published settings; cat uses ordered target statistics, the others
  /// pass category codes through.
  static LearnerSpec defaults(LearnerKind kind);

  /// Sets a hyperparameter by name (see set_boost_param for booster aliases).
  void set(std::string_view name, double value);
  void validate() const;

  nlohmann::json to_json() const;
  static LearnerSpec from_json(const nlohmann::json& j);
};

/// Encoder plus bin edges fitted on one training set.
struct Preprocessor {
  Encoder encoder;
  BinMapper mapper;

  BinnedView transform(const Dataset& ds) const;
  nlohmann::json to_json() const;
  static Preprocessor from_json(const nlohmann::json& j);
};

struct FittedPreprocessor {
  Preprocessor prep;
  BinnedView train_view;  // training rows under training-time encoding
};

FittedPreprocessor fit_preprocessor(const Dataset& train, const LearnerSpec& spec, std::uint64_t seed);

struct TrainedModel {
  LearnerSpec spec;
  Preprocessor prep;
  std::variant<ForestModel, BoostedModel> model;
  std::uint64_t seed = 0;

  std::vector<double> predict_proba(const Dataset& ds) const;
  std::vector<double> predict_proba(const BinnedView& view) const;

  nlohmann::json to_json() const;
  static TrainedModel from_json(const nlohmann::json& j);
};

TrainedModel train_learner(const Dataset& train, const LearnerSpec& spec, std::uint64_t seed);

}  // namespace nidens
