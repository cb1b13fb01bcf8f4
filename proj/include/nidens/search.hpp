#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nidens/learner.hpp"
#include "nidens/metrics.hpp"

namespace nidens {

struct FoldPlan {
  std::size_t k = 10;
  std::vector<std::uint32_t> fold_of_row;
  std::uint64_t seed = 0;
  bool shuffled = true;
  bool stratified = true;

  std::size_t n_rows() const noexcept { return fold_of_row.size(); }
  std::vector<std::size_t> train_rows(std::size_t fold) const;
  std::vector<std::size_t> valid_rows(std::size_t fold) const;

  nlohmann::json to_json() const;
  static FoldPlan from_json(const nlohmann::json& j);
};

/// Shuffles each class with the seed, then deals rows round-robin, the
/// counter running on from one class to the next. Throws Error when k < 2
/// or a class has fewer than k rows.
FoldPlan make_folds(std::span<const std::uint8_t> labels, std::size_t k, std::uint64_t seed);

using ParamPoint = std::map<std::string, double>;

struct ParamDomain {
  enum class Kind : std::uint8_t { continuous, integer, categorical, fixed };
  std::string name;
  Kind kind = Kind::fixed;
  double lo = 0.0;
  double hi = 0.0;
  bool log_scale = false;
  std::vector<double> choices;  // categorical
  double value = 0.0;           // fixed value, also the default

  bool contains(double x) const;
};

struct HyperparamSpace {
  std::vector<ParamDomain> params;

  /// Ranges around the published settings: one octave either side for rates
  /// and fractions (fractions capped at 1), +-4 for depths.
  static HyperparamSpace defaults(LearnerKind kind);
  /// Every parameter fixed at its default.
  HyperparamSpace fixed_at_defaults() const;

  ParamPoint sample(Rng& rng) const;
  ParamPoint default_point() const;
  bool contains(const ParamPoint& p) const;

  nlohmann::json to_json() const;
  static HyperparamSpace from_json(const nlohmann::json& j);
};

struct Trial {
  std::size_t id = 0;
  ParamPoint params;
  MetricId metric = MetricId::logloss;
  std::vector<double> fold_metrics;  // natural orientation
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over folds
  double seconds = 0.0;
  bool failed = false;
  std::string reason;
  std::string phase;        // "random" or "model"
  std::vector<double> oof;  // out-of-fold attack probability per row

  /// Mean in the larger-is-better orientation.
  double score() const { return metric == MetricId::logloss ? -mean : mean; }
  /// One trial-log line; the OOF vector is not included.
  nlohmann::json to_json() const;
};

/// Called once per fold with the rows the fold's model trains and is scored on.
using FoldObserver = std::function<void(std::size_t fold, std::span<const std::size_t> train,
                                        std::span<const std::size_t> valid)>;

/// k-fold evaluation. Each fold refits encoding, bins and model on its
/// training rows only. Training errors mark the trial failed.
Trial cross_validate(const Dataset& ds, const LearnerSpec& spec, const FoldPlan& folds, MetricId metric,
                     std::uint64_t seed, const FoldObserver& observer = {});

struct SearchOptions {
  std::size_t budget = 30;
  std::size_t candidates = 64;
  std::uint64_t seed = 0;     // proposal stream
  std::uint64_t cv_seed = 0;  // model seed inside cross_validate (tune only)
  std::ostream* trial_log = nullptr;  // JSON lines
};

struct SearchResult {
  Trial best;
  std::vector<Trial> trials;
};

/// Sequential model-based search. The first max(5, budget/5) points are
/// random; later points maximize l(x)/g(x) over a batch of candidates drawn
/// from l, where l and g are Parzen densities of the trials above and below
/// the median score. Best = highest score, then lower std, then earlier.
SearchResult smbo_search(const HyperparamSpace& space, const SearchOptions& opts,
                         const std::function<Trial(const ParamPoint&)>& evaluate);

/// Index of the best finished trial under the tie rules above.
std::optional<std::size_t> best_trial(std::span<const Trial> trials);

/// Tunes one learner with cross-validation on `ds`.
SearchResult tune(const Dataset& ds, const LearnerSpec& base, const HyperparamSpace& space, const FoldPlan& folds,
                  MetricId metric, const SearchOptions& opts);

LearnerSpec apply_point(LearnerSpec spec, const ParamPoint& point);

}  // namespace nidens
