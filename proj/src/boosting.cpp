#include "nidens/boosting.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nidens/error.hpp"
#include "nidens/parallel.hpp"

namespace nidens {

using nlohmann::json;

std::string_view to_string(BoostProfile p) {
  switch (p) {
    case BoostProfile::xgb: return "xgb";
    case BoostProfile::cat: return "cat";
    case BoostProfile::lgbm: return "lgbm";
  }
  return "?";
}

BoostProfile boost_profile_from_string(std::string_view s) {
  if (s == "xgb") return BoostProfile::xgb;
  if (s == "cat") return BoostProfile::cat;
  if (s == "lgbm") return BoostProfile::lgbm;
  throw Error("unknown boosting profile: " + std::string(s));
}

BoostParams BoostParams::defaults(BoostProfile profile) {
  BoostParams p;
  p.profile = profile;
  switch (profile) {
    case BoostProfile::xgb:
      p.learning_rate = 0.075;
      p.growth = GrowthPolicy::depth_wise(8);
      p.reg.min_child_weight = 5.0;
      break;
    case BoostProfile::cat:
      p.learning_rate = 0.05;
      p.growth = GrowthPolicy::symmetric(8);
      p.reg.penalty = PenaltyForm::l2_alpha;
      p.rsm = 0.8;
      break;
    case BoostProfile::lgbm:
      p.learning_rate = 0.05;
      p.growth = GrowthPolicy::leaf_wise(63);
      p.reg.min_data_in_leaf = 5;
      p.reg.min_child_weight = 1e-3;
      p.subsample = 0.9;
      p.colsample_bytree = 0.9;
      break;
  }
  return p;
}

namespace {

bool is_fraction(double x) { return x > 0.0 && x <= 1.0; }

GrowthPolicy::Kind growth_for(BoostProfile p) {
  switch (p) {
    case BoostProfile::xgb: return GrowthPolicy::Kind::depth_wise;
    case BoostProfile::cat: return GrowthPolicy::Kind::symmetric;
    case BoostProfile::lgbm: return GrowthPolicy::Kind::leaf_wise;
  }
  return GrowthPolicy::Kind::depth_wise;
}

GrowthPolicy::Kind kind_from_string(std::string_view s) {
  if (s == "depth_wise") return GrowthPolicy::Kind::depth_wise;
  if (s == "leaf_wise") return GrowthPolicy::Kind::leaf_wise;
  if (s == "symmetric") return GrowthPolicy::Kind::symmetric;
  throw ParseError("unknown growth policy: " + std::string(s));
}

int as_int(std::string_view name, double v) {
  if (v != std::floor(v)) throw Error(std::string(name) + " must be an integer");
  return static_cast<int>(v);
}

}  // namespace

void BoostParams::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw Error("learning_rate must be finite and >= 0");
  if (n_rounds < 1) throw Error("n_rounds must be at least 1");
  if (!is_fraction(subsample) || !is_fraction(colsample_bytree) || !is_fraction(rsm)) {
    throw Error("sampling fractions must be in (0, 1]");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) throw Error("validation_fraction must be in [0, 1)");
  if (growth.kind != growth_for(profile)) {
    throw Error("profile " + std::string(to_string(profile)) + " requires " +
                std::string(to_string(growth_for(profile))) + " growth");
  }
  if (profile == BoostProfile::cat && ordered_folds < 2) throw Error("ordered boosting needs at least 2 folds");
  growth.validate();
  reg.validate();
}

json BoostParams::to_json() const {
  json j = {{"profile", to_string(profile)},
            {"learning_rate", learning_rate},
            {"n_rounds", n_rounds},
            {"growth", {{"kind", to_string(growth.kind)}, {"max_depth", growth.max_depth}, {"num_leaves", growth.num_leaves}}},
            {"reg",
             {{"lambda", reg.lambda},
              {"gamma", reg.gamma},
              {"alpha", reg.alpha},
              {"min_samples_split", reg.min_samples_split},
              {"min_data_in_leaf", reg.min_data_in_leaf},
              {"min_child_weight", reg.min_child_weight},
              {"penalty", reg.penalty == PenaltyForm::l2_alpha ? "l2_alpha" : "half_l2_gamma"}}},
            {"subsample", subsample},
            {"colsample_bytree", colsample_bytree},
            {"rsm", rsm},
            {"early_stopping_patience", early_stopping_patience},
            {"validation_fraction", validation_fraction},
            {"ordered_folds", ordered_folds}};
  j["base_score"] = base_score ? json(*base_score) : json(nullptr);
  return j;
}

BoostParams BoostParams::from_json(const json& j) {
  BoostParams p;
  p.profile = boost_profile_from_string(j.at("profile").get<std::string>());
  p.learning_rate = j.at("learning_rate").get<double>();
  p.n_rounds = j.at("n_rounds").get<std::size_t>();
  const auto& g = j.at("growth");
  p.growth.kind = kind_from_string(g.at("kind").get<std::string>());
  p.growth.max_depth = g.at("max_depth").get<int>();
  p.growth.num_leaves = g.at("num_leaves").get<int>();
  const auto& r = j.at("reg");
  p.reg.lambda = r.at("lambda").get<double>();
  p.reg.gamma = r.at("gamma").get<double>();
  p.reg.alpha = r.at("alpha").get<double>();
  p.reg.min_samples_split = r.at("min_samples_split").get<std::size_t>();
  p.reg.min_data_in_leaf = r.at("min_data_in_leaf").get<std::size_t>();
  p.reg.min_child_weight = r.at("min_child_weight").get<double>();
  p.reg.penalty = r.at("penalty").get<std::string>() == "l2_alpha" ? PenaltyForm::l2_alpha : PenaltyForm::half_l2_gamma;
  p.subsample = j.at("subsample").get<double>();
  p.colsample_bytree = j.at("colsample_bytree").get<double>();
  p.rsm = j.at("rsm").get<double>();
  p.early_stopping_patience = j.at("early_stopping_patience").get<std::size_t>();
  p.validation_fraction = j.at("validation_fraction").get<double>();
  p.ordered_folds = j.at("ordered_folds").get<std::size_t>();
  if (!j.at("base_score").is_null()) p.base_score = j.at("base_score").get<double>();
  return p;
}

void set_boost_param(BoostParams& p, std::string_view name, double v) {
  if (name == "learning_rate" || name == "eta") {
    p.learning_rate = v;
  } else if (name == "n_rounds" || name == "n_estimators" || name == "iterations") {
    p.n_rounds = static_cast<std::size_t>(as_int(name, v));
  } else if (name == "max_depth" || name == "depth") {
    p.growth.max_depth = as_int(name, v);
  } else if (name == "num_leaves") {
    p.growth.num_leaves = as_int(name, v);
  } else if (name == "min_child_weight" || name == "min_sum_hessian_in_leaf") {
    p.reg.min_child_weight = v;
  } else if (name == "min_data_in_leaf") {
    p.reg.min_data_in_leaf = static_cast<std::size_t>(as_int(name, v));
  } else if (name == "subsample" || name == "bagging_fraction") {
    p.subsample = v;
  } else if (name == "colsample_bytree" || name == "feature_fraction") {
    p.colsample_bytree = v;
  } else if (name == "rsm") {
    p.rsm = v;
  } else if (name == "lambda" || name == "reg_lambda" || name == "l2_leaf_reg" || name == "lambda_l2") {
    p.reg.lambda = v;
  } else if (name == "gamma" || name == "min_split_gain") {
    p.reg.gamma = v;
  } else if (name == "alpha") {
    p.reg.alpha = v;
  } else {
    throw Error("unknown boosting hyperparameter: " + std::string(name));
  }
}

double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logloss(std::uint8_t y, double raw) noexcept {
  // softplus(raw) - y * raw
  const double softplus = raw > 0 ? raw + std::log1p(std::exp(-raw)) : std::log1p(std::exp(raw));
  return softplus - (y ? raw : 0.0);
}

double mean_logloss(std::span<const std::uint8_t> labels, std::span<const double> raw) {
  if (labels.size() != raw.size()) throw SchemaError("label and score counts differ");
  if (labels.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) sum += logloss(labels[i], raw[i]);
  return sum / static_cast<double>(labels.size());
}

GradHess logloss_grad_hess(std::span<const std::uint8_t> labels, std::span<const double> raw_scores) {
  if (labels.size() != raw_scores.size()) throw SchemaError("label and score counts differ");
  GradHess gh;
  gh.g.resize(labels.size());
  gh.h.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = sigmoid(raw_scores[i]);
    gh.g[i] = p - (labels[i] ? 1.0 : 0.0);
    gh.h[i] = p * (1.0 - p);
  }
  return gh;
}

json BoostedModel::to_json() const {
  json trees_json = json::array();
  for (const auto& t : trees) trees_json.push_back(t.to_json());
  return {{"model_type", "boosted"},
          {"profile", to_string(profile)},
          {"params", params.to_json()},
          {"base_score", base_score},
          {"learning_rate", learning_rate},
          {"seed", seed},
          {"log",
           {{"train_loss", log.train_loss},
            {"valid_loss", log.valid_loss},
            {"best_round", log.best_round},
            {"stopped_early", log.stopped_early}}},
          {"trees", std::move(trees_json)}};
}

BoostedModel BoostedModel::from_json(const json& j) {
  if (j.at("model_type").get<std::string>() != "boosted") throw ParseError("not a boosted model");
  BoostedModel m;
  m.profile = boost_profile_from_string(j.at("profile").get<std::string>());
  m.params = BoostParams::from_json(j.at("params"));
  m.base_score = j.at("base_score").get<double>();
  m.learning_rate = j.at("learning_rate").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  const auto& l = j.at("log");
  m.log.train_loss = l.at("train_loss").get<std::vector<double>>();
  m.log.valid_loss = l.at("valid_loss").get<std::vector<double>>();
  m.log.best_round = l.at("best_round").get<std::size_t>();
  m.log.stopped_early = l.at("stopped_early").get<bool>();
  for (const auto& t : j.at("trees")) m.trees.push_back(DecisionTree::from_json(t));
  return m;
}

RowSplit stratified_holdout(std::span<const std::uint8_t> labels, double fraction, std::uint64_t seed) {
  RowSplit split;
  Rng rng(derive_seed(seed, "stratified-holdout"));
  for (std::uint8_t cls : {std::uint8_t{0}, std::uint8_t{1}}) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) rows.push_back(i);
    }
    rng.shuffle(rows);
    const auto n_valid = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
    split.valid.insert(split.valid.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_valid));
    split.train.insert(split.train.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_valid), rows.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.valid.begin(), split.valid.end());
  return split;
}

namespace {

double clamped_log_odds(std::span<const std::uint8_t> labels, std::span<const std::size_t> rows) {
  double pos = 0.0;
  for (auto r : rows) pos += labels[r];
  double p = rows.empty() ? 0.5 : pos / static_cast<double>(rows.size());
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(p / (1.0 - p));
}

double subset_loss(std::span<const std::uint8_t> labels, std::span<const double> raw, std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  double sum = 0.0;
  for (auto r : rows) sum += logloss(labels[r], raw[r]);
  return sum / static_cast<double>(rows.size());
}

std::vector<std::size_t> leaf_of_rows(const DecisionTree& tree, const BinnedView& view) {
  std::vector<std::size_t> leaf(view.n_rows);
  parallel_for(view.n_rows, [&](std::size_t r) { leaf[r] = tree.leaf_index(view, r); });
  return leaf;
}

/// One fold-wise ordered state: scores of a model trained without `fold`.
struct OrderedState {
  std::vector<double> score;
  std::vector<std::size_t> fit_rows;  // training rows outside the fold
};

}  // namespace

BoostedModel train_boosted(const BinnedView& view, std::span<const std::uint8_t> labels, const BoostParams& params,
                           std::uint64_t seed, const Holdout* valid, OrderedTrace* trace) {
  params.validate();
  const std::size_t n = view.n_rows;
  if (labels.size() != n) throw SchemaError("label count does not match the view");
  if (n == 0) throw Error("cannot train on zero rows");
  if (valid != nullptr) {
    if (valid->view == nullptr || valid->view->n_features() != view.n_features()) {
      throw SchemaError("holdout does not share the training schema");
    }
    if (valid->labels.size() != valid->view->n_rows) throw SchemaError("holdout label count does not match");
  }

  const bool early_stop = params.early_stopping_patience > 0;
  std::vector<std::size_t> train_rows(n);
  std::iota(train_rows.begin(), train_rows.end(), std::size_t{0});
  std::vector<std::size_t> carve_rows;
  if (early_stop && valid == nullptr && params.validation_fraction > 0.0) {
    auto split = stratified_holdout(labels, params.validation_fraction, seed);
    if (!split.valid.empty() && !split.train.empty()) {
      train_rows = std::move(split.train);
      carve_rows = std::move(split.valid);
    }
  }
  const bool has_valid = valid != nullptr || !carve_rows.empty();

  BoostedModel model;
  model.profile = params.profile;
  model.params = params;
  model.learning_rate = params.learning_rate;
  model.seed = seed;
  model.base_score = params.base_score ? *params.base_score : clamped_log_odds(labels, train_rows);

  const double eta = params.learning_rate;
  std::vector<double> score(n, model.base_score);
  std::vector<double> valid_score;
  if (valid != nullptr) valid_score.assign(valid->view->n_rows, model.base_score);

  // Ordered boosting: each training row belongs to one fold, and its
  // gradient is read from the state fitted on the other folds only.
  const bool ordered = params.profile == BoostProfile::cat;
  std::vector<std::size_t> fold_of(n, 0);
  std::vector<OrderedState> states;
  if (ordered) {
    const std::size_t s = params.ordered_folds;
    std::vector<std::size_t> perm = train_rows;
    Rng(derive_seed(seed, "ordered-folds")).shuffle(perm);
    for (std::size_t i = 0; i < perm.size(); ++i) fold_of[perm[i]] = i % s;
    states.resize(s);
    for (std::size_t f = 0; f < s; ++f) {
      for (auto r : train_rows) {
        if (fold_of[r] != f) states[f].fit_rows.push_back(r);
      }
      states[f].score.assign(n, clamped_log_odds(labels, states[f].fit_rows));
    }
    if (trace != nullptr) {
      trace->fold_of_row = fold_of;
      trace->gradient_scores.clear();
    }
  }

  std::vector<std::size_t> all_features(view.n_features());
  std::iota(all_features.begin(), all_features.end(), std::size_t{0});
  const std::uint64_t boost_seed = derive_seed(seed, "boost-rounds");
  std::vector<double> grad(n, 0.0), hess(n, 0.0), grad_raw(n, 0.0);

  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t best_round = 0, since_best = 0;

  for (std::size_t t = 0; t < params.n_rounds; ++t) {
    Rng rng(derive_seed(boost_seed, t));

    std::vector<std::size_t> rows;
    if (params.subsample < 1.0) {
      for (auto i : rng.sample_without_replacement(train_rows.size(), sampled_count(params.subsample, train_rows.size()))) {
        rows.push_back(train_rows[i]);
      }
    } else {
      rows = train_rows;
    }
    GrowOptions opts;
    if (params.colsample_bytree < 1.0) {
      opts.features = rng.sample_without_replacement(all_features.size(),
                                                     sampled_count(params.colsample_bytree, all_features.size()));
    }
    opts.split_feature_fraction = params.rsm;

    for (auto r : train_rows) grad_raw[r] = ordered ? states[fold_of[r]].score[r] : score[r];
    if (ordered && trace != nullptr) trace->gradient_scores.push_back(grad_raw);
    parallel_for(train_rows.size(), [&](std::size_t i) {
      const std::size_t r = train_rows[i];
      const double p = sigmoid(grad_raw[r]);
      grad[r] = p - (labels[r] ? 1.0 : 0.0);
      hess[r] = p * (1.0 - p);
    });

    DecisionTree tree = grow_tree(view, rows, GradTarget{grad, hess}, params.growth, params.reg, opts, rng);
    const auto leaf = leaf_of_rows(tree, view);
    for (std::size_t r = 0; r < n; ++r) score[r] += eta * tree.nodes[leaf[r]].value;

    if (ordered) {
      // Each state moves by leaf values refitted on its own rows, under its
      // own scores; the shared tree structure is reused.
      for (auto& st : states) {
        std::vector<double> G(tree.nodes.size(), 0.0), H(tree.nodes.size(), 0.0);
        for (auto r : st.fit_rows) {
          const double p = sigmoid(st.score[r]);
          G[leaf[r]] += p - (labels[r] ? 1.0 : 0.0);
          H[leaf[r]] += p * (1.0 - p);
        }
        std::vector<double> v(tree.nodes.size(), 0.0);
        for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
          if (tree.nodes[k].is_leaf()) v[k] = optimal_leaf_value(G[k], H[k], params.reg);
        }
        for (auto r : train_rows) st.score[r] += eta * v[leaf[r]];
      }
    }

    const double train_loss = subset_loss(labels, score, train_rows);
    if (!std::isfinite(train_loss)) {
      throw Error("non-finite training loss at round " + std::to_string(t + 1));
    }
    model.log.train_loss.push_back(train_loss);

    double valid_loss = 0.0;
    if (valid != nullptr) {
      const auto vleaf = leaf_of_rows(tree, *valid->view);
      for (std::size_t r = 0; r < valid_score.size(); ++r) valid_score[r] += eta * tree.nodes[vleaf[r]].value;
      valid_loss = mean_logloss(valid->labels, valid_score);
    } else if (!carve_rows.empty()) {
      valid_loss = subset_loss(labels, score, carve_rows);
    }
    model.trees.push_back(std::move(tree));

    if (has_valid) {
      model.log.valid_loss.push_back(valid_loss);
      if (!std::isfinite(valid_loss)) throw Error("non-finite validation loss at round " + std::to_string(t + 1));
      if (valid_loss < best_loss) {
        best_loss = valid_loss;
        best_round = t + 1;
        since_best = 0;
      } else if (early_stop && ++since_best >= params.early_stopping_patience) {
        model.log.stopped_early = true;
        break;
      }
    }
  }

  model.log.best_round = has_valid && early_stop ? best_round : model.trees.size();
  model.trees.resize(model.log.best_round);
  return model;
}

namespace {

BoostPrediction finish(double raw) {
  BoostPrediction p;
  p.raw_score = raw;
  p.prob_attack = sigmoid(raw);
  p.label = p.prob_attack >= 0.5 ? 1 : 0;
  return p;
}

}  // namespace

BoostPrediction predict_boosted(const BoostedModel& model, std::span<const std::uint8_t> row_bins) {
  double raw = model.base_score;
  for (const auto& t : model.trees) raw += model.learning_rate * t.predict(row_bins);
  return finish(raw);
}

BoostPrediction predict_boosted(const BoostedModel& model, const BinnedView& view, std::size_t row) {
  double raw = model.base_score;
  for (const auto& t : model.trees) raw += model.learning_rate * t.predict(view, row);
  return finish(raw);
}

std::vector<double> predict_boosted_raw(const BoostedModel& model, const BinnedView& view) {
  std::vector<double> out(view.n_rows);
  parallel_for(view.n_rows, [&](std::size_t r) { out[r] = predict_boosted(model, view, r).raw_score; });
  return out;
}

double tree_penalty(const DecisionTree& tree, const RegularizationParams& reg) {
  double sq = 0.0;
  double leaves = 0.0;
  for (const auto& node : tree.nodes) {
    if (!node.is_leaf()) continue;
    sq += node.value * node.value;
    leaves += 1.0;
  }
  if (reg.penalty == PenaltyForm::l2_alpha) return reg.lambda * sq + reg.alpha * leaves;
  return reg.gamma * leaves + 0.5 * reg.lambda * sq;
}

double regularized_objective(const BoostedModel& model, const BinnedView& view,
                             std::span<const std::uint8_t> labels, const RegularizationParams& reg) {
  if (labels.size() != view.n_rows) throw SchemaError("label count does not match the view");
  const auto raw = predict_boosted_raw(model, view);
  double total = 0.0;
  for (std::size_t r = 0; r < raw.size(); ++r) total += logloss(labels[r], raw[r]);
  for (const auto& t : model.trees) total += tree_penalty(t, reg);
  return total;
}

}  // namespace nidens
