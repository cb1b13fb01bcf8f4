#include "nidens/forest.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>

#include "nidens/error.hpp"
#include "nidens/parallel.hpp"

namespace nidens {

using nlohmann::json;

void ForestParams::validate() const {
  if (n_trees < 1) throw Error("forest needs at least one tree");
  if (max_depth < 1) throw Error("forest max_depth must be positive");
  if (!(max_features > 0.0 && max_features <= 1.0)) throw Error("max_features must be in (0, 1]");
}

json ForestParams::to_json() const {
  return {{"n_trees", n_trees},
          {"max_depth", max_depth},
          {"max_features", max_features},
          {"min_samples_split", min_samples_split},
          {"bootstrap", bootstrap},
          {"criterion", "gini"},
          {"vote", vote == VoteRule::probability_mean ? "probability_mean" : "hard_majority"}};
}

ForestParams ForestParams::from_json(const json& j) {
  ForestParams p;
  p.n_trees = j.at("n_trees").get<std::size_t>();
  p.max_depth = j.at("max_depth").get<int>();
  p.max_features = j.at("max_features").get<double>();
  p.min_samples_split = j.at("min_samples_split").get<std::size_t>();
  p.bootstrap = j.at("bootstrap").get<bool>();
  p.vote = j.at("vote").get<std::string>() == "hard_majority" ? VoteRule::hard_majority : VoteRule::probability_mean;
  return p;
}

json ForestModel::to_json() const {
  json trees_json = json::array();
  for (const auto& t : trees) trees_json.push_back(t.to_json());
  return {{"model_type", "forest"},
          {"params", params.to_json()},
          {"seed", seed},
          {"oob_accuracy", oob_accuracy},
          {"oob_rows", oob_rows},
          {"trees", std::move(trees_json)}};
}

ForestModel ForestModel::from_json(const json& j) {
  if (j.at("model_type").get<std::string>() != "forest") throw ParseError("not a forest model");
  ForestModel m;
  m.params = ForestParams::from_json(j.at("params"));
  m.seed = j.at("seed").get<std::uint64_t>();
  m.oob_accuracy = j.at("oob_accuracy").get<double>();
  m.oob_rows = j.at("oob_rows").get<std::size_t>();
  for (const auto& t : j.at("trees")) m.trees.push_back(DecisionTree::from_json(t));
  return m;
}

int majority_vote(std::span<const int> votes) {
  std::size_t attack = 0;
  for (int v : votes) attack += v == 1 ? 1 : 0;
  return 2 * attack >= votes.size() ? 1 : 0;
}

ForestModel train_forest(const BinnedView& view, std::span<const std::uint8_t> labels, const ForestParams& params,
                         std::uint64_t seed) {
  params.validate();
  const std::size_t n = view.n_rows;
  if (labels.size() != n) throw SchemaError("label count does not match the view");
  if (n == 0) throw Error("cannot train a forest on zero rows");

  ForestModel model;
  model.params = params;
  model.seed = seed;
  model.trees.resize(params.n_trees);
  std::vector<std::vector<std::size_t>> in_bag(params.n_trees);

  RegularizationParams reg;
  reg.min_samples_split = params.min_samples_split;
  GrowOptions opts;
  opts.split_feature_fraction = params.max_features;
  const auto growth = GrowthPolicy::depth_wise(params.max_depth);
  const std::uint64_t forest_seed = derive_seed(seed, "forest");

  parallel_for(params.n_trees, [&](std::size_t k) {
    Rng rng(derive_seed(forest_seed, k));
    std::vector<std::size_t> rows(n);
    if (params.bootstrap) {
      for (auto& r : rows) r = static_cast<std::size_t>(rng.below(n));
      std::sort(rows.begin(), rows.end());
    } else {
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    model.trees[k] = grow_tree(view, rows, GiniTarget{labels}, growth, reg, opts, rng);
    in_bag[k] = std::move(rows);
  });

  // Out-of-bag estimate, reduced in tree order.
  std::vector<double> oob_sum(n, 0.0);
  std::vector<std::uint32_t> oob_count(n, 0);
  std::vector<std::uint8_t> seen(n);
  for (std::size_t k = 0; k < params.n_trees; ++k) {
    std::fill(seen.begin(), seen.end(), 0);
    for (auto r : in_bag[k]) seen[r] = 1;
    for (std::size_t r = 0; r < n; ++r) {
      if (seen[r]) continue;
      oob_sum[r] += model.trees[k].predict(view, r);
      ++oob_count[r];
    }
  }
  std::size_t correct = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (oob_count[r] == 0) continue;
    ++model.oob_rows;
    const int label = oob_sum[r] / oob_count[r] >= 0.5 ? 1 : 0;
    correct += label == labels[r] ? 1 : 0;
  }
  model.oob_accuracy = model.oob_rows ? static_cast<double>(correct) / static_cast<double>(model.oob_rows) : 0.0;
  return model;
}

namespace {

template <typename LeafFn>
ClassPrediction aggregate(const ForestModel& model, LeafFn&& leaf) {
  if (model.trees.empty()) throw Error("forest has no trees");
  ClassPrediction out;
  if (model.params.vote == VoteRule::hard_majority) {
    std::vector<int> votes;
    votes.reserve(model.trees.size());
    for (const auto& t : model.trees) votes.push_back(leaf(t) >= 0.5 ? 1 : 0);
    out.label = majority_vote(votes);
    out.prob_attack = static_cast<double>(std::count(votes.begin(), votes.end(), 1)) /
                      static_cast<double>(votes.size());
    return out;
  }
  double sum = 0.0;
  for (const auto& t : model.trees) sum += leaf(t);
  out.prob_attack = sum / static_cast<double>(model.trees.size());
  out.label = out.prob_attack >= 0.5 ? 1 : 0;
  return out;
}

}  // namespace

ClassPrediction predict_forest(const ForestModel& model, std::span<const std::uint8_t> row_bins) {
  return aggregate(model, [&](const DecisionTree& t) { return t.predict(row_bins); });
}

ClassPrediction predict_forest(const ForestModel& model, const BinnedView& view, std::size_t row) {
  return aggregate(model, [&](const DecisionTree& t) { return t.predict(view, row); });
}

std::vector<double> predict_forest_proba(const ForestModel& model, const BinnedView& view) {
  std::vector<double> out(view.n_rows);
  parallel_for(view.n_rows, [&](std::size_t r) { out[r] = predict_forest(model, view, r).prob_attack; });
  return out;
}

}  // namespace nidens
