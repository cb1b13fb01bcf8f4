#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>

#include "nidens/boosting.hpp"
#include "nidens/error.hpp"
#include "nidens/parallel.hpp"
#include "support.hpp"

using namespace nidens;
using nidens::testing::view_from_bins;

namespace {

struct Fixture {
  BinnedView view;
  std::vector<std::uint8_t> labels;
};

Fixture noisy_fixture(std::size_t n, std::uint64_t seed, int noise = 4) {
  Rng rng(seed);
  std::vector<std::vector<int>> cols(5, std::vector<int>(n));
  Fixture out;
  for (std::size_t r = 0; r < n; ++r) {
    for (auto& c : cols) c[r] = static_cast<int>(rng.below(10));
    if (rng.below(20) == 0) cols[4][r] = kMissingBin;
    const int score = cols[0][r] + cols[1][r] - cols[2][r] + static_cast<int>(rng.below(static_cast<std::uint64_t>(noise)));
    out.labels.push_back(score > 8 ? 1 : 0);
  }
  out.view = view_from_bins(cols);
  return out;
}

BoostParams quick(BoostProfile profile, std::size_t rounds) {
  auto p = BoostParams::defaults(profile);
  p.n_rounds = rounds;
  p.early_stopping_patience = 0;
  p.learning_rate = 0.3;
  p.growth.max_depth = profile == BoostProfile::lgbm ? -1 : 3;
  if (profile == BoostProfile::lgbm) p.growth.num_leaves = 6;
  p.reg.min_child_weight = 0.0;
  return p;
}

// Two-leaf tree on feature 0 at threshold 0.
DecisionTree stump(double left, double right) {
  DecisionTree t;
  t.nodes.resize(3);
  t.nodes[0].feature = 0;
  t.nodes[0].threshold = 0;
  t.nodes[0].left = 1;
  t.nodes[0].right = 2;
  t.nodes[1].value = left;
  t.nodes[2].value = right;
  return t;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("logistic gradient and hessian") {
  std::vector<std::uint8_t> y{1, 1, 0};
  std::vector<double> raw{0.0, 50.0, -50.0};
  auto gh = logloss_grad_hess(y, raw);
  CHECK(gh.g[0] == -0.5);
  CHECK(gh.h[0] == 0.25);
  CHECK(std::abs(gh.g[1]) < 1e-20);
  CHECK(gh.h[1] < 1e-20);
  CHECK(std::abs(gh.g[2]) < 1e-20);
}

TEST_CASE("gradient and hessian match central differences") {
  Rng rng(7);
  const double eps = 1e-5;
  for (int i = 0; i < 100; ++i) {
    const std::uint8_t y = static_cast<std::uint8_t>(rng.below(2));
    const double s = rng.uniform(-6.0, 6.0);
    std::vector<std::uint8_t> ys{y};
    std::vector<double> ss{s};
    auto gh = logloss_grad_hess(ys, ss);
    // Independent loss: -[y log p + (1-y) log(1-p)].
    auto loss = [&](double raw) {
      const double p = 1.0 / (1.0 + std::exp(-raw));
      return -(y * std::log(p) + (1 - y) * std::log(1 - p));
    };
    const double g_fd = (loss(s + eps) - loss(s - eps)) / (2 * eps);
    CHECK(std::abs(g_fd - gh.g[0]) <= 1e-6 * std::max(1e-3, std::abs(gh.g[0])));
    const double e2 = 1e-3;
    const double h_fd = (loss(s + e2) - 2 * loss(s) + loss(s - e2)) / (e2 * e2);
    CHECK(std::abs(h_fd - gh.h[0]) <= 1e-4 * std::max(1e-2, gh.h[0]));
    CHECK(logloss(y, s) == doctest::Approx(loss(s)).epsilon(1e-12));
    CHECK(gh.g[0] > -1.0);
    CHECK(gh.g[0] < 1.0);
    CHECK(gh.h[0] > 0.0);
    CHECK(gh.h[0] <= 0.25);
  }
}

TEST_CASE("penalty arithmetic for both forms") {
  auto t = stump(1.0, -1.0);
  RegularizationParams xgb;
  xgb.lambda = 1.0;
  xgb.gamma = 0.5;
  CHECK(tree_penalty(t, xgb) == doctest::Approx(2.0));
  RegularizationParams cat;
  cat.penalty = PenaltyForm::l2_alpha;
  cat.lambda = 1.0;
  cat.alpha = 0.5;
  CHECK(tree_penalty(t, cat) == doctest::Approx(3.0));
}

TEST_CASE("prediction arithmetic") {
  BoostedModel m;
  m.base_score = 0.3;
  m.learning_rate = 0.5;
  const std::vector<std::uint8_t> row{0};
  CHECK(predict_boosted(m, row).prob_attack == sigmoid(0.3));

  m.base_score = 0.0;
  m.trees.push_back(stump(2.0, -2.0));
  auto p = predict_boosted(m, row);
  CHECK(p.raw_score == 1.0);
  CHECK(p.prob_attack == sigmoid(1.0));
  CHECK(p.label == 1);
}

TEST_CASE("zero-tree objective is the data loss at the base score") {
  auto view = view_from_bins({{0, 1, 1, 0}});
  std::vector<std::uint8_t> labels{0, 1, 1, 1};
  BoostedModel m;
  m.base_score = 0.2;
  RegularizationParams reg;
  double expected = 0.0;
  for (auto y : labels) expected += logloss(y, 0.2);
  CHECK(regularized_objective(m, view, labels, reg) == doctest::Approx(expected));
  m.trees.push_back(stump(1.0, -1.0));
  m.learning_rate = 0.0;
  reg.gamma = 0.5;
  CHECK(regularized_objective(m, view, labels, reg) == doctest::Approx(expected + 2.0));
}

TEST_CASE("one stump separates a one-dimensional fixture") {
  auto view = view_from_bins({{0, 1, 2, 3, 4, 5, 6, 7}});
  std::vector<std::uint8_t> labels{0, 0, 0, 0, 1, 1, 1, 1};
  for (auto profile : {BoostProfile::xgb, BoostProfile::cat, BoostProfile::lgbm}) {
    auto p = quick(profile, 1);
    p.growth.max_depth = 1;
    if (profile == BoostProfile::lgbm) p.growth.num_leaves = 2;
    p.reg.min_data_in_leaf = 1;
    p.subsample = 1.0;
    p.colsample_bytree = 1.0;
    p.rsm = 1.0;
    auto m = train_boosted(view, labels, p, 1);
    REQUIRE(m.trees.size() == 1);
    for (std::size_t r = 0; r < 8; ++r) CHECK(predict_boosted(m, view, r).label == labels[r]);
  }
}

TEST_CASE("zero learning rate predicts the base rate") {
  auto data = noisy_fixture(200, 1);
  auto p = quick(BoostProfile::xgb, 1);
  p.learning_rate = 0.0;
  auto m = train_boosted(data.view, data.labels, p, 2);
  double pos = 0;
  for (auto y : data.labels) pos += y;
  const double rate = pos / 200.0;
  for (std::size_t r = 0; r < 200; ++r) CHECK(predict_boosted(m, data.view, r).prob_attack == doctest::Approx(rate));
}

TEST_CASE("training loss is non-increasing without sampling") {
  auto data = noisy_fixture(500, 3);
  for (auto profile : {BoostProfile::xgb, BoostProfile::lgbm}) {
    auto p = quick(profile, 40);
    p.subsample = 1.0;
    p.colsample_bytree = 1.0;
    p.rsm = 1.0;
    auto m = train_boosted(data.view, data.labels, p, 4);
    REQUIRE(m.log.train_loss.size() == 40);
    for (std::size_t t = 1; t < 40; ++t) CHECK(m.log.train_loss[t] <= m.log.train_loss[t - 1] + 1e-12);
    CHECK(m.log.train_loss.back() < m.log.train_loss.front());
  }
}

TEST_CASE("predictions are additive over trees") {
  auto data = noisy_fixture(300, 5);
  for (auto profile : {BoostProfile::xgb, BoostProfile::cat, BoostProfile::lgbm}) {
    auto m = train_boosted(data.view, data.labels, quick(profile, 10), 6);
    auto shorter = m;
    shorter.trees.pop_back();
    for (std::size_t r = 0; r < 300; ++r) {
      const double full = predict_boosted(m, data.view, r).raw_score;
      const double prev = predict_boosted(shorter, data.view, r).raw_score;
      REQUIRE(full == prev + m.learning_rate * m.trees.back().predict(data.view, r));
    }
  }
}

TEST_CASE("profile structure") {
  auto data = noisy_fixture(600, 9);
  auto xgb = train_boosted(data.view, data.labels, quick(BoostProfile::xgb, 8), 1);
  for (const auto& t : xgb.trees) {
    CHECK(t.kind == GrowthPolicy::Kind::depth_wise);
    CHECK(t.depth() <= 3);
  }
  auto lgbm = train_boosted(data.view, data.labels, quick(BoostProfile::lgbm, 8), 1);
  for (const auto& t : lgbm.trees) {
    CHECK(t.kind == GrowthPolicy::Kind::leaf_wise);
    CHECK(t.n_leaves() <= 6);
  }
  auto cat = train_boosted(data.view, data.labels, quick(BoostProfile::cat, 8), 1);
  for (const auto& t : cat.trees) {
    CHECK(t.kind == GrowthPolicy::Kind::symmetric);
    CHECK(t.depth() <= 3);
    // Every internal node at level d uses the level's shared split.
    std::vector<std::pair<std::size_t, int>> frontier{{0, 0}};
    while (!frontier.empty()) {
      auto [id, d] = frontier.back();
      frontier.pop_back();
      const auto& node = t.nodes[id];
      if (node.is_leaf()) continue;
      REQUIRE(static_cast<std::size_t>(d) < t.levels.size());
      CHECK(static_cast<std::size_t>(node.feature) == t.levels[d].first);
      CHECK(node.threshold == t.levels[d].second);
      frontier.push_back({static_cast<std::size_t>(node.left), d + 1});
      frontier.push_back({static_cast<std::size_t>(node.right), d + 1});
    }
  }
}

TEST_CASE("ordered boosting reads each row's gradient from a state that excludes its fold") {
  // One informative binary feature: every round splits on it, so the tree
  // structure is fixed and only the label perturbation can matter.
  const std::size_t n = 40;
  std::vector<int> f(n);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t r = 0; r < n; ++r) {
    f[r] = r % 2 == 0 ? 1 : 0;
    labels[r] = static_cast<std::uint8_t>(r % 10 == 3 ? 1 - f[r] : f[r]);
  }
  auto view = view_from_bins({f});
  auto p = quick(BoostProfile::cat, 6);
  p.growth.max_depth = 1;
  p.rsm = 1.0;

  OrderedTrace base_trace, flip_trace;
  auto base = train_boosted(view, labels, p, 17, nullptr, &base_trace);
  const std::size_t target = 6;
  auto flipped_labels = labels;
  flipped_labels[target] = 1 - flipped_labels[target];
  auto flipped = train_boosted(view, flipped_labels, p, 17, nullptr, &flip_trace);

  REQUIRE(base_trace.fold_of_row == flip_trace.fold_of_row);
  REQUIRE(base.trees.size() == flipped.trees.size());
  for (std::size_t t = 0; t < base.trees.size(); ++t) {
    REQUIRE(base.trees[t].levels == flipped.trees[t].levels);
  }
  const std::size_t fold = base_trace.fold_of_row[target];
  bool other_fold_moved = false;
  for (std::size_t t = 0; t < base_trace.gradient_scores.size(); ++t) {
    for (std::size_t r = 0; r < n; ++r) {
      const double a = base_trace.gradient_scores[t][r];
      const double b = flip_trace.gradient_scores[t][r];
      if (base_trace.fold_of_row[r] == fold) {
        REQUIRE(same_bits(a, b));
      } else if (a != b) {
        other_fold_moved = true;
      }
    }
  }
  CHECK(other_fold_moved);
  CHECK(base_trace.gradient_scores.size() == 6);
}

TEST_CASE("early stopping truncates to the best validation round") {
  auto data = noisy_fixture(800, 12, 12);
  auto p = quick(BoostProfile::xgb, 300);
  p.learning_rate = 0.5;
  p.growth.max_depth = 6;
  p.early_stopping_patience = 5;
  auto m = train_boosted(data.view, data.labels, p, 3);
  CHECK(m.log.stopped_early);
  CHECK(m.trees.size() == m.log.best_round);
  REQUIRE(m.log.valid_loss.size() == m.log.best_round + 5);
  const auto best = std::min_element(m.log.valid_loss.begin(), m.log.valid_loss.end());
  CHECK(static_cast<std::size_t>(best - m.log.valid_loss.begin()) + 1 == m.log.best_round);

  // An explicit holdout replaces the carve-out.
  auto hold = noisy_fixture(200, 13, 12);
  Holdout h{&hold.view, hold.labels};
  auto mh = train_boosted(data.view, data.labels, p, 3, &h);
  CHECK(!mh.log.valid_loss.empty());
  CHECK(mh.trees.size() == mh.log.best_round);
}

TEST_CASE("stratified holdout keeps class balance") {
  std::vector<std::uint8_t> labels(1000, 0);
  for (std::size_t i = 0; i < 300; ++i) labels[i * 3] = 1;
  auto split = stratified_holdout(labels, 0.1, 4);
  CHECK(split.valid.size() == 100);
  CHECK(split.train.size() == 900);
  std::size_t pos = 0;
  for (auto r : split.valid) pos += labels[r];
  CHECK(pos == 30);
}

TEST_CASE("boosted model serialization preserves raw scores bitwise") {
  auto data = noisy_fixture(300, 21);
  for (auto profile : {BoostProfile::xgb, BoostProfile::cat, BoostProfile::lgbm}) {
    auto m = train_boosted(data.view, data.labels, quick(profile, 7), 8);
    auto back = BoostedModel::from_json(nlohmann::json::parse(m.to_json().dump()));
    CHECK(back.to_json() == m.to_json());
    for (std::size_t r = 0; r < 300; ++r) {
      REQUIRE(same_bits(predict_boosted(m, data.view, r).raw_score, predict_boosted(back, data.view, r).raw_score));
    }
  }
}

TEST_CASE("boosting is reproducible and independent of thread count") {
  auto data = noisy_fixture(400, 22);
  for (auto profile : {BoostProfile::xgb, BoostProfile::cat, BoostProfile::lgbm}) {
    auto p = BoostParams::defaults(profile);
    p.n_rounds = 6;
    p.growth.max_depth = profile == BoostProfile::lgbm ? -1 : 4;
    set_num_threads(1);
    auto a = train_boosted(data.view, data.labels, p, 5).to_json().dump();
    set_num_threads(3);
    auto b = train_boosted(data.view, data.labels, p, 5).to_json().dump();
    set_num_threads(0);
    CHECK(a == b);
  }
}

TEST_CASE("non-finite loss names the round") {
  auto view = view_from_bins({{0, 1}});
  std::vector<std::uint8_t> labels{0, 1};
  auto p = quick(BoostProfile::xgb, 3);
  p.base_score = std::numeric_limits<double>::infinity();
  try {
    train_boosted(view, labels, p, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("round 1") != std::string::npos);
  }
}

TEST_CASE("parameter names, aliases and validation") {
  auto p = BoostParams::defaults(BoostProfile::lgbm);
  CHECK(p.learning_rate == 0.05);
  CHECK(p.growth.num_leaves == 63);
  CHECK(p.subsample == 0.9);
  CHECK(p.colsample_bytree == 0.9);
  CHECK(p.reg.min_data_in_leaf == 5);
  set_boost_param(p, "bagging_fraction", 0.7);
  set_boost_param(p, "feature_fraction", 0.6);
  CHECK(p.subsample == 0.7);
  CHECK(p.colsample_bytree == 0.6);
  CHECK_THROWS_AS(set_boost_param(p, "max_depth", 2.5), Error);
  CHECK_THROWS_AS(set_boost_param(p, "nonsense", 1.0), Error);

  auto x = BoostParams::defaults(BoostProfile::xgb);
  CHECK(x.learning_rate == 0.075);
  CHECK(x.growth.max_depth == 8);
  CHECK(x.reg.min_child_weight == 5.0);
  auto c = BoostParams::defaults(BoostProfile::cat);
  CHECK(c.growth.kind == GrowthPolicy::Kind::symmetric);
  CHECK(c.rsm == 0.8);
  c.growth = GrowthPolicy::depth_wise(4);
  CHECK_THROWS_AS(c.validate(), Error);
  x.subsample = 0.0;
  CHECK_THROWS_AS(x.validate(), Error);
  CHECK(BoostParams::from_json(p.to_json()).to_json() == p.to_json());
}
