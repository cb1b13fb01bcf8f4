#include "nidens/tree.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "nidens/error.hpp"
#include "nidens/parallel.hpp"

namespace nidens {

using nlohmann::json;

void RegularizationParams::validate() const {
  if (!(lambda >= 0.0) || !(gamma >= 0.0) || !(alpha >= 0.0) || !(min_child_weight >= 0.0)) {
    throw Error("regularization parameters must be non-negative");
  }
}

void GrowthPolicy::validate() const {
  if (kind != Kind::leaf_wise && max_depth < 1) throw Error("tree depth must be at least 1");
  if (kind == Kind::leaf_wise && num_leaves < 2) throw Error("num_leaves must be at least 2");
  if (kind == Kind::symmetric && max_depth > 16) throw Error("symmetric depth above 16 is not supported");
}

std::string_view to_string(GrowthPolicy::Kind k) {
  switch (k) {
    case GrowthPolicy::Kind::depth_wise: return "depth_wise";
    case GrowthPolicy::Kind::leaf_wise: return "leaf_wise";
    case GrowthPolicy::Kind::symmetric: return "symmetric";
  }
  return "?";
}

double gini_impurity(std::span<const double> class_proportions) {
  double sum = 0.0;
  double sq = 0.0;
  for (double p : class_proportions) {
    if (p < 0.0) throw Error("class proportions must be non-negative");
    sum += p;
    sq += p * p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("class proportions must sum to 1");
  return 1.0 - sq;
}

double optimal_leaf_value(double sum_grad, double sum_hess, const RegularizationParams& reg) noexcept {
  const double denom = sum_hess + reg.l2();
  return denom > 0.0 ? -sum_grad / denom : 0.0;
}

std::size_t sampled_count(double fraction, std::size_t n) {
  if (n == 0) return 0;
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-12));
  return std::clamp<std::size_t>(k, 1, n);
}

namespace {

constexpr double kTieTolerance = 1e-12;

struct BinStat {
  double g = 0.0;  // gradient sum, or positive count in gini mode
  double h = 0.0;
  double n = 0.0;

  BinStat& operator+=(const BinStat& o) noexcept {
    g += o.g;
    h += o.h;
    n += o.n;
    return *this;
  }
  BinStat& operator-=(const BinStat& o) noexcept {
    g -= o.g;
    h -= o.h;
    n -= o.n;
    return *this;
  }
};

double binary_gini(const BinStat& s) noexcept {
  if (s.n <= 0.0) return 0.0;
  const double p = s.g / s.n;
  return 2.0 * p * (1.0 - p);
}

struct GiniMode {
  std::span<const std::uint8_t> labels;

  void add(BinStat& s, std::size_t r) const noexcept {
    s.g += labels[r];
    s.n += 1.0;
  }
  double gain(const BinStat& parent, const BinStat& l, const BinStat& r, const RegularizationParams&) const noexcept {
    return binary_gini(parent) - (l.n / parent.n) * binary_gini(l) - (r.n / parent.n) * binary_gini(r);
  }
  bool admissible(const BinStat& l, const BinStat& r, const RegularizationParams& reg) const noexcept {
    const double min_leaf = static_cast<double>(std::max<std::size_t>(1, reg.min_data_in_leaf));
    return l.n >= min_leaf && r.n >= min_leaf;
  }
  double leaf(const BinStat& s, const RegularizationParams&) const noexcept { return s.n > 0.0 ? s.g / s.n : 0.0; }
};

double score_term(double g, double h, double l2) noexcept {
  const double d = h + l2;
  return d > 0.0 ? g * g / d : 0.0;
}

struct GradMode {
  std::span<const double> grad;
  std::span<const double> hess;

  void add(BinStat& s, std::size_t r) const noexcept {
    s.g += grad[r];
    s.h += hess[r];
    s.n += 1.0;
  }
  double gain(const BinStat& parent, const BinStat& l, const BinStat& r, const RegularizationParams& reg) const noexcept {
    const double l2 = reg.l2();
    return 0.5 * (score_term(l.g, l.h, l2) + score_term(r.g, r.h, l2) - score_term(parent.g, parent.h, l2)) -
           reg.leaf_penalty();
  }
  bool admissible(const BinStat& l, const BinStat& r, const RegularizationParams& reg) const noexcept {
    const double min_leaf = static_cast<double>(std::max<std::size_t>(1, reg.min_data_in_leaf));
    return l.n >= min_leaf && r.n >= min_leaf && l.h >= reg.min_child_weight && r.h >= reg.min_child_weight;
  }
  double leaf(const BinStat& s, const RegularizationParams& reg) const noexcept {
    return optimal_leaf_value(s.g, s.h, reg);
  }
};

/// Per-node histogram over every view feature; slot n_bins[f] holds missing rows.
class Histogram {
 public:
  explicit Histogram(const BinnedView& view) : offsets_(view.n_features() + 1, 0) {
    for (std::size_t f = 0; f < view.n_features(); ++f) offsets_[f + 1] = offsets_[f] + view.n_bins[f] + 1u;
  }

  std::span<BinStat> feature(std::size_t f) noexcept { return {stats_.data() + offsets_[f], offsets_[f + 1] - offsets_[f]}; }
  std::span<const BinStat> feature(std::size_t f) const noexcept {
    return {stats_.data() + offsets_[f], offsets_[f + 1] - offsets_[f]};
  }

  template <typename Mode>
  void build(const BinnedView& view, std::span<const std::size_t> rows, const Mode& mode,
             std::span<const std::size_t> features) {
    stats_.assign(offsets_.back(), BinStat{});
    parallel_for(features.size(), [&](std::size_t i) {
      const std::size_t f = features[i];
      auto slot = feature(f);
      const std::size_t missing = slot.size() - 1;
      const auto& bins = view.bins[f];
      for (auto r : rows) {
        const auto b = bins[r];
        mode.add(slot[b == kMissingBin ? missing : b], r);
      }
    });
  }

  /// this = parent - sibling over the given features.
  void subtract(const Histogram& parent, const Histogram& sibling, std::span<const std::size_t> features) {
    stats_.assign(offsets_.back(), BinStat{});
    for (auto f : features) {
      auto out = feature(f);
      auto p = parent.feature(f);
      auto s = sibling.feature(f);
      for (std::size_t b = 0; b < out.size(); ++b) {
        out[b] = p[b];
        out[b] -= s[b];
      }
    }
  }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<BinStat> stats_;
};

void consider(std::optional<SplitCandidate>& best, std::size_t f, std::size_t t, double gain, bool default_left,
              double ln, double rn) {
  if (!(gain > kMinSplitGain)) return;
  if (best && !(gain > best->gain + kTieTolerance)) return;
  best = SplitCandidate{f, static_cast<std::uint8_t>(t), gain, default_left, ln, rn};
}

template <typename Mode>
void scan_feature(const Mode& mode, std::span<const BinStat> slot, const BinStat& total,
                  const RegularizationParams& reg, std::size_t f, std::optional<SplitCandidate>& best) {
  const std::size_t nb = slot.size() - 1;
  if (nb < 2) return;
  const BinStat& missing = slot[nb];
  std::vector<BinStat> suffix(nb + 1);
  for (std::size_t b = nb; b-- > 0;) {
    suffix[b] = suffix[b + 1];
    suffix[b] += slot[b];
  }
  BinStat left;
  for (std::size_t t = 0; t + 1 < nb; ++t) {
    left += slot[t];
    BinStat l = left;
    BinStat r = suffix[t + 1];
    const bool default_left = l.n >= r.n;
    if (missing.n > 0.0) (default_left ? l : r) += missing;
    if (!mode.admissible(l, r, reg)) continue;
    consider(best, f, t, mode.gain(total, l, r, reg), default_left, l.n, r.n);
  }
}

template <typename Mode>
BinStat node_total(const Mode& mode, std::span<const std::size_t> rows) {
  BinStat s;
  for (auto r : rows) mode.add(s, r);
  return s;
}

template <typename Mode>
std::optional<SplitCandidate> search(const Mode& mode, const Histogram& hist, const BinStat& total,
                                     std::span<const std::size_t> sorted_features, const RegularizationParams& reg) {
  if (total.n < static_cast<double>(reg.min_samples_split)) return std::nullopt;
  // Features scan independently; the reduction below runs in feature order.
  std::vector<std::optional<SplitCandidate>> per_feature(sorted_features.size());
  parallel_for(sorted_features.size(), [&](std::size_t i) {
    scan_feature(mode, hist.feature(sorted_features[i]), total, reg, sorted_features[i], per_feature[i]);
  });
  std::optional<SplitCandidate> best;
  for (const auto& c : per_feature) {
    if (c) consider(best, c->feature, c->threshold, c->gain, c->default_left, c->left_count, c->right_count);
  }
  return best;
}

std::vector<std::size_t> all_features(const BinnedView& view) {
  std::vector<std::size_t> f(view.n_features());
  std::iota(f.begin(), f.end(), std::size_t{0});
  return f;
}

std::vector<std::size_t> sorted_copy(std::span<const std::size_t> features) {
  std::vector<std::size_t> f(features.begin(), features.end());
  std::sort(f.begin(), f.end());
  f.erase(std::unique(f.begin(), f.end()), f.end());
  return f;
}

template <typename Mode>
std::optional<SplitCandidate> best_split_direct(const Mode& mode, const BinnedView& view,
                                                std::span<const std::size_t> rows,
                                                std::span<const std::size_t> candidate_features,
                                                const RegularizationParams& reg) {
  if (rows.empty()) return std::nullopt;
  const auto features = sorted_copy(candidate_features);
  Histogram hist(view);
  hist.build(view, rows, mode, features);
  return search(mode, hist, node_total(mode, rows), features, reg);
}

bool goes_left(std::uint8_t bin, std::uint8_t threshold, bool default_left) noexcept {
  return bin == kMissingBin ? default_left : bin <= threshold;
}

// ---------------------------------------------------------------------------
// Growth

template <typename Mode>
class Grower {
 public:
  Grower(const BinnedView& view, std::span<const std::size_t> rows, const Mode& mode, const GrowthPolicy& policy,
         const RegularizationParams& reg, const GrowOptions& opts, Rng& rng)
      : view_(view), mode_(mode), policy_(policy), reg_(reg), opts_(opts), rng_(rng), idx_(rows.begin(), rows.end()) {
    tree_features_ = opts.features.empty() ? all_features(view) : sorted_copy(opts.features);
    for (auto f : tree_features_) {
      if (f >= view.n_features()) throw Error("tree feature index out of range");
    }
    tree_.kind = policy.kind;
  }

  DecisionTree run() {
    switch (policy_.kind) {
      case GrowthPolicy::Kind::depth_wise: grow_depth_wise(); break;
      case GrowthPolicy::Kind::leaf_wise: grow_leaf_wise(); break;
      case GrowthPolicy::Kind::symmetric: grow_symmetric(); break;
    }
    return std::move(tree_);
  }

 private:
  struct Work {
    std::int32_t node = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    int depth = 0;
    BinStat total;
    std::unique_ptr<Histogram> hist;
    std::optional<SplitCandidate> best;
  };

  std::span<const std::size_t> rows_of(const Work& w) const { return {idx_.data() + w.begin, w.end - w.begin}; }

  std::int32_t add_leaf(const BinStat& total) {
    TreeNode n;
    n.value = mode_.leaf(total, reg_);
    n.count = total.n;
    tree_.nodes.push_back(n);
    return static_cast<std::int32_t>(tree_.nodes.size() - 1);
  }

  Work make_root() {
    Work w;
    w.begin = 0;
    w.end = idx_.size();
    w.total = node_total(mode_, rows_of(w));
    w.node = add_leaf(w.total);
    w.hist = std::make_unique<Histogram>(view_);
    w.hist->build(view_, rows_of(w), mode_, tree_features_);
    return w;
  }

  std::vector<std::size_t> split_candidates() {
    if (opts_.split_feature_fraction >= 1.0) return tree_features_;
    const auto k = sampled_count(opts_.split_feature_fraction, tree_features_.size());
    std::vector<std::size_t> out;
    for (auto i : rng_.sample_without_replacement(tree_features_.size(), k)) out.push_back(tree_features_[i]);
    return out;
  }

  void evaluate(Work& w) {
    const auto candidates = split_candidates();
    w.best = search(mode_, *w.hist, w.total, candidates, reg_);
  }

  /// Stable partition of the node's rows; returns the first right-hand position.
  std::size_t partition(const Work& w, std::size_t feature, std::uint8_t threshold, bool default_left) {
    const auto& bins = view_.bins[feature];
    auto first = idx_.begin() + static_cast<std::ptrdiff_t>(w.begin);
    auto last = idx_.begin() + static_cast<std::ptrdiff_t>(w.end);
    scratch_.clear();
    auto out = first;
    for (auto it = first; it != last; ++it) {
      if (goes_left(bins[*it], threshold, default_left)) {
        *out++ = *it;
      } else {
        scratch_.push_back(*it);
      }
    }
    std::copy(scratch_.begin(), scratch_.end(), out);
    return static_cast<std::size_t>(out - idx_.begin());
  }

  std::pair<Work, Work> split(Work& parent, std::size_t feature, std::uint8_t threshold, bool default_left,
                              double gain) {
    const std::size_t mid = partition(parent, feature, threshold, default_left);
    Work l;
    Work r;
    l.begin = parent.begin;
    l.end = mid;
    r.begin = mid;
    r.end = parent.end;
    l.depth = r.depth = parent.depth + 1;
    l.total = node_total(mode_, rows_of(l));
    r.total = node_total(mode_, rows_of(r));
    l.node = add_leaf(l.total);
    r.node = add_leaf(r.total);

    auto& node = tree_.nodes[static_cast<std::size_t>(parent.node)];
    node.feature = static_cast<std::int32_t>(feature);
    node.threshold = threshold;
    node.default_left = default_left;
    node.gain = gain;
    node.left = l.node;
    node.right = r.node;

    // Histogram of the smaller child is built, the larger one is parent - smaller.
    Work& small = (l.end - l.begin) <= (r.end - r.begin) ? l : r;
    Work& large = &small == &l ? r : l;
    small.hist = std::make_unique<Histogram>(view_);
    small.hist->build(view_, rows_of(small), mode_, tree_features_);
    large.hist = std::make_unique<Histogram>(view_);
    large.hist->subtract(*parent.hist, *small.hist, tree_features_);
    parent.hist.reset();
    return {std::move(l), std::move(r)};
  }

  void grow_depth_wise() {
    std::vector<Work> frontier;
    frontier.push_back(make_root());
    for (int depth = 0; depth < policy_.max_depth && !frontier.empty(); ++depth) {
      std::vector<Work> next;
      for (auto& w : frontier) {
        evaluate(w);
        if (!w.best) continue;
        auto [l, r] = split(w, w.best->feature, w.best->threshold, w.best->default_left, w.best->gain);
        next.push_back(std::move(l));
        next.push_back(std::move(r));
      }
      frontier = std::move(next);
    }
  }

  void grow_leaf_wise() {
    const bool capped = policy_.max_depth > 0;
    std::vector<Work> open;
    open.push_back(make_root());
    evaluate(open.back());
    std::size_t leaves = 1;
    while (leaves < static_cast<std::size_t>(policy_.num_leaves)) {
      // Highest gain wins; equal gains go to the older node.
      std::optional<std::size_t> pick;
      for (std::size_t i = 0; i < open.size(); ++i) {
        if (!open[i].best) continue;
        if (!pick || open[i].best->gain > open[*pick].best->gain + kTieTolerance ||
            (std::abs(open[i].best->gain - open[*pick].best->gain) <= kTieTolerance &&
             open[i].node < open[*pick].node)) {
          pick = i;
        }
      }
      if (!pick) break;
      Work w = std::move(open[*pick]);
      open.erase(open.begin() + static_cast<std::ptrdiff_t>(*pick));
      auto [l, r] = split(w, w.best->feature, w.best->threshold, w.best->default_left, w.best->gain);
      ++leaves;
      for (Work* c : {&l, &r}) {
        if (!capped || c->depth < policy_.max_depth) evaluate(*c);
        open.push_back(std::move(*c));
      }
    }
  }

  void grow_symmetric() {
    std::vector<Work> level;
    level.push_back(make_root());
    for (int depth = 0; depth < policy_.max_depth; ++depth) {
      const auto candidates = sorted_copy(split_candidates());
      std::optional<SplitCandidate> best;
      for (auto f : candidates) {
        const std::size_t nb = view_.n_bins[f];
        if (nb < 2) continue;
        std::vector<double> total_gain(nb - 1, -reg_.leaf_penalty() * static_cast<double>(level.size()));
        for (const auto& w : level) {
          if (w.total.n <= 0.0) continue;
          auto slot = w.hist->feature(f);
          const BinStat& missing = slot[nb];
          BinStat left;
          BinStat right = w.total;
          right -= missing;
          for (std::size_t t = 0; t + 1 < nb; ++t) {
            left += slot[t];
            right -= slot[t];
            BinStat l = left;
            BinStat r = right;
            if (missing.n > 0.0) (l.n >= r.n ? l : r) += missing;
            total_gain[t] += mode_.gain(w.total, l, r, reg_) + reg_.leaf_penalty();
          }
        }
        for (std::size_t t = 0; t + 1 < nb; ++t) consider(best, f, t, total_gain[t], true, 0.0, 0.0);
      }
      if (!best) break;
      tree_.levels.emplace_back(best->feature, best->threshold);
      std::vector<Work> next;
      for (auto& w : level) {
        // Count rows per side to pick this node's default branch.
        double left_rows = 0.0;
        double right_rows = 0.0;
        for (auto r : rows_of(w)) {
          const auto b = view_.bins[best->feature][r];
          if (b == kMissingBin) continue;
          (b <= best->threshold ? left_rows : right_rows) += 1.0;
        }
        auto [l, r] = split(w, best->feature, best->threshold, left_rows >= right_rows, best->gain);
        next.push_back(std::move(l));
        next.push_back(std::move(r));
      }
      level = std::move(next);
    }
  }

  const BinnedView& view_;
  const Mode& mode_;
  const GrowthPolicy& policy_;
  const RegularizationParams& reg_;
  const GrowOptions& opts_;
  Rng& rng_;
  std::vector<std::size_t> idx_;
  std::vector<std::size_t> scratch_;
  std::vector<std::size_t> tree_features_;
  DecisionTree tree_;
};

}  // namespace

std::optional<SplitCandidate> best_split_gini(const BinnedView& view, std::span<const std::size_t> rows,
                                              std::span<const std::uint8_t> labels,
                                              std::span<const std::size_t> candidate_features,
                                              const RegularizationParams& reg) {
  return best_split_direct(GiniMode{labels}, view, rows, candidate_features, reg);
}

std::optional<SplitCandidate> best_split_grad(const BinnedView& view, std::span<const std::size_t> rows,
                                              std::span<const double> grad, std::span<const double> hess,
                                              const RegularizationParams& reg,
                                              std::span<const std::size_t> candidate_features) {
  return best_split_direct(GradMode{grad, hess}, view, rows, candidate_features, reg);
}

DecisionTree grow_tree(const BinnedView& view, std::span<const std::size_t> rows, const TreeTarget& target,
                       const GrowthPolicy& policy, const RegularizationParams& reg, const GrowOptions& opts,
                       Rng& rng) {
  if (rows.empty()) throw Error("cannot grow a tree on zero rows");
  policy.validate();
  reg.validate();
  if (!(opts.split_feature_fraction > 0.0 && opts.split_feature_fraction <= 1.0)) {
    throw Error("split feature fraction must be in (0, 1]");
  }
  return std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, GiniTarget>) {
          GiniMode mode{t.labels};
          return Grower<GiniMode>(view, rows, mode, policy, reg, opts, rng).run();
        } else {
          GradMode mode{t.grad, t.hess};
          return Grower<GradMode>(view, rows, mode, policy, reg, opts, rng).run();
        }
      },
      target);
}

// ---------------------------------------------------------------------------
// DecisionTree

std::size_t DecisionTree::n_leaves() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.is_leaf(); }));
}

int DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    if (n.is_leaf()) {
      best = std::max(best, d[i]);
      continue;
    }
    d[static_cast<std::size_t>(n.left)] = d[i] + 1;
    d[static_cast<std::size_t>(n.right)] = d[i] + 1;
  }
  return best;
}

double DecisionTree::predict(std::span<const std::uint8_t> row_bins) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& n = nodes[i];
    const auto f = static_cast<std::size_t>(n.feature);
    if (f >= row_bins.size()) throw SchemaError("row has fewer features than the tree expects");
    i = static_cast<std::size_t>(goes_left(row_bins[f], n.threshold, n.default_left) ? n.left : n.right);
  }
  return nodes[i].value;
}

std::size_t DecisionTree::leaf_index(const BinnedView& view, std::size_t row) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& n = nodes[i];
    const auto f = static_cast<std::size_t>(n.feature);
    if (f >= view.n_features()) throw SchemaError("view has fewer features than the tree expects");
    i = static_cast<std::size_t>(goes_left(view.bins[f][row], n.threshold, n.default_left) ? n.left : n.right);
  }
  return i;
}

double DecisionTree::predict(const BinnedView& view, std::size_t row) const {
  return nodes[leaf_index(view, row)].value;
}

json DecisionTree::to_json() const {
  json j;
  j["growth"] = to_string(kind);
  json arr = json::array();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    json node{{"id", i}, {"count", n.count}};
    if (n.is_leaf()) {
      node["leaf"] = n.value;
    } else {
      node["feature"] = n.feature;
      node["threshold"] = n.threshold;
      node["left"] = n.left;
      node["right"] = n.right;
      node["default"] = n.default_left ? "left" : "right";
      node["value"] = n.value;
      node["gain"] = n.gain;
    }
    arr.push_back(std::move(node));
  }
  j["nodes"] = std::move(arr);
  if (!levels.empty()) {
    json lv = json::array();
    for (const auto& [f, t] : levels) lv.push_back({{"feature", f}, {"threshold", t}});
    j["levels"] = std::move(lv);
  }
  return j;
}

DecisionTree DecisionTree::from_json(const json& j) {
  DecisionTree t;
  const auto growth = j.at("growth").get<std::string>();
  if (growth == "depth_wise") {
    t.kind = GrowthPolicy::Kind::depth_wise;
  } else if (growth == "leaf_wise") {
    t.kind = GrowthPolicy::Kind::leaf_wise;
  } else if (growth == "symmetric") {
    t.kind = GrowthPolicy::Kind::symmetric;
  } else {
    throw ParseError("unknown growth kind '" + growth + "'");
  }
  for (const auto& node : j.at("nodes")) {
    TreeNode n;
    n.count = node.at("count").get<double>();
    if (node.contains("leaf")) {
      n.value = node.at("leaf").get<double>();
    } else {
      n.feature = node.at("feature").get<std::int32_t>();
      n.threshold = node.at("threshold").get<std::uint8_t>();
      n.left = node.at("left").get<std::int32_t>();
      n.right = node.at("right").get<std::int32_t>();
      n.default_left = node.at("default").get<std::string>() == "left";
      n.value = node.at("value").get<double>();
      n.gain = node.at("gain").get<double>();
    }
    t.nodes.push_back(n);
  }
  const auto n_nodes = static_cast<std::int32_t>(t.nodes.size());
  for (const auto& n : t.nodes) {
    if (!n.is_leaf() && (n.left <= 0 || n.right <= 0 || n.left >= n_nodes || n.right >= n_nodes)) {
      throw ParseError("tree node references a missing child");
    }
  }
  if (j.contains("levels")) {
    for (const auto& lv : j.at("levels")) {
      t.levels.emplace_back(lv.at("feature").get<std::size_t>(), lv.at("threshold").get<std::uint8_t>());
    }
  }
  return t;
}

}  // namespace nidens
