#include "nidens/search.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "nidens/error.hpp"

namespace nidens {

using nlohmann::json;

std::vector<std::size_t> FoldPlan::train_rows(std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < fold_of_row.size(); ++r) {
    if (fold_of_row[r] != fold) rows.push_back(r);
  }
  return rows;
}

std::vector<std::size_t> FoldPlan::valid_rows(std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < fold_of_row.size(); ++r) {
    if (fold_of_row[r] == fold) rows.push_back(r);
  }
  return rows;
}

json FoldPlan::to_json() const {
  return {{"k", k}, {"seed", seed}, {"shuffled", shuffled}, {"stratified", stratified}, {"fold_of_row", fold_of_row}};
}

FoldPlan FoldPlan::from_json(const json& j) {
  FoldPlan p;
  p.k = j.at("k").get<std::size_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.shuffled = j.at("shuffled").get<bool>();
  p.stratified = j.at("stratified").get<bool>();
  p.fold_of_row = j.at("fold_of_row").get<std::vector<std::uint32_t>>();
  return p;
}

FoldPlan make_folds(std::span<const std::uint8_t> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error("need at least 2 folds");
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.fold_of_row.assign(labels.size(), 0);
  Rng rng(derive_seed(seed, "folds"));
  std::size_t counter = 0;
  for (std::uint8_t cls : {std::uint8_t{0}, std::uint8_t{1}}) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < labels.size(); ++r) {
      if (labels[r] == cls) rows.push_back(r);
    }
    if (rows.size() < k) {
      throw Error("class " + std::to_string(cls) + " has " + std::to_string(rows.size()) + " rows, fewer than " +
                  std::to_string(k) + " folds");
    }
    rng.shuffle(rows);
    for (auto r : rows) plan.fold_of_row[r] = static_cast<std::uint32_t>(counter++ % k);
  }
  return plan;
}

namespace {

using Kind = ParamDomain::Kind;

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::continuous: return "continuous";
    case Kind::integer: return "integer";
    case Kind::categorical: return "categorical";
    case Kind::fixed: return "fixed";
  }
  return "?";
}

Kind kind_from_name(std::string_view s) {
  for (auto k : {Kind::continuous, Kind::integer, Kind::categorical, Kind::fixed}) {
    if (kind_name(k) == s) return k;
  }
  throw ParseError("unknown parameter domain kind: " + std::string(s));
}

ParamDomain continuous(std::string name, double lo, double hi, double def, bool log_scale = false) {
  ParamDomain d;
  d.name = std::move(name);
  d.kind = Kind::continuous;
  d.lo = lo;
  d.hi = hi;
  d.value = def;
  d.log_scale = log_scale;
  return d;
}

ParamDomain integer(std::string name, double lo, double hi, double def, bool log_scale = false) {
  auto d = continuous(std::move(name), lo, hi, def, log_scale);
  d.kind = Kind::integer;
  return d;
}

ParamDomain fixed(std::string name, double value) {
  ParamDomain d;
  d.name = std::move(name);
  d.value = value;
  return d;
}

ParamDomain rate(std::string name, double v) { return continuous(std::move(name), v / 2.0, v * 2.0, v, true); }
ParamDomain fraction(std::string name, double v) {
  return continuous(std::move(name), v / 2.0, std::min(1.0, v * 2.0), v);
}
ParamDomain depth(std::string name, int v) { return integer(std::move(name), std::max(1, v - 4), v + 4, v); }

// Unit-interval coordinate of x within a numeric domain.
double to_unit(const ParamDomain& d, double x) {
  double lo = d.lo, hi = d.hi;
  if (d.kind == Kind::integer) {
    lo -= 0.5;
    hi += 0.5;
  }
  if (d.log_scale) {
    lo = std::log(std::max(lo, 1e-300));
    hi = std::log(hi);
    x = std::log(std::max(x, 1e-300));
  }
  return hi > lo ? std::clamp((x - lo) / (hi - lo), 0.0, 1.0) : 0.5;
}

double from_unit(const ParamDomain& d, double u) {
  double lo = d.lo, hi = d.hi;
  if (d.kind == Kind::integer) {
    lo -= 0.5;
    hi += 0.5;
  }
  double x;
  if (d.log_scale) {
    x = std::exp(std::log(std::max(lo, 1e-300)) + u * (std::log(hi) - std::log(std::max(lo, 1e-300))));
  } else {
    x = lo + u * (hi - lo);
  }
  if (d.kind == Kind::integer) x = std::clamp(std::round(x), d.lo, d.hi);
  return std::clamp(x, d.lo, d.hi);
}

}  // namespace

bool ParamDomain::contains(double x) const {
  if (!std::isfinite(x)) return false;
  switch (kind) {
    case Kind::continuous: return x >= lo && x <= hi;
    case Kind::integer: return x >= lo && x <= hi && x == std::floor(x);
    case Kind::categorical: return std::find(choices.begin(), choices.end(), x) != choices.end();
    case Kind::fixed: return x == value;
  }
  return false;
}

HyperparamSpace HyperparamSpace::defaults(LearnerKind kind) {
  HyperparamSpace s;
  switch (kind) {
    case LearnerKind::forest:
      s.params = {fraction("max_features", 0.5), integer("min_samples_split", 10, 40, 20), depth("max_depth", 4),
                  fixed("n_trees", 200)};
      break;
    case LearnerKind::xgb:
      s.params = {rate("eta", 0.075),          depth("max_depth", 8),        rate("min_child_weight", 5.0),
                  fraction("subsample", 1.0), fraction("colsample_bytree", 1.0), fixed("n_rounds", 200)};
      break;
    case LearnerKind::cat:
      s.params = {rate("learning_rate", 0.05), depth("depth", 8), fraction("rsm", 0.8), fixed("n_rounds", 200)};
      break;
    case LearnerKind::lgbm:
      s.params = {integer("num_leaves", 31, 127, 63, true), rate("learning_rate", 0.05),
                  fraction("feature_fraction", 0.9),        fraction("bagging_fraction", 0.9),
                  integer("min_data_in_leaf", 3, 10, 5),    fixed("n_rounds", 200)};
      break;
  }
  return s;
}

HyperparamSpace HyperparamSpace::fixed_at_defaults() const {
  HyperparamSpace s;
  for (const auto& d : params) s.params.push_back(fixed(d.name, d.value));
  return s;
}

ParamPoint HyperparamSpace::sample(Rng& rng) const {
  ParamPoint p;
  for (const auto& d : params) {
    switch (d.kind) {
      case Kind::fixed: p[d.name] = d.value; break;
      case Kind::categorical: p[d.name] = d.choices[rng.below(d.choices.size())]; break;
      default: p[d.name] = from_unit(d, rng.uniform()); break;
    }
  }
  return p;
}

ParamPoint HyperparamSpace::default_point() const {
  ParamPoint p;
  for (const auto& d : params) p[d.name] = d.value;
  return p;
}

bool HyperparamSpace::contains(const ParamPoint& p) const {
  if (p.size() != params.size()) return false;
  for (const auto& d : params) {
    auto it = p.find(d.name);
    if (it == p.end() || !d.contains(it->second)) return false;
  }
  return true;
}

json HyperparamSpace::to_json() const {
  json arr = json::array();
  for (const auto& d : params) {
    json j = {{"name", d.name}, {"kind", kind_name(d.kind)}, {"default", d.value}};
    if (d.kind == Kind::continuous || d.kind == Kind::integer) {
      j["low"] = d.lo;
      j["high"] = d.hi;
      j["log"] = d.log_scale;
    }
    if (d.kind == Kind::categorical) j["choices"] = d.choices;
    arr.push_back(std::move(j));
  }
  return {{"params", std::move(arr)}};
}

HyperparamSpace HyperparamSpace::from_json(const json& j) {
  HyperparamSpace s;
  for (const auto& p : j.at("params")) {
    ParamDomain d;
    d.name = p.at("name").get<std::string>();
    d.kind = kind_from_name(p.at("kind").get<std::string>());
    d.value = p.at("default").get<double>();
    if (d.kind == Kind::continuous || d.kind == Kind::integer) {
      d.lo = p.at("low").get<double>();
      d.hi = p.at("high").get<double>();
      d.log_scale = p.value("log", false);
      if (!(d.lo <= d.hi) || (d.log_scale && d.lo <= 0.0)) throw ParseError("bad range for parameter " + d.name);
    }
    if (d.kind == Kind::categorical) {
      d.choices = p.at("choices").get<std::vector<double>>();
      if (d.choices.empty()) throw ParseError("no choices for parameter " + d.name);
    }
    if (!d.contains(d.value)) throw ParseError("default outside the domain of parameter " + d.name);
    s.params.push_back(std::move(d));
  }
  return s;
}

json Trial::to_json() const {
  json j = {{"id", id},
            {"params", params},
            {"metric", to_string(metric)},
            {"fold_metrics", fold_metrics},
            {"mean", mean},
            {"std", std},
            {"seconds", seconds},
            {"phase", phase},
            {"failed", failed}};
  if (failed) j["reason"] = reason;
  return j;
}

Trial cross_validate(const Dataset& ds, const LearnerSpec& spec, const FoldPlan& folds, MetricId metric,
                     std::uint64_t seed, const FoldObserver& observer) {
  if (folds.n_rows() != ds.n_rows()) throw SchemaError("fold plan does not match the dataset");
  const auto start = std::chrono::steady_clock::now();
  Trial trial;
  trial.metric = metric;
  trial.oof.assign(ds.n_rows(), std::numeric_limits<double>::quiet_NaN());
  try {
    for (std::size_t f = 0; f < folds.k; ++f) {
      const auto train_rows = folds.train_rows(f);
      const auto valid_rows = folds.valid_rows(f);
      if (observer) observer(f, train_rows, valid_rows);
      const Dataset train = ds.subset(train_rows);
      const Dataset valid = ds.subset(valid_rows);
      const auto model = train_learner(train, spec, derive_seed(seed, f));
      const auto probs = model.predict_proba(valid);
      for (std::size_t i = 0; i < valid_rows.size(); ++i) trial.oof[valid_rows[i]] = probs[i];
      trial.fold_metrics.push_back(metric_value(metric, valid.labels(), probs));
    }
  } catch (const std::exception& e) {
    trial.failed = true;
    trial.reason = e.what();
  }
  if (!trial.failed) {
    const double k = static_cast<double>(trial.fold_metrics.size());
    trial.mean = std::accumulate(trial.fold_metrics.begin(), trial.fold_metrics.end(), 0.0) / k;
    double ss = 0.0;
    for (double v : trial.fold_metrics) ss += (v - trial.mean) * (v - trial.mean);
    trial.std = k > 1 ? std::sqrt(ss / (k - 1)) : 0.0;
  }
  trial.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return trial;
}

std::optional<std::size_t> best_trial(std::span<const Trial> trials) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& t = trials[i];
    if (t.failed || !std::isfinite(t.mean)) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = trials[*best];
    if (t.score() > b.score() || (t.score() == b.score() && t.std < b.std)) best = i;
  }
  return best;
}

namespace {

constexpr double kTwoPi = 6.283185307179586;

/// One-dimensional Parzen density over [0, 1]: truncated Gaussians at each
/// observation plus one uniform prior component. Each kernel is as wide as
/// the larger gap to its sorted neighbours, so clusters sharpen as trials pile up.
class Parzen {
 public:
  explicit Parzen(std::vector<double> obs) : mu_(std::move(obs)) {
    std::sort(mu_.begin(), mu_.end());
    const std::size_t n = mu_.size();
    const double floor = 1.0 / std::min(100.0, static_cast<double>(n) + 1.0);
    sigma_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double left = i == 0 ? mu_[i] : mu_[i] - mu_[i - 1];
      const double right = i + 1 == n ? 1.0 - mu_[i] : mu_[i + 1] - mu_[i];
      sigma_[i] = std::clamp(std::max(left, right), floor, 1.0);
    }
  }

  double density(double u) const {
    double total = 1.0;  // uniform prior
    for (std::size_t i = 0; i < mu_.size(); ++i) total += kernel(u, i);
    return total / static_cast<double>(mu_.size() + 1);
  }

  double sample(Rng& rng) const {
    const std::size_t j = static_cast<std::size_t>(rng.below(mu_.size() + 1));
    if (j == mu_.size()) return rng.uniform();
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double u = mu_[j] + sigma_[j] * rng.normal();
      if (u >= 0.0 && u <= 1.0) return u;
    }
    return mu_[j];
  }

 private:
  double kernel(double u, std::size_t i) const {
    const double s = sigma_[i];
    const double z = (u - mu_[i]) / s;
    const double mass = 0.5 * (std::erf((1.0 - mu_[i]) / (s * std::sqrt(2.0))) - std::erf(-mu_[i] / (s * std::sqrt(2.0))));
    return std::exp(-0.5 * z * z) / (s * std::sqrt(kTwoPi) * mass);
  }

  std::vector<double> mu_;
  std::vector<double> sigma_;
};

double categorical_prob(const ParamDomain& d, const std::vector<const ParamPoint*>& pts, double x) {
  double count = 0.0;
  for (const auto* p : pts) count += p->at(d.name) == x ? 1.0 : 0.0;
  return (count + 1.0) / (static_cast<double>(pts.size()) + static_cast<double>(d.choices.size()));
}

ParamPoint propose(const HyperparamSpace& space, const std::vector<Trial>& trials, std::size_t n_candidates, Rng& rng) {
  std::vector<const Trial*> done;
  for (const auto& t : trials) {
    if (!t.failed && std::isfinite(t.mean)) done.push_back(&t);
  }
  if (done.size() < 2) return space.sample(rng);
  std::stable_sort(done.begin(), done.end(), [](const Trial* a, const Trial* b) { return a->score() > b->score(); });
  const std::size_t n_good = std::max<std::size_t>(1, done.size() / 2);
  std::vector<const ParamPoint*> good, bad;
  for (std::size_t i = 0; i < done.size(); ++i) (i < n_good ? good : bad).push_back(&done[i]->params);

  struct Model {
    const ParamDomain* domain;
    std::optional<Parzen> l, g;
  };
  std::vector<Model> models;
  for (const auto& d : space.params) {
    Model m{&d, std::nullopt, std::nullopt};
    if (d.kind == Kind::continuous || d.kind == Kind::integer) {
      std::vector<double> lu, gu;
      for (const auto* p : good) lu.push_back(to_unit(d, p->at(d.name)));
      for (const auto* p : bad) gu.push_back(to_unit(d, p->at(d.name)));
      m.l.emplace(std::move(lu));
      m.g.emplace(std::move(gu));
    }
    models.push_back(std::move(m));
  }

  ParamPoint best;
  double best_ratio = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < n_candidates; ++c) {
    ParamPoint cand;
    double ratio = 0.0;
    for (const auto& m : models) {
      const auto& d = *m.domain;
      switch (d.kind) {
        case Kind::fixed: cand[d.name] = d.value; break;
        case Kind::categorical: {
          // Draw from the smoothed good frequencies.
          std::vector<double> w;
          for (double x : d.choices) w.push_back(categorical_prob(d, good, x));
          double pick = rng.uniform() * std::accumulate(w.begin(), w.end(), 0.0);
          std::size_t i = 0;
          while (i + 1 < w.size() && pick >= w[i]) pick -= w[i++];
          const double x = d.choices[i];
          cand[d.name] = x;
          ratio += std::log(categorical_prob(d, good, x)) - std::log(categorical_prob(d, bad, x));
          break;
        }
        default: {
          const double x = from_unit(d, m.l->sample(rng));
          const double u = to_unit(d, x);
          cand[d.name] = x;
          ratio += std::log(m.l->density(u)) - std::log(m.g->density(u));
        }
      }
    }
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best = std::move(cand);
    }
  }
  return best;
}

}  // namespace

SearchResult smbo_search(const HyperparamSpace& space, const SearchOptions& opts,
                         const std::function<Trial(const ParamPoint&)>& evaluate) {
  if (opts.budget < 1) throw Error("search budget must be at least 1");
  if (opts.candidates < 1) throw Error("need at least one candidate per proposal");
  SearchResult result;
  Rng rng(derive_seed(opts.seed, "smbo"));
  const std::size_t n_random = std::min(opts.budget, std::max<std::size_t>(5, opts.budget / 5));
  for (std::size_t i = 0; i < opts.budget; ++i) {
    const bool random_phase = i < n_random;
    ParamPoint point = random_phase ? space.sample(rng) : propose(space, result.trials, opts.candidates, rng);
    Trial t = evaluate(point);
    t.id = i;
    t.params = std::move(point);
    t.phase = random_phase ? "random" : "model";
    if (opts.trial_log != nullptr) *opts.trial_log << t.to_json().dump() << '\n';
    result.trials.push_back(std::move(t));
  }
  const auto best = best_trial(result.trials);
  if (!best) throw Error("every trial failed; first reason: " + result.trials.front().reason);
  result.best = result.trials[*best];
  return result;
}

LearnerSpec apply_point(LearnerSpec spec, const ParamPoint& point) {
  for (const auto& [name, value] : point) spec.set(name, value);
  return spec;
}

SearchResult tune(const Dataset& ds, const LearnerSpec& base, const HyperparamSpace& space, const FoldPlan& folds,
                  MetricId metric, const SearchOptions& opts) {
  return smbo_search(space, opts, [&](const ParamPoint& point) {
    return cross_validate(ds, apply_point(base, point), folds, metric, opts.cv_seed);
  });
}

}  // namespace nidens
