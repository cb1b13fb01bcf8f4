#include "nidens/stacker.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nidens/boosting.hpp"
#include "nidens/error.hpp"
#include "nidens/hash.hpp"

namespace nidens {

using nlohmann::json;

void OofMatrix::add(std::string id, std::vector<double> column) {
  if (columns.empty()) n_rows = column.size();
  if (column.size() != n_rows) throw Error("OOF column " + id + " has the wrong length");
  for (double p : column) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error("OOF column " + id + " has a value outside [0, 1]");
  }
  if (std::find(model_ids.begin(), model_ids.end(), id) != model_ids.end()) throw Error("duplicate OOF column " + id);
  model_ids.push_back(std::move(id));
  columns.push_back(std::move(column));
}

const std::vector<double>& OofMatrix::column(std::string_view id) const {
  for (std::size_t j = 0; j < model_ids.size(); ++j) {
    if (model_ids[j] == id) return columns[j];
  }
  throw Error("no OOF column " + std::string(id));
}

OofMatrix build_oof(const Dataset& ds, std::span<const NamedSpec> specs, const FoldPlan& folds, std::uint64_t seed) {
  OofMatrix oof;
  for (const auto& [id, spec] : specs) {
    auto trial = cross_validate(ds, spec, folds, MetricId::logloss, seed);
    if (trial.failed) throw Error("out-of-fold run for " + id + " failed: " + trial.reason);
    oof.add(id, std::move(trial.oof));
  }
  return oof;
}

double clamped_logit(double p) noexcept {
  const double q = std::clamp(p, 1e-15, 1.0 - 1e-15);
  return std::log(q) - std::log1p(-q);
}

double MetaLearner::predict(std::span<const double> member_probs) const {
  if (member_probs.size() != weights.size()) throw SchemaError("meta learner expects " + std::to_string(weights.size()) + " inputs");
  double z = intercept;
  for (std::size_t j = 0; j < weights.size(); ++j) z += weights[j] * clamped_logit(member_probs[j]);
  return sigmoid(z);
}

json MetaLearner::to_json() const {
  return {{"weights", weights},
          {"intercept", intercept},
          {"lambda", lambda},
          {"iterations", iterations},
          {"converged", converged},
          {"inputs", "log-odds"}};
}

MetaLearner MetaLearner::from_json(const json& j) {
  MetaLearner m;
  m.weights = j.at("weights").get<std::vector<double>>();
  m.intercept = j.at("intercept").get<double>();
  m.lambda = j.at("lambda").get<double>();
  m.iterations = j.at("iterations").get<std::size_t>();
  m.converged = j.at("converged").get<bool>();
  return m;
}

namespace {

// Solves A x = b for a small symmetric positive definite A (Gaussian
// elimination with partial pivoting).
std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    if (a[c][c] == 0.0) a[c][c] = 1e-300;
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

}  // namespace

MetaLearner fit_meta(const OofMatrix& oof, std::span<const std::uint8_t> labels, double lambda,
                     std::span<const std::size_t> rows) {
  const std::size_t d = oof.columns.size();
  if (d < 2) throw Error("meta learner needs at least 2 base models");
  if (labels.size() != oof.n_rows) throw SchemaError("label count does not match the OOF matrix");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("meta lambda must be finite and >= 0");
  std::vector<std::size_t> use(rows.begin(), rows.end());
  if (use.empty()) {
    use.resize(oof.n_rows);
    std::iota(use.begin(), use.end(), std::size_t{0});
  }
  // Design matrix: [1, logit(p_1), ..., logit(p_d)].
  std::vector<std::vector<double>> x(use.size(), std::vector<double>(d + 1, 1.0));
  for (std::size_t i = 0; i < use.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double p = oof.columns[j][use[i]];
      if (!std::isfinite(p)) throw Error("non-finite OOF value in column " + oof.model_ids[j]);
      x[i][j + 1] = clamped_logit(p);
    }
  }
  auto objective = [&](const std::vector<double>& theta) {
    double total = 0.0;
    for (std::size_t i = 0; i < use.size(); ++i) {
      const double z = std::inner_product(theta.begin(), theta.end(), x[i].begin(), 0.0);
      total += logloss(labels[use[i]], z);
    }
    for (std::size_t j = 1; j <= d; ++j) total += 0.5 * lambda * theta[j] * theta[j];
    return total;
  };

  MetaLearner m;
  m.lambda = lambda;
  std::vector<double> theta(d + 1, 0.0);
  double current = objective(theta);
  for (m.iterations = 0; m.iterations < 1000; ++m.iterations) {
    std::vector<double> grad(d + 1, 0.0);
    std::vector<std::vector<double>> hess(d + 1, std::vector<double>(d + 1, 0.0));
    for (std::size_t i = 0; i < use.size(); ++i) {
      const double z = std::inner_product(theta.begin(), theta.end(), x[i].begin(), 0.0);
      const double p = sigmoid(z);
      const double r = p - (labels[use[i]] ? 1.0 : 0.0);
      const double w = p * (1.0 - p);
      for (std::size_t a = 0; a <= d; ++a) {
        grad[a] += r * x[i][a];
        for (std::size_t b = a; b <= d; ++b) hess[a][b] += w * x[i][a] * x[i][b];
      }
    }
    for (std::size_t a = 0; a <= d; ++a) {
      if (a > 0) {
        grad[a] += lambda * theta[a];
        hess[a][a] += lambda;
      }
      hess[a][a] += 1e-12;
      for (std::size_t b = 0; b < a; ++b) hess[a][b] = hess[b][a];
    }
    const double gnorm = std::sqrt(std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
    if (gnorm < 1e-8) {
      m.converged = true;
      break;
    }
    const auto step = solve(hess, grad);
    double t = 1.0;
    std::vector<double> next(d + 1);
    bool moved = false;
    for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
      for (std::size_t a = 0; a <= d; ++a) next[a] = theta[a] - t * step[a];
      const double value = objective(next);
      if (value <= current) {
        moved = value < current || t == 1.0;
        theta = next;
        current = value;
        break;
      }
    }
    if (!moved) {
      // No representable decrease left: the optimum is reached to machine precision.
      m.converged = true;
      break;
    }
  }
  m.intercept = theta[0];
  m.weights.assign(theta.begin() + 1, theta.end());
  return m;
}

std::vector<double> meta_oof(const OofMatrix& oof, std::span<const std::uint8_t> labels, const FoldPlan& folds,
                             double lambda) {
  if (folds.n_rows() != oof.n_rows) throw SchemaError("fold plan does not match the OOF matrix");
  std::vector<double> out(oof.n_rows, 0.0);
  std::vector<double> row(oof.columns.size());
  for (std::size_t f = 0; f < folds.k; ++f) {
    const auto train = folds.train_rows(f);
    const auto meta = fit_meta(oof, labels, lambda, train);
    for (auto r : folds.valid_rows(f)) {
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = oof.columns[j][r];
      out[r] = meta.predict(row);
    }
  }
  return out;
}

double EnsembleBlend::blend(std::span<const double> member_probs) const {
  if (member_probs.size() != weights.size()) throw SchemaError("blend expects " + std::to_string(weights.size()) + " inputs");
  double p = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) p += weights[j] * member_probs[j];
  return std::clamp(p, 0.0, 1.0);
}

json EnsembleBlend::to_json() const {
  return {{"member_ids", member_ids},
          {"weights", weights},
          {"selections", selections},
          {"metric", to_string(metric)},
          {"oof_metric", oof_metric}};
}

EnsembleBlend EnsembleBlend::from_json(const json& j) {
  EnsembleBlend b;
  b.member_ids = j.at("member_ids").get<std::vector<std::string>>();
  b.weights = j.at("weights").get<std::vector<double>>();
  b.selections = j.at("selections").get<std::vector<std::size_t>>();
  b.metric = metric_from_string(j.at("metric").get<std::string>());
  b.oof_metric = j.at("oof_metric").get<double>();
  return b;
}

EnsembleBlend greedy_blend(const OofMatrix& candidates, std::span<const std::uint8_t> labels, MetricId metric,
                           std::size_t max_iters) {
  const std::size_t m = candidates.columns.size();
  if (m == 0) throw Error("blend needs at least one candidate");
  if (labels.size() != candidates.n_rows) throw SchemaError("label count does not match the OOF matrix");
  const std::size_t n = candidates.n_rows;

  EnsembleBlend blend;
  blend.metric = metric;
  blend.member_ids = candidates.model_ids;
  std::vector<std::size_t> counts(m, 0);

  std::size_t first = 0;
  double best = metric_score(metric, labels, candidates.columns[0]);
  for (std::size_t j = 1; j < m; ++j) {
    const double s = metric_score(metric, labels, candidates.columns[j]);
    if (s > best) {
      best = s;
      first = j;
    }
  }
  std::vector<double> sum = candidates.columns[first];
  counts[first] = 1;
  blend.selections.push_back(first);
  std::size_t total = 1;

  std::vector<double> trial(n);
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::size_t pick = m;
    double pick_score = best;
    for (std::size_t j = 0; j < m; ++j) {
      const double denom = static_cast<double>(total + 1);
      for (std::size_t r = 0; r < n; ++r) trial[r] = (sum[r] + candidates.columns[j][r]) / denom;
      const double s = metric_score(metric, labels, trial);
      if (s > pick_score) {
        pick_score = s;
        pick = j;
      }
    }
    if (pick == m) break;
    for (std::size_t r = 0; r < n; ++r) sum[r] += candidates.columns[pick][r];
    ++counts[pick];
    ++total;
    best = pick_score;
    blend.selections.push_back(pick);
  }
  for (auto c : counts) blend.weights.push_back(static_cast<double>(c) / static_cast<double>(total));

  // Score what blend() actually produces; weights times columns can round
  // differently from the running sum above.
  auto realized = [&] {
    std::vector<double> row(m), out(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < m; ++j) row[j] = candidates.columns[j][r];
      out[r] = blend.blend(row);
    }
    return metric_score(metric, labels, out);
  };
  double score = realized();
  double best_single = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) best_single = std::max(best_single, metric_score(metric, labels, candidates.columns[j]));
  if (score < best_single) {
    // one-hot weights reproduce the column exactly
    std::fill(blend.weights.begin(), blend.weights.end(), 0.0);
    blend.weights[first] = 1.0;
    blend.selections.assign(1, first);
    score = realized();
  }
  if (score < best_single) throw Error("internal: blend scores below its best candidate");
  blend.oof_metric = metric == MetricId::logloss ? -score : score;
  return blend;
}

StackedModel fit_stacked(const Dataset& train, std::span<const NamedSpec> specs, const OofMatrix& oof,
                         const FoldPlan& folds, const StackOptions& opts, std::uint64_t seed) {
  if (train.split() != SplitTag::train) throw Error("stacked models are fitted on training data only");
  std::vector<std::string> ids;
  std::vector<TrainedModel> members;
  for (std::size_t j = 0; j < specs.size(); ++j) {
    ids.push_back(specs[j].first);
    members.push_back(train_learner(train, specs[j].second, derive_seed(seed, j)));
  }
  return assemble_stacked(train, std::move(ids), std::move(members), oof, folds, opts);
}

StackedModel assemble_stacked(const Dataset& train, std::vector<std::string> ids, std::vector<TrainedModel> members,
                              const OofMatrix& oof, const FoldPlan& folds, const StackOptions& opts) {
  if (train.split() != SplitTag::train) throw Error("stacked models are fitted on training data only");
  if (ids.size() != oof.columns.size() || members.size() != ids.size()) {
    throw Error("one OOF column and one trained model per member are required");
  }
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] != oof.model_ids[j]) throw Error("OOF column order does not match member " + ids[j]);
  }
  const auto labels = train.labels();
  StackedModel m;
  m.meta = fit_meta(oof, labels, opts.meta_lambda);
  OofMatrix candidates = oof;
  candidates.add(StackedModel::kMetaId, meta_oof(oof, labels, folds, opts.meta_lambda));
  m.blend = greedy_blend(candidates, labels, opts.blend_metric, opts.max_iters);
  m.member_ids = std::move(ids);
  m.members = std::move(members);
  m.provenance = {{"meta_fit", "out-of-fold predictions on training rows"},
                  {"blend_fit", "out-of-fold predictions on training rows"},
                  {"oof_rows", oof.n_rows},
                  {"folds", folds.k},
                  {"fold_seed", folds.seed},
                  {"refit_rows", train.n_rows()},
                  {"split", "train"}};
  return m;
}

StackedPrediction predict_stacked(const StackedModel& model, const Dataset& ds) {
  StackedPrediction out;
  for (const auto& member : model.members) out.member_probs.push_back(member.predict_proba(ds));
  const std::size_t n = ds.n_rows();
  const std::size_t k = model.members.size();
  std::vector<double> meta(n), row(k);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < k; ++j) row[j] = out.member_probs[j][r];
    meta[r] = model.meta.predict(row);
  }
  out.member_probs.push_back(std::move(meta));

  // Blend columns are looked up by id so the blend may use any subset.
  std::vector<const std::vector<double>*> cols;
  for (const auto& id : model.blend.member_ids) {
    if (id == StackedModel::kMetaId) {
      cols.push_back(&out.member_probs.back());
      continue;
    }
    auto it = std::find(model.member_ids.begin(), model.member_ids.end(), id);
    if (it == model.member_ids.end()) throw SchemaError("blend references unknown member " + id);
    cols.push_back(&out.member_probs[static_cast<std::size_t>(it - model.member_ids.begin())]);
  }
  out.prob_attack.resize(n);
  std::vector<double> probs(cols.size());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) probs[j] = (*cols[j])[r];
    out.prob_attack[r] = model.blend.blend(probs);
  }
  out.label = threshold_predictions(out.prob_attack);
  return out;
}

std::filesystem::path save_stacked(const StackedModel& model, const std::filesystem::path& dir) {
  json members = json::array();
  for (std::size_t j = 0; j < model.members.size(); ++j) {
    const std::string file = "member_" + model.member_ids[j] + ".json";
    const std::string body = model.members[j].to_json().dump() + "\n";
    write_file(dir / file, body);
    members.push_back({{"id", model.member_ids[j]}, {"file", file}, {"sha256", sha256_hex(body)}});
  }
  json doc = {{"format", "nidens-stacked"},
              {"version", 1},
              {"members", std::move(members)},
              {"meta", model.meta.to_json()},
              {"blend", model.blend.to_json()},
              {"provenance", model.provenance}};
  const auto path = dir / "stacked.json";
  write_file(path, doc.dump(2) + "\n");
  return path;
}

StackedModel load_stacked(const std::filesystem::path& stacked_json) {
  const json doc = json::parse(read_file(stacked_json));
  if (doc.value("format", "") != "nidens-stacked") throw ParseError("not a stacked model file");
  StackedModel m;
  for (const auto& entry : doc.at("members")) {
    const auto id = entry.at("id").get<std::string>();
    const auto body = read_file(stacked_json.parent_path() / entry.at("file").get<std::string>());
    if (sha256_hex(body) != entry.at("sha256").get<std::string>()) {
      throw Error("member " + id + " does not match its recorded SHA-256");
    }
    m.member_ids.push_back(id);
    m.members.push_back(TrainedModel::from_json(json::parse(body)));
  }
  m.meta = MetaLearner::from_json(doc.at("meta"));
  m.blend = EnsembleBlend::from_json(doc.at("blend"));
  m.provenance = doc.value("provenance", json::object());
  return m;
}

}  // namespace nidens
