#include "nidens/learner.hpp"

#include <nlohmann/json.hpp>

#include "nidens/error.hpp"

namespace nidens {

using nlohmann::json;

std::string_view to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::forest: return "forest";
    case LearnerKind::xgb: return "xgb";
    case LearnerKind::cat: return "cat";
    case LearnerKind::lgbm: return "lgbm";
  }
  return "?";
}

std::string_view display_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::forest: return "Random Forest";
    case LearnerKind::xgb: return "XGBoost";
    case LearnerKind::cat: return "CatBoost";
    case LearnerKind::lgbm: return "LGBM";
  }
  return "?";
}

LearnerKind learner_kind_from_string(std::string_view s) {
  for (auto k : kAllLearners) {
    if (to_string(k) == s) return k;
  }
  throw Error("unknown learner: " + std::string(s));
}

namespace {

BoostProfile profile_of(LearnerKind k) {
  switch (k) {
    case LearnerKind::xgb: return BoostProfile::xgb;
    case LearnerKind::cat: return BoostProfile::cat;
    default: return BoostProfile::lgbm;
  }
}

}  // namespace

LearnerSpec LearnerSpec::defaults(LearnerKind kind) {
  LearnerSpec s;
  s.kind = kind;
  if (kind != LearnerKind::forest) s.boost = BoostParams::defaults(profile_of(kind));
  if (kind == LearnerKind::cat) s.encoding = CategoricalEncoding::ordered_target;
  return s;
}

void LearnerSpec::set(std::string_view name, double value) {
  if (name == "max_bins") {
    max_bins = static_cast<std::size_t>(value);
    return;
  }
  if (kind != LearnerKind::forest) {
    set_boost_param(boost, name, value);
    return;
  }
  if (name == "n_trees" || name == "n_estimators") {
    forest.n_trees = static_cast<std::size_t>(value);
  } else if (name == "max_depth") {
    forest.max_depth = static_cast<int>(value);
  } else if (name == "max_features") {
    forest.max_features = value;
  } else if (name == "min_samples_split") {
    forest.min_samples_split = static_cast<std::size_t>(value);
  } else {
    throw Error("unknown forest hyperparameter: " + std::string(name));
  }
}

void LearnerSpec::validate() const {
  if (kind == LearnerKind::forest) {
    forest.validate();
  } else {
    boost.validate();
    if (boost.profile != profile_of(kind)) throw Error("booster profile does not match learner " + std::string(to_string(kind)));
  }
  if (max_bins < 2 || max_bins > 255) throw Error("max_bins must be in [2, 255]");
}

json LearnerSpec::to_json() const {
  json j = {{"kind", to_string(kind)}, {"encoding", to_string(encoding)}, {"max_bins", max_bins}};
  if (kind == LearnerKind::forest) j["forest"] = forest.to_json();
  else j["boost"] = boost.to_json();
  return j;
}

LearnerSpec LearnerSpec::from_json(const json& j) {
  LearnerSpec s = defaults(learner_kind_from_string(j.at("kind").get<std::string>()));
  s.encoding = categorical_encoding_from_string(j.at("encoding").get<std::string>());
  s.max_bins = j.at("max_bins").get<std::size_t>();
  if (s.kind == LearnerKind::forest) s.forest = ForestParams::from_json(j.at("forest"));
  else s.boost = BoostParams::from_json(j.at("boost"));
  return s;
}

BinnedView Preprocessor::transform(const Dataset& ds) const { return mapper.apply(encoder.transform(ds)); }

json Preprocessor::to_json() const { return {{"encoder", encoder.to_json()}, {"bins", mapper.to_json()}}; }

Preprocessor Preprocessor::from_json(const json& j) {
  return {Encoder::from_json(j.at("encoder")), BinMapper::from_json(j.at("bins"))};
}

FittedPreprocessor fit_preprocessor(const Dataset& train, const LearnerSpec& spec, std::uint64_t seed) {
  auto encoded = build_encoding(train, EncodingPlan::uniform(train.schema(), spec.encoding), derive_seed(seed, "encoding"));
  FittedPreprocessor out;
  out.train_view = build_bins(encoded.frame, spec.max_bins, &out.prep.mapper);
  out.prep.encoder = std::move(encoded.encoder);
  return out;
}

std::vector<double> TrainedModel::predict_proba(const Dataset& ds) const { return predict_proba(prep.transform(ds)); }

std::vector<double> TrainedModel::predict_proba(const BinnedView& view) const {
  if (const auto* f = std::get_if<ForestModel>(&model)) return predict_forest_proba(*f, view);
  auto raw = predict_boosted_raw(std::get<BoostedModel>(model), view);
  for (auto& r : raw) r = sigmoid(r);
  return raw;
}

json TrainedModel::to_json() const {
  json m = std::visit([](const auto& x) { return x.to_json(); }, model);
  return {{"format", "nidens-model"},
          {"version", 1},
          {"learner", spec.to_json()},
          {"seed", seed},
          {"preprocessor", prep.to_json()},
          {"model", std::move(m)}};
}

TrainedModel TrainedModel::from_json(const json& j) {
  if (j.value("format", "") != "nidens-model") throw ParseError("not a model file");
  TrainedModel t;
  t.spec = LearnerSpec::from_json(j.at("learner"));
  t.seed = j.at("seed").get<std::uint64_t>();
  t.prep = Preprocessor::from_json(j.at("preprocessor"));
  const auto& m = j.at("model");
  if (m.at("model_type").get<std::string>() == "forest") t.model = ForestModel::from_json(m);
  else t.model = BoostedModel::from_json(m);
  return t;
}

TrainedModel train_learner(const Dataset& train, const LearnerSpec& spec, std::uint64_t seed) {
  spec.validate();
  auto fitted = fit_preprocessor(train, spec, seed);
  TrainedModel out;
  out.spec = spec;
  out.seed = seed;
  const std::uint64_t model_seed = derive_seed(seed, "model");
  if (spec.kind == LearnerKind::forest) {
    out.model = train_forest(fitted.train_view, train.labels(), spec.forest, model_seed);
  } else {
    out.model = train_boosted(fitted.train_view, train.labels(), spec.boost, model_seed);
  }
  out.prep = std::move(fitted.prep);
  return out;
}

}  // namespace nidens
