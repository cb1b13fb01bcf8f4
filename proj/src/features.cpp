#include "nidens/features.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nidens/error.hpp"
#include "nidens/parallel.hpp"
#include "nidens/rng.hpp"

namespace nidens {

using nlohmann::json;

std::string_view to_string(CategoricalEncoding e) {
  switch (e) {
    case CategoricalEncoding::passthrough: return "passthrough";
    case CategoricalEncoding::one_hot: return "one_hot";
    case CategoricalEncoding::ordered_target: return "ordered_target";
  }
  return "?";
}

CategoricalEncoding categorical_encoding_from_string(std::string_view s) {
  if (s == "passthrough") return CategoricalEncoding::passthrough;
  if (s == "one_hot") return CategoricalEncoding::one_hot;
  if (s == "ordered_target") return CategoricalEncoding::ordered_target;
  throw Error("unknown categorical encoding '" + std::string(s) + "'");
}

EncodingPlan EncodingPlan::uniform(const DatasetSchema& schema, CategoricalEncoding e) {
  EncodingPlan plan;
  for (const auto& f : schema.features) {
    if (f.kind == FeatureKind::categorical) plan.strategy[f.name] = e;
  }
  return plan;
}

json EncodingPlan::to_json() const {
  json j;
  json strat = json::object();
  for (const auto& [name, e] : strategy) strat[name] = to_string(e);
  j["strategy"] = std::move(strat);
  j["one_hot_cap"] = one_hot_cap;
  j["prior_weight"] = prior_weight;
  j["prior"] = prior ? json(*prior) : json(nullptr);
  j["shuffle"] = shuffle;
  return j;
}

EncodingPlan EncodingPlan::from_json(const json& j) {
  EncodingPlan plan;
  for (const auto& [name, e] : j.at("strategy").items()) {
    plan.strategy[name] = categorical_encoding_from_string(e.get<std::string>());
  }
  plan.one_hot_cap = j.at("one_hot_cap").get<std::size_t>();
  plan.prior_weight = j.at("prior_weight").get<double>();
  if (!j.at("prior").is_null()) plan.prior = j.at("prior").get<double>();
  plan.shuffle = j.at("shuffle").get<bool>();
  return plan;
}

namespace {

void check_plan(const DatasetSchema& schema, const EncodingPlan& plan) {
  for (const auto& f : schema.features) {
    if (f.kind == FeatureKind::categorical && !plan.strategy.contains(f.name)) {
      throw Error("encoding plan has no strategy for categorical feature '" + f.name + "'");
    }
  }
  for (const auto& [name, e] : plan.strategy) {
    auto it = std::find_if(schema.features.begin(), schema.features.end(),
                           [&](const auto& f) { return f.name == name; });
    if (it == schema.features.end() || it->kind != FeatureKind::categorical) {
      throw Error("encoding plan names '" + name + "', which is not a categorical feature");
    }
  }
}

double ts_value(double positives, double total, double prior, double weight) {
  return (positives + prior * weight) / (total + weight);
}

}  // namespace

EncodedDataset build_encoding(const Dataset& ds, const EncodingPlan& plan, std::uint64_t rng_seed) {
  const auto& schema = ds.schema();
  check_plan(schema, plan);
  const std::size_t n = ds.n_rows();
  const auto labels = ds.labels();

  EncodedDataset out;
  Encoder& enc = out.encoder;
  enc.plan_ = plan;
  enc.schema_ = schema;
  if (plan.prior) {
    enc.prior_ = *plan.prior;
  } else {
    const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
    enc.prior_ = n == 0 ? 0.5 : pos / static_cast<double>(n);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (plan.shuffle) {
    Rng rng(derive_seed(rng_seed, "ordered-target-permutation"));
    rng.shuffle(order);
  }

  FeatureFrame& frame = out.frame;
  frame.n_rows = n;
  for (std::size_t f = 0; f < schema.features.size(); ++f) {
    const auto& spec = schema.features[f];
    const auto& col = ds.column(f);
    if (spec.kind == FeatureKind::numeric) {
      frame.names.push_back(spec.name);
      frame.columns.push_back(col.values);
      continue;
    }

    Encoder::Feature ef;
    ef.source = f;
    ef.encoding = plan.strategy.at(spec.name);
    ef.vocabulary = col.vocabulary;

    switch (ef.encoding) {
      case CategoricalEncoding::passthrough: {
        std::vector<double> v(n);
        for (std::size_t r = 0; r < n; ++r) {
          v[r] = col.codes[r] == kUnknownCode ? std::numeric_limits<double>::quiet_NaN()
                                              : static_cast<double>(col.codes[r]);
        }
        frame.names.push_back(spec.name);
        frame.columns.push_back(std::move(v));
        break;
      }
      case CategoricalEncoding::one_hot: {
        const std::size_t levels = col.vocabulary.size() - 1;
        if (levels > plan.one_hot_cap) {
          throw Error("one-hot encoding of '" + spec.name + "' needs " + std::to_string(levels) +
                      " columns, above the cap of " + std::to_string(plan.one_hot_cap));
        }
        for (std::size_t level = 1; level <= levels; ++level) {
          std::vector<double> v(n);
          for (std::size_t r = 0; r < n; ++r) v[r] = static_cast<std::size_t>(col.codes[r]) == level ? 1.0 : 0.0;
          frame.names.push_back(spec.name + "=" + col.vocabulary[level]);
          frame.columns.push_back(std::move(v));
        }
        break;
      }
      case CategoricalEncoding::ordered_target: {
        const std::size_t v_size = col.vocabulary.size();
        ef.positives.assign(v_size, 0.0);
        ef.totals.assign(v_size, 0.0);
        std::vector<double> v(n);
        for (auto r : order) {
          const auto c = static_cast<std::size_t>(col.codes[r]);
          v[r] = ts_value(ef.positives[c], ef.totals[c], enc.prior_, plan.prior_weight);
          ef.positives[c] += labels[r];
          ef.totals[c] += 1.0;
        }
        frame.names.push_back(spec.name);
        frame.columns.push_back(std::move(v));
        break;
      }
    }
    enc.features_.push_back(std::move(ef));
  }
  return out;
}

FeatureFrame Encoder::transform(const Dataset& ds) const {
  if (ds.schema().hash() != schema_.hash()) throw SchemaError("dataset schema differs from the encoder's schema");
  FeatureFrame frame;
  const std::size_t n = ds.n_rows();
  frame.n_rows = n;
  auto ef = features_.begin();
  for (std::size_t f = 0; f < schema_.features.size(); ++f) {
    const auto& spec = schema_.features[f];
    const auto& col = ds.column(f);
    if (spec.kind == FeatureKind::numeric) {
      frame.names.push_back(spec.name);
      frame.columns.push_back(col.values);
      continue;
    }
    if (col.vocabulary != ef->vocabulary) {
      throw SchemaError("vocabulary of categorical feature '" + spec.name + "' differs from the training vocabulary");
    }
    switch (ef->encoding) {
      case CategoricalEncoding::passthrough: {
        std::vector<double> v(n);
        for (std::size_t r = 0; r < n; ++r) {
          v[r] = col.codes[r] == kUnknownCode ? std::numeric_limits<double>::quiet_NaN()
                                              : static_cast<double>(col.codes[r]);
        }
        frame.names.push_back(spec.name);
        frame.columns.push_back(std::move(v));
        break;
      }
      case CategoricalEncoding::one_hot: {
        for (std::size_t level = 1; level < ef->vocabulary.size(); ++level) {
          std::vector<double> v(n);
          for (std::size_t r = 0; r < n; ++r) v[r] = static_cast<std::size_t>(col.codes[r]) == level ? 1.0 : 0.0;
          frame.names.push_back(spec.name + "=" + ef->vocabulary[level]);
          frame.columns.push_back(std::move(v));
        }
        break;
      }
      case CategoricalEncoding::ordered_target: {
        std::vector<double> v(n);
        for (std::size_t r = 0; r < n; ++r) {
          const auto c = static_cast<std::size_t>(col.codes[r]);
          v[r] = ts_value(ef->positives[c], ef->totals[c], prior_, plan_.prior_weight);
        }
        frame.names.push_back(spec.name);
        frame.columns.push_back(std::move(v));
        break;
      }
    }
    ++ef;
  }
  return frame;
}

json Encoder::to_json() const {
  json j;
  j["plan"] = plan_.to_json();
  j["schema_hash"] = schema_.hash();
  j["prior"] = prior_;
  json schema = json::array();
  for (const auto& f : schema_.features) {
    schema.push_back({{"name", f.name}, {"kind", f.kind == FeatureKind::categorical ? "categorical" : "numeric"}});
  }
  j["schema"] = std::move(schema);
  j["label_column"] = schema_.label_column;
  j["difficulty_column"] = schema_.difficulty_column.value_or("");
  json feats = json::array();
  for (const auto& f : features_) {
    feats.push_back({{"source", f.source},
                     {"encoding", to_string(f.encoding)},
                     {"vocabulary", f.vocabulary},
                     {"positives", f.positives},
                     {"totals", f.totals}});
  }
  j["features"] = std::move(feats);
  return j;
}

Encoder Encoder::from_json(const json& j) {
  Encoder e;
  e.plan_ = EncodingPlan::from_json(j.at("plan"));
  e.prior_ = j.at("prior").get<double>();
  e.schema_.features.clear();
  for (const auto& f : j.at("schema")) {
    e.schema_.features.push_back({f.at("name").get<std::string>(), f.at("kind").get<std::string>() == "categorical"
                                                                         ? FeatureKind::categorical
                                                                         : FeatureKind::numeric});
  }
  e.schema_.label_column = j.at("label_column").get<std::string>();
  const auto diff = j.at("difficulty_column").get<std::string>();
  e.schema_.difficulty_column = diff.empty() ? std::nullopt : std::optional<std::string>(diff);
  if (e.schema_.hash() != j.at("schema_hash").get<std::string>()) throw SchemaError("encoder schema hash mismatch");
  for (const auto& f : j.at("features")) {
    Feature ef;
    ef.source = f.at("source").get<std::size_t>();
    ef.encoding = categorical_encoding_from_string(f.at("encoding").get<std::string>());
    ef.vocabulary = f.at("vocabulary").get<std::vector<std::string>>();
    ef.positives = f.at("positives").get<std::vector<double>>();
    ef.totals = f.at("totals").get<std::vector<double>>();
    e.features_.push_back(std::move(ef));
  }
  return e;
}

namespace {

std::vector<double> quantile_edges(std::vector<double> values, std::size_t max_bins) {
  std::erase_if(values, [](double v) { return std::isnan(v); });
  std::vector<double> edges;
  if (values.empty()) return edges;
  std::sort(values.begin(), values.end());

  auto midpoint = [](double lo, double hi) {
    const double m = lo + (hi - lo) / 2.0;
    return m >= hi ? lo : m;
  };

  std::vector<double> distinct;
  std::unique_copy(values.begin(), values.end(), std::back_inserter(distinct));
  if (distinct.size() <= max_bins) {
    for (std::size_t i = 1; i < distinct.size(); ++i) edges.push_back(midpoint(distinct[i - 1], distinct[i]));
    return edges;
  }

  const std::size_t n = values.size();
  for (std::size_t j = 1; j < max_bins; ++j) {
    const std::size_t pos = j * n / max_bins;
    if (pos == 0 || pos >= n) continue;
    const double lo = values[pos - 1];
    const double hi = values[pos];
    const double edge = lo == hi ? lo : midpoint(lo, hi);
    if (edge >= values.back()) continue;
    if (edges.empty() || edge > edges.back()) edges.push_back(edge);
  }
  return edges;
}

}  // namespace

BinMapper BinMapper::fit(const FeatureFrame& frame, std::size_t max_bins) {
  if (max_bins < 2) throw Error("max_bins must be at least 2");
  if (max_bins > kMissingBin) throw Error("max_bins must be at most 255");
  BinMapper m;
  m.max_bins_ = max_bins;
  m.names_ = frame.names;
  m.edges_.resize(frame.n_features());
  parallel_for(frame.n_features(), [&](std::size_t f) { m.edges_[f] = quantile_edges(frame.columns[f], max_bins); });
  return m;
}

std::uint8_t BinMapper::bin(std::size_t feature, double value) const {
  if (std::isnan(value)) return kMissingBin;
  const auto& e = edges_[feature];
  return static_cast<std::uint8_t>(std::lower_bound(e.begin(), e.end(), value) - e.begin());
}

BinnedView BinMapper::apply(const FeatureFrame& frame) const {
  if (frame.names != names_) throw SchemaError("feature layout differs from the binning layout");
  BinnedView view;
  view.n_rows = frame.n_rows;
  view.max_bins = max_bins_;
  view.bins.resize(frame.n_features());
  view.n_bins.resize(frame.n_features());
  parallel_for(frame.n_features(), [&](std::size_t f) {
    auto& out = view.bins[f];
    out.resize(frame.n_rows);
    for (std::size_t r = 0; r < frame.n_rows; ++r) out[r] = bin(f, frame.columns[f][r]);
    view.n_bins[f] = static_cast<std::uint16_t>(edges_[f].size() + 1);
  });
  return view;
}

json BinMapper::to_json() const {
  return {{"max_bins", max_bins_}, {"names", names_}, {"edges", edges_}};
}

BinMapper BinMapper::from_json(const json& j) {
  BinMapper m;
  m.max_bins_ = j.at("max_bins").get<std::size_t>();
  m.names_ = j.at("names").get<std::vector<std::string>>();
  m.edges_ = j.at("edges").get<std::vector<std::vector<double>>>();
  return m;
}

BinnedView build_bins(const FeatureFrame& frame, std::size_t max_bins, BinMapper* mapper_out) {
  auto mapper = BinMapper::fit(frame, max_bins);
  auto view = mapper.apply(frame);
  if (mapper_out) *mapper_out = std::move(mapper);
  return view;
}

}  // namespace nidens
