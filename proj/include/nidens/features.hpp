#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "nidens/dataset.hpp"

namespace nidens {

enum class CategoricalEncoding : std::uint8_t { passthrough, one_hot, ordered_target };
std::string_view to_string(CategoricalEncoding e);
CategoricalEncoding categorical_encoding_from_string(std::string_view s);

struct EncodingPlan {
  /// Keyed by categorical feature name; must cover every categorical feature.
  std::map<std::string, CategoricalEncoding> strategy;
  std::size_t one_hot_cap = 32;
  double prior_weight = 1.0;
  /// Ordered-target prior; the training positive rate when unset.
  std::optional<double> prior;
  /// Ordered statistics walk a seeded random permutation, or file order when false.
  bool shuffle = true;

  static EncodingPlan uniform(const DatasetSchema& schema, CategoricalEncoding e);
  nlohmann::json to_json() const;
  static EncodingPlan from_json(const nlohmann::json& j);
  bool operator==(const EncodingPlan&) const = default;
};

/// Fully numeric feature matrix, column-major. NaN marks a missing cell
/// (an unknown category under passthrough encoding).
struct FeatureFrame {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
  std::size_t n_rows = 0;

  std::size_t n_features() const noexcept { return columns.size(); }
};

struct EncodedDataset;

/// Fitted categorical encoder; reproduces training-time encoding on new data.
class Encoder {
 public:
  struct Feature {
    std::size_t source = 0;  // index into the dataset schema
    CategoricalEncoding encoding = CategoricalEncoding::passthrough;
    std::vector<std::string> vocabulary;
    // ordered_target: per-code positive and total counts over the training rows
    std::vector<double> positives;
    std::vector<double> totals;
  };

  const EncodingPlan& plan() const noexcept { return plan_; }
  double prior() const noexcept { return prior_; }
  const std::vector<Feature>& features() const noexcept { return features_; }

  /// Encodes rows of a dataset that shares the training vocabulary. Ordered
  /// target features use the full training statistics here.
  FeatureFrame transform(const Dataset& ds) const;

  nlohmann::json to_json() const;
  static Encoder from_json(const nlohmann::json& j);

 private:
  friend EncodedDataset build_encoding(const Dataset&, const EncodingPlan&, std::uint64_t);

  EncodingPlan plan_;
  DatasetSchema schema_;
  double prior_ = 0.5;
  std::vector<Feature> features_;
};

struct EncodedDataset {
  FeatureFrame frame;
  Encoder encoder;
};

/// Encodes the training rows. Ordered-target columns get leakage-free running
/// statistics: (preceding positives + prior * weight) / (preceding count + weight)
/// over a permutation derived from rng_seed.
EncodedDataset build_encoding(const Dataset& ds, const EncodingPlan& plan, std::uint64_t rng_seed);

inline constexpr std::uint8_t kMissingBin = 255;

struct BinnedView {
  std::size_t n_rows = 0;
  std::size_t max_bins = 0;
  std::vector<std::vector<std::uint8_t>> bins;  // [feature][row]
  std::vector<std::uint16_t> n_bins;            // per feature

  std::size_t n_features() const noexcept { return bins.size(); }
  std::uint8_t at(std::size_t feature, std::size_t row) const { return bins[feature][row]; }
};

/// Quantile bin edges learned on training data. A value x falls in bin
/// `count of edges < x`, so x <= edges[t] exactly when bin(x) <= t.
class BinMapper {
 public:
  static BinMapper fit(const FeatureFrame& frame, std::size_t max_bins = 255);

  BinnedView apply(const FeatureFrame& frame) const;
  std::uint8_t bin(std::size_t feature, double value) const;

  std::size_t max_bins() const noexcept { return max_bins_; }
  const std::vector<std::vector<double>>& edges() const noexcept { return edges_; }
  const std::vector<std::string>& names() const noexcept { return names_; }

  nlohmann::json to_json() const;
  static BinMapper from_json(const nlohmann::json& j);

 private:
  std::size_t max_bins_ = 255;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> edges_;
};

/// Convenience: fit on a frame and bin it.
BinnedView build_bins(const FeatureFrame& frame, std::size_t max_bins, BinMapper* mapper_out = nullptr);

}  // namespace nidens
