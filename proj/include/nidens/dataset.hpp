#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nidens {

enum class FeatureKind : std::uint8_t { numeric, categorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::numeric;
};

struct DatasetSchema {
  std::vector<FeatureSpec> features;
  std::string label_column = "attack";
  std::optional<std::string> difficulty_column = "difficulty";

  /// The 41-feature NSL-KDD layout; protocol_type, service and flag are categorical.
  static DatasetSchema nslkdd();

  /// Throws SchemaError unless the schema has the NSL-KDD shape.
  void validate() const;
  std::size_t num_categorical() const;
  /// Stable digest of names, kinds and label/difficulty columns.
  std::string hash() const;
};

enum class AttackClass : std::uint8_t { normal = 0, dos = 1, probe = 2, u2r = 3, r2l = 4 };
inline constexpr std::size_t kNumAttackClasses = 5;
inline constexpr std::array<AttackClass, kNumAttackClasses> kAllAttackClasses{
    AttackClass::normal, AttackClass::dos, AttackClass::probe, AttackClass::u2r, AttackClass::r2l};

/// Display names as in the published class table: normal, DoS, Probe, U2R, R2L.
std::string_view to_string(AttackClass c);
AttackClass attack_class_from_string(std::string_view name);
constexpr std::uint8_t binary_label(AttackClass c) noexcept { return c == AttackClass::normal ? 0 : 1; }

/// Fine-grained attack name (neptune, smurf, ...) to family.
struct AttackMap {
  std::string version;
  std::map<std::string, AttackClass, std::less<>> classes;

  /// Compiled-in copy of data/attack_classes_v1.csv.
  static const AttackMap& builtin();
  static AttackMap load(const std::filesystem::path& csv);
  AttackClass lookup(std::string_view attack_name) const;
};

/// Code 0 of every categorical vocabulary; unseen test categories map here.
inline constexpr std::int32_t kUnknownCode = 0;
inline constexpr std::string_view kUnknownCategory = "<unknown>";

struct Column {
  // Exactly one of values/codes is populated, per the feature kind.
  std::vector<double> values;
  std::vector<std::int32_t> codes;
  std::vector<std::string> vocabulary;
};

/// Per-feature vocabularies (empty for numeric features), shared train -> test.
using Vocabulary = std::vector<std::vector<std::string>>;

enum class SplitTag : std::uint8_t { train, test };
std::string_view to_string(SplitTag t);

class Dataset {
 public:
  Dataset() = default;
  /// Validates every invariant; throws SchemaError on violation.
  Dataset(DatasetSchema schema, std::vector<Column> columns, std::vector<AttackClass> raw_classes,
          std::vector<std::uint8_t> labels, std::vector<std::int32_t> difficulty, SplitTag split);

  const DatasetSchema& schema() const noexcept { return schema_; }
  std::size_t n_rows() const noexcept { return raw_classes_.size(); }
  std::size_t n_features() const noexcept { return columns_.size(); }
  const Column& column(std::size_t f) const { return columns_.at(f); }
  const std::vector<Column>& columns() const noexcept { return columns_; }
  std::span<const std::uint8_t> labels() const noexcept { return labels_; }
  std::span<const AttackClass> raw_classes() const noexcept { return raw_classes_; }
  std::span<const std::int32_t> difficulty() const noexcept { return difficulty_; }
  SplitTag split() const noexcept { return split_; }

  Vocabulary vocabulary() const;
  /// Decodes a categorical cell back to its string.
  const std::string& category(std::size_t feature, std::size_t row) const;

  /// Rows in the given order (duplicates allowed).
  Dataset subset(std::span<const std::size_t> rows) const;

  bool operator==(const Dataset&) const = default;

 private:
  DatasetSchema schema_;
  std::vector<Column> columns_;
  std::vector<AttackClass> raw_classes_;
  std::vector<std::uint8_t> labels_;
  std::vector<std::int32_t> difficulty_;
  SplitTag split_ = SplitTag::train;
};

inline bool operator==(const FeatureSpec& a, const FeatureSpec& b) {
  return a.name == b.name && a.kind == b.kind;
}
inline bool operator==(const DatasetSchema& a, const DatasetSchema& b) {
  return a.features == b.features && a.label_column == b.label_column &&
         a.difficulty_column == b.difficulty_column;
}
inline bool operator==(const Column& a, const Column& b) {
  return a.values == b.values && a.codes == b.codes && a.vocabulary == b.vocabulary;
}

struct ParseOptions {
  SplitTag split = SplitTag::train;
  /// When set (test files), categories are coded against it and unseen ones
  /// become kUnknownCode. Otherwise vocabularies are built in first-seen order.
  const Vocabulary* vocabulary = nullptr;
  const AttackMap* attack_map = nullptr;  // builtin() when null
};

/// Parses NSL-KDD text: 41 features, attack name, optional difficulty.
Dataset parse_nslkdd(const std::filesystem::path& path, const DatasetSchema& schema,
                     const ParseOptions& opts = {});
Dataset parse_nslkdd_text(std::string_view text, const DatasetSchema& schema,
                          const ParseOptions& opts = {});

/// Counts of the classes present in the dataset.
std::map<AttackClass, std::size_t> class_counts(const Dataset& ds);

/// Normal -> 0, any attack family -> 1. Raw classes are kept.
Dataset binarize(const Dataset& ds);

/// Published per-class counts of NSL-KDDTrain+ / NSL-KDDTest+.
struct ReferenceCounts {
  std::array<std::size_t, kNumAttackClasses> train;
  std::array<std::size_t, kNumAttackClasses> test;
  std::size_t train_total;
  std::size_t test_total_printed;  // the table's printed total, one short of its row sum
};
const ReferenceCounts& nslkdd_reference_counts();

struct CountCheck {
  bool match = true;
  std::array<std::size_t, kNumAttackClasses> observed{};
  std::array<std::size_t, kNumAttackClasses> expected{};
  std::size_t observed_total = 0;
  std::vector<std::string> notes;
};
CountCheck check_reference_counts(const Dataset& ds);

/// Columnar cache: magic, JSON header (schema, schema hash, vocabularies,
/// source hash), then little-endian column blobs.
void write_cache(const Dataset& ds, const std::filesystem::path& path, std::string_view source_sha256 = {});
Dataset read_cache(const std::filesystem::path& path);

}  // namespace nidens
