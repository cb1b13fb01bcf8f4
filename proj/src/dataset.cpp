#include "nidens/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "nidens/error.hpp"
#include "nidens/hash.hpp"

namespace nidens {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 41> kNslKddFeatures{
    "duration",
    "protocol_type",
    "service",
    "flag",
    "src_bytes",
    "dst_bytes",
    "land",
    "wrong_fragment",
    "urgent",
    "hot",
    "num_failed_logins",
    "logged_in",
    "num_compromised",
    "root_shell",
    "su_attempted",
    "num_root",
    "num_file_creations",
    "num_shells",
    "num_access_files",
    "num_outbound_cmds",
    "is_host_login",
    "is_guest_login",
    "count",
    "srv_count",
    "serror_rate",
    "srv_serror_rate",
    "rerror_rate",
    "srv_rerror_rate",
    "same_srv_rate",
    "diff_srv_rate",
    "srv_diff_host_rate",
    "dst_host_count",
    "dst_host_srv_count",
    "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate",
    "dst_host_srv_serror_rate",
    "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
};

constexpr std::array<std::string_view, 3> kCategorical{"protocol_type", "service", "flag"};

// Keep in sync with data/attack_classes_v1.csv (a unit test compares them).
constexpr std::pair<std::string_view, AttackClass> kBuiltinAttackMap[] = {
    {"normal", AttackClass::normal},      {"back", AttackClass::dos},
    {"land", AttackClass::dos},           {"neptune", AttackClass::dos},
    {"pod", AttackClass::dos},            {"smurf", AttackClass::dos},
    {"teardrop", AttackClass::dos},       {"apache2", AttackClass::dos},
    {"mailbomb", AttackClass::dos},       {"processtable", AttackClass::dos},
    {"udpstorm", AttackClass::dos},       {"ipsweep", AttackClass::probe},
    {"mscan", AttackClass::probe},        {"nmap", AttackClass::probe},
    {"portsweep", AttackClass::probe},    {"saint", AttackClass::probe},
    {"satan", AttackClass::probe},        {"buffer_overflow", AttackClass::u2r},
    {"httptunnel", AttackClass::u2r},     {"loadmodule", AttackClass::u2r},
    {"perl", AttackClass::u2r},           {"ps", AttackClass::u2r},
    {"rootkit", AttackClass::u2r},        {"sqlattack", AttackClass::u2r},
    {"xterm", AttackClass::u2r},          {"ftp_write", AttackClass::r2l},
    {"guess_passwd", AttackClass::r2l},   {"imap", AttackClass::r2l},
    {"multihop", AttackClass::r2l},       {"named", AttackClass::r2l},
    {"phf", AttackClass::r2l},            {"sendmail", AttackClass::r2l},
    {"snmpgetattack", AttackClass::r2l},  {"snmpguess", AttackClass::r2l},
    {"spy", AttackClass::r2l},            {"warezclient", AttackClass::r2l},
    {"warezmaster", AttackClass::r2l},    {"worm", AttackClass::r2l},
    {"xlock", AttackClass::r2l},          {"xsnoop", AttackClass::r2l},
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

constexpr char kCacheMagic[8] = {'N', 'I', 'D', 'S', 'D', 'S', '0', '1'};
constexpr int kCacheVersion = 1;

template <typename T>
void append_blob(std::string& out, const std::vector<T>& v) {
  const auto n = static_cast<std::uint64_t>(v.size());
  out.append(reinterpret_cast<const char*>(&n), sizeof n);
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
}

template <typename T>
std::vector<T> take_blob(std::string_view& in) {
  std::uint64_t n = 0;
  if (in.size() < sizeof n) throw ParseError("truncated cache");
  std::memcpy(&n, in.data(), sizeof n);
  in.remove_prefix(sizeof n);
  if (in.size() < n * sizeof(T)) throw ParseError("truncated cache");
  std::vector<T> v(n);
  std::memcpy(v.data(), in.data(), n * sizeof(T));
  in.remove_prefix(n * sizeof(T));
  return v;
}

}  // namespace

DatasetSchema DatasetSchema::nslkdd() {
  DatasetSchema schema;
  for (auto name : kNslKddFeatures) {
    const bool cat = std::find(kCategorical.begin(), kCategorical.end(), name) != kCategorical.end();
    schema.features.push_back({std::string(name), cat ? FeatureKind::categorical : FeatureKind::numeric});
  }
  return schema;
}

void DatasetSchema::validate() const {
  if (features.size() != 41) {
    throw SchemaError("schema must have 41 features, has " + std::to_string(features.size()));
  }
  for (const auto& f : features) {
    const bool should_be_cat =
        std::find(kCategorical.begin(), kCategorical.end(), f.name) != kCategorical.end();
    if (should_be_cat != (f.kind == FeatureKind::categorical)) {
      throw SchemaError("feature '" + f.name + "' has the wrong kind");
    }
  }
}

std::size_t DatasetSchema::num_categorical() const {
  return static_cast<std::size_t>(std::count_if(features.begin(), features.end(), [](const auto& f) {
    return f.kind == FeatureKind::categorical;
  }));
}

std::string DatasetSchema::hash() const {
  std::string text;
  for (const auto& f : features) {
    text += f.name;
    text += f.kind == FeatureKind::categorical ? ":c;" : ":n;";
  }
  text += "label=" + label_column + ";difficulty=" + difficulty_column.value_or("");
  return sha256_hex(text);
}

std::string_view to_string(AttackClass c) {
  switch (c) {
    case AttackClass::normal: return "normal";
    case AttackClass::dos: return "DoS";
    case AttackClass::probe: return "Probe";
    case AttackClass::u2r: return "U2R";
    case AttackClass::r2l: return "R2L";
  }
  return "?";
}

AttackClass attack_class_from_string(std::string_view name) {
  for (auto c : kAllAttackClasses) {
    if (to_string(c) == name) return c;
  }
  throw ParseError("unknown attack class '" + std::string(name) + "'");
}

std::string_view to_string(SplitTag t) { return t == SplitTag::train ? "train" : "test"; }

const AttackMap& AttackMap::builtin() {
  static const AttackMap map = [] {
    AttackMap m;
    m.version = "v1";
    for (const auto& [name, cls] : kBuiltinAttackMap) m.classes.emplace(std::string(name), cls);
    return m;
  }();
  return map;
}

AttackMap AttackMap::load(const std::filesystem::path& csv) {
  std::istringstream in(read_file(csv));
  AttackMap m;
  m.version = csv.stem().string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto comma = s.find(',');
    if (comma == std::string_view::npos) throw ParseError("expected name,class", line_no);
    m.classes.emplace(std::string(trim(s.substr(0, comma))), attack_class_from_string(trim(s.substr(comma + 1))));
  }
  return m;
}

AttackClass AttackMap::lookup(std::string_view attack_name) const {
  auto it = classes.find(attack_name);
  if (it == classes.end()) throw ParseError("unknown attack name '" + std::string(attack_name) + "'");
  return it->second;
}

Dataset::Dataset(DatasetSchema schema, std::vector<Column> columns, std::vector<AttackClass> raw_classes,
                 std::vector<std::uint8_t> labels, std::vector<std::int32_t> difficulty, SplitTag split)
    : schema_(std::move(schema)),
      columns_(std::move(columns)),
      raw_classes_(std::move(raw_classes)),
      labels_(std::move(labels)),
      difficulty_(std::move(difficulty)),
      split_(split) {
  const std::size_t n = raw_classes_.size();
  if (columns_.size() != schema_.features.size()) throw SchemaError("column count does not match schema");
  if (labels_.size() != n) throw SchemaError("label count does not match row count");
  if (!difficulty_.empty() && difficulty_.size() != n) throw SchemaError("difficulty length mismatch");
  for (std::size_t f = 0; f < columns_.size(); ++f) {
    const auto& col = columns_[f];
    const auto& name = schema_.features[f].name;
    if (schema_.features[f].kind == FeatureKind::numeric) {
      if (col.values.size() != n || !col.codes.empty()) throw SchemaError("bad numeric column " + name);
    } else {
      if (col.codes.size() != n || !col.values.empty()) throw SchemaError("bad categorical column " + name);
      if (col.vocabulary.empty() || col.vocabulary[0] != kUnknownCategory) {
        throw SchemaError("vocabulary of " + name + " lacks the unknown entry");
      }
      const auto size = static_cast<std::int32_t>(col.vocabulary.size());
      for (auto code : col.codes) {
        if (code < 0 || code >= size) throw SchemaError("code out of range in " + name);
      }
    }
  }
  for (auto l : labels_) {
    if (l > 1) throw SchemaError("labels must be 0 or 1");
  }
}

Vocabulary Dataset::vocabulary() const {
  Vocabulary v;
  v.reserve(columns_.size());
  for (const auto& c : columns_) v.push_back(c.vocabulary);
  return v;
}

const std::string& Dataset::category(std::size_t feature, std::size_t row) const {
  const auto& col = columns_.at(feature);
  return col.vocabulary.at(static_cast<std::size_t>(col.codes.at(row)));
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  std::vector<Column> cols(columns_.size());
  for (std::size_t f = 0; f < columns_.size(); ++f) {
    const auto& src = columns_[f];
    auto& dst = cols[f];
    dst.vocabulary = src.vocabulary;
    if (!src.values.empty() || src.codes.empty()) {
      dst.values.reserve(rows.size());
      for (auto r : rows) dst.values.push_back(src.values.at(r));
    }
    if (!src.codes.empty()) {
      dst.codes.reserve(rows.size());
      for (auto r : rows) dst.codes.push_back(src.codes.at(r));
    }
  }
  std::vector<AttackClass> raw;
  std::vector<std::uint8_t> labels;
  std::vector<std::int32_t> diff;
  raw.reserve(rows.size());
  labels.reserve(rows.size());
  for (auto r : rows) {
    raw.push_back(raw_classes_.at(r));
    labels.push_back(labels_.at(r));
    if (!difficulty_.empty()) diff.push_back(difficulty_[r]);
  }
  return Dataset(schema_, std::move(cols), std::move(raw), std::move(labels), std::move(diff), split_);
}

Dataset parse_nslkdd_text(std::string_view text, const DatasetSchema& schema, const ParseOptions& opts) {
  const std::size_t n_features = schema.features.size();
  const AttackMap& attacks = opts.attack_map ? *opts.attack_map : AttackMap::builtin();
  if (opts.vocabulary && opts.vocabulary->size() != n_features) {
    throw SchemaError("shared vocabulary does not match the schema");
  }

  std::vector<Column> cols(n_features);
  std::vector<std::unordered_map<std::string, std::int32_t>> lookup(n_features);
  for (std::size_t f = 0; f < n_features; ++f) {
    if (schema.features[f].kind != FeatureKind::categorical) continue;
    if (opts.vocabulary) {
      cols[f].vocabulary = (*opts.vocabulary)[f];
    } else {
      cols[f].vocabulary = {std::string(kUnknownCategory)};
    }
    for (std::size_t i = 0; i < cols[f].vocabulary.size(); ++i) {
      lookup[f].emplace(cols[f].vocabulary[i], static_cast<std::int32_t>(i));
    }
  }

  std::vector<AttackClass> raw;
  std::vector<std::int32_t> difficulty;
  std::vector<std::string_view> fields;
  fields.reserve(n_features + 2);
  std::size_t line_no = 0;
  bool any_difficulty = false;

  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;

    fields.clear();
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? comma : comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != n_features + 1 && fields.size() != n_features + 2) {
      throw ParseError("expected " + std::to_string(n_features + 1) + " or " + std::to_string(n_features + 2) +
                           " fields, found " + std::to_string(fields.size()),
                       line_no);
    }

    for (std::size_t f = 0; f < n_features; ++f) {
      const auto field = fields[f];
      auto& col = cols[f];
      if (schema.features[f].kind == FeatureKind::numeric) {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (ec != std::errc{} || ptr != field.data() + field.size()) {
          throw ParseError("feature '" + schema.features[f].name + "': not a number '" + std::string(field) + "'",
                           line_no);
        }
        col.values.push_back(v);
      } else {
        auto& map = lookup[f];
        auto it = map.find(std::string(field));
        std::int32_t code = kUnknownCode;
        if (it != map.end()) {
          code = it->second;
        } else if (!opts.vocabulary) {
          code = static_cast<std::int32_t>(col.vocabulary.size());
          col.vocabulary.emplace_back(field);
          map.emplace(std::string(field), code);
        }
        col.codes.push_back(code);
      }
    }

    auto name = fields[n_features];
    // Some distributions terminate the attack name with a period.
    if (!name.empty() && name.back() == '.') name.remove_suffix(1);
    raw.push_back(attacks.lookup(name));

    if (fields.size() == n_features + 2) {
      std::int32_t d = 0;
      const auto field = fields[n_features + 1];
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), d);
      if (ec != std::errc{} || ptr != field.data() + field.size()) {
        throw ParseError("difficulty is not an integer '" + std::string(field) + "'", line_no);
      }
      difficulty.push_back(d);
      any_difficulty = true;
    } else {
      difficulty.push_back(0);
    }
  }

  if (raw.empty()) throw ParseError("no records");
  if (!any_difficulty) difficulty.clear();

  std::vector<std::uint8_t> labels(raw.size());
  std::transform(raw.begin(), raw.end(), labels.begin(), binary_label);
  return Dataset(schema, std::move(cols), std::move(raw), std::move(labels), std::move(difficulty), opts.split);
}

Dataset parse_nslkdd(const std::filesystem::path& path, const DatasetSchema& schema, const ParseOptions& opts) {
  return parse_nslkdd_text(read_file(path), schema, opts);
}

std::map<AttackClass, std::size_t> class_counts(const Dataset& ds) {
  std::map<AttackClass, std::size_t> counts;
  for (auto c : ds.raw_classes()) ++counts[c];
  return counts;
}

Dataset binarize(const Dataset& ds) {
  std::vector<std::uint8_t> labels(ds.n_rows());
  std::transform(ds.raw_classes().begin(), ds.raw_classes().end(), labels.begin(), binary_label);
  return Dataset(ds.schema(), ds.columns(), {ds.raw_classes().begin(), ds.raw_classes().end()}, std::move(labels),
                 {ds.difficulty().begin(), ds.difficulty().end()}, ds.split());
}

const ReferenceCounts& nslkdd_reference_counts() {
  static const ReferenceCounts counts{
      {67343, 45927, 11656, 52, 995},
      {9711, 7458, 2421, 200, 2754},
      125973,
      22543,
  };
  return counts;
}

CountCheck check_reference_counts(const Dataset& ds) {
  const auto& ref = nslkdd_reference_counts();
  CountCheck check;
  check.expected = ds.split() == SplitTag::train ? ref.train : ref.test;
  for (auto c : ds.raw_classes()) ++check.observed[static_cast<std::size_t>(c)];
  check.observed_total = ds.n_rows();
  for (auto c : kAllAttackClasses) {
    const auto i = static_cast<std::size_t>(c);
    if (check.observed[i] != check.expected[i]) {
      check.match = false;
      check.notes.push_back("class " + std::string(to_string(c)) + ": observed " + std::to_string(check.observed[i]) +
                            ", expected " + std::to_string(check.expected[i]));
    }
  }
  if (ds.split() == SplitTag::test) {
    std::size_t row_sum = 0;
    for (auto v : ref.test) row_sum += v;
    check.notes.push_back("reference test total printed as " + std::to_string(ref.test_total_printed) +
                          " but its class entries sum to " + std::to_string(row_sum) +
                          "; validated against the class entries");
  }
  return check;
}

void write_cache(const Dataset& ds, const std::filesystem::path& path, std::string_view source_sha256) {
  json header;
  header["format"] = "nidens-dataset";
  header["version"] = kCacheVersion;
  header["schema_hash"] = ds.schema().hash();
  header["n_rows"] = ds.n_rows();
  header["split"] = to_string(ds.split());
  header["source_sha256"] = source_sha256;
  header["label_column"] = ds.schema().label_column;
  header["difficulty_column"] = ds.schema().difficulty_column.value_or("");
  json features = json::array();
  for (std::size_t f = 0; f < ds.n_features(); ++f) {
    const auto& spec = ds.schema().features[f];
    features.push_back({{"name", spec.name},
                        {"kind", spec.kind == FeatureKind::categorical ? "categorical" : "numeric"},
                        {"vocabulary", ds.column(f).vocabulary}});
  }
  header["features"] = std::move(features);

  std::string out(kCacheMagic, sizeof kCacheMagic);
  const std::string header_text = header.dump();
  const auto header_len = static_cast<std::uint64_t>(header_text.size());
  out.append(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out += header_text;
  for (const auto& col : ds.columns()) {
    if (col.codes.empty()) {
      append_blob(out, col.values);
    } else {
      append_blob(out, col.codes);
    }
  }
  std::vector<std::uint8_t> raw(ds.n_rows());
  std::transform(ds.raw_classes().begin(), ds.raw_classes().end(), raw.begin(),
                 [](AttackClass c) { return static_cast<std::uint8_t>(c); });
  append_blob(out, raw);
  append_blob(out, std::vector<std::uint8_t>(ds.labels().begin(), ds.labels().end()));
  append_blob(out, std::vector<std::int32_t>(ds.difficulty().begin(), ds.difficulty().end()));
  write_file(path, out);
}

Dataset read_cache(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::string_view in(bytes);
  if (in.size() < sizeof kCacheMagic + 8 || std::memcmp(in.data(), kCacheMagic, sizeof kCacheMagic) != 0) {
    throw ParseError(path.string() + " is not a dataset cache");
  }
  in.remove_prefix(sizeof kCacheMagic);
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, in.data(), sizeof header_len);
  in.remove_prefix(sizeof header_len);
  if (in.size() < header_len) throw ParseError("truncated cache header");
  const json header = json::parse(in.substr(0, header_len));
  in.remove_prefix(header_len);
  if (header.at("version").get<int>() != kCacheVersion) throw ParseError("unsupported cache version");

  DatasetSchema schema;
  schema.features.clear();
  schema.label_column = header.at("label_column").get<std::string>();
  const auto diff_col = header.at("difficulty_column").get<std::string>();
  schema.difficulty_column = diff_col.empty() ? std::nullopt : std::optional<std::string>(diff_col);
  std::vector<Column> cols;
  for (const auto& f : header.at("features")) {
    const bool cat = f.at("kind").get<std::string>() == "categorical";
    schema.features.push_back({f.at("name").get<std::string>(), cat ? FeatureKind::categorical : FeatureKind::numeric});
    Column col;
    col.vocabulary = f.at("vocabulary").get<std::vector<std::string>>();
    if (cat) {
      col.codes = take_blob<std::int32_t>(in);
    } else {
      col.values = take_blob<double>(in);
    }
    cols.push_back(std::move(col));
  }
  if (schema.hash() != header.at("schema_hash").get<std::string>()) throw SchemaError("cache schema hash mismatch");
  const auto raw_codes = take_blob<std::uint8_t>(in);
  auto labels = take_blob<std::uint8_t>(in);
  auto difficulty = take_blob<std::int32_t>(in);
  std::vector<AttackClass> raw(raw_codes.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw_codes[i] >= kNumAttackClasses) throw ParseError("bad class code in cache");
    raw[i] = static_cast<AttackClass>(raw_codes[i]);
  }
  const auto split = header.at("split").get<std::string>() == "test" ? SplitTag::test : SplitTag::train;
  return Dataset(std::move(schema), std::move(cols), std::move(raw), std::move(labels), std::move(difficulty), split);
}

}  // namespace nidens
