#include "doctest.h"

#include <filesystem>

#include "nidens/dataset.hpp"
#include "nidens/error.hpp"
#include "support.hpp"

using namespace nidens;
using nidens::testing::nslkdd_line;

namespace {

std::string three_line_fixture() {
  return nslkdd_line("tcp", "http", "SF", "normal", 21, {{0, 2}, {4, 181}, {5, 5450}, {24, 0.25}}) +
         nslkdd_line("udp", "private", "S0", "neptune", 19, {{4, 105}}) +
         nslkdd_line("tcp", "ftp_data", "SF", "guess_passwd", 15, {{0, 1}, {9, 3}});
}

}  // namespace

TEST_CASE("schema has the NSL-KDD layout") {
  auto schema = DatasetSchema::nslkdd();
  CHECK(schema.features.size() == 41);
  CHECK(schema.num_categorical() == 3);
  CHECK_NOTHROW(schema.validate());
  CHECK(schema.features[1].name == "protocol_type");
  CHECK(schema.features[40].name == "dst_host_srv_rerror_rate");

  auto broken = schema;
  broken.features[4].kind = FeatureKind::categorical;
  CHECK_THROWS_AS(broken.validate(), SchemaError);
  broken = schema;
  broken.features.pop_back();
  CHECK_THROWS_AS(broken.validate(), SchemaError);
}

TEST_CASE("three-line fixture parses to exact codes and values") {
  const auto ds = parse_nslkdd_text(three_line_fixture(), DatasetSchema::nslkdd());
  REQUIRE(ds.n_rows() == 3);
  CHECK(ds.column(0).values == std::vector<double>{2, 0, 1});
  CHECK(ds.column(4).values == std::vector<double>{181, 105, 0});
  CHECK(ds.column(5).values == std::vector<double>{5450, 0, 0});
  CHECK(ds.column(24).values == std::vector<double>{0.25, 0, 0});
  CHECK(ds.column(9).values == std::vector<double>{0, 0, 3});
  // vocabularies in first-seen order after the reserved unknown entry
  CHECK(ds.column(1).vocabulary == std::vector<std::string>{"<unknown>", "tcp", "udp"});
  CHECK(ds.column(1).codes == std::vector<std::int32_t>{1, 2, 1});
  CHECK(ds.column(2).codes == std::vector<std::int32_t>{1, 2, 3});
  CHECK(ds.column(3).codes == std::vector<std::int32_t>{1, 2, 1});
  CHECK(ds.raw_classes()[0] == AttackClass::normal);
  CHECK(ds.raw_classes()[1] == AttackClass::dos);
  CHECK(ds.raw_classes()[2] == AttackClass::r2l);
  CHECK(std::vector<std::uint8_t>(ds.labels().begin(), ds.labels().end()) == std::vector<std::uint8_t>{0, 1, 1});
  CHECK(std::vector<std::int32_t>(ds.difficulty().begin(), ds.difficulty().end()) ==
        std::vector<std::int32_t>{21, 19, 15});
}

TEST_CASE("42-field lines without difficulty are accepted") {
  const auto ds = parse_nslkdd_text(nslkdd_line("icmp", "ecr_i", "SF", "smurf.", std::nullopt), DatasetSchema::nslkdd());
  CHECK(ds.n_rows() == 1);
  CHECK(ds.difficulty().empty());
  CHECK(ds.raw_classes()[0] == AttackClass::dos);
}

TEST_CASE("parse errors") {
  const auto schema = DatasetSchema::nslkdd();
  SUBCASE("empty input") {
    CHECK_THROWS_WITH_AS(parse_nslkdd_text("", schema), "no records", ParseError);
    CHECK_THROWS_WITH_AS(parse_nslkdd_text("\n\n", schema), "no records", ParseError);
  }
  SUBCASE("wrong field count reports the line") {
    std::string text = nslkdd_line("tcp", "http", "SF", "normal") + "0,tcp,http,SF,normal\n";
    try {
      parse_nslkdd_text(text, schema);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("unknown attack name is listed") {
    CHECK_THROWS_WITH_AS(parse_nslkdd_text(nslkdd_line("tcp", "http", "SF", "zeroday"), schema),
                         doctest::Contains("zeroday"), ParseError);
  }
  SUBCASE("bad numeric field") {
    auto line = nslkdd_line("tcp", "http", "SF", "normal");
    line.replace(0, 1, "x");
    CHECK_THROWS_AS(parse_nslkdd_text(line, schema), ParseError);
  }
}

TEST_CASE("shared vocabulary maps unseen test categories to the unknown code") {
  const auto schema = DatasetSchema::nslkdd();
  const auto train = parse_nslkdd_text(three_line_fixture(), schema);
  const auto vocab = train.vocabulary();
  ParseOptions opts;
  opts.split = SplitTag::test;
  opts.vocabulary = &vocab;
  const auto test = parse_nslkdd_text(
      nslkdd_line("tcp", "http", "SF", "normal") + nslkdd_line("icmp", "http_2784", "RSTR", "mscan"), schema, opts);
  CHECK(test.split() == SplitTag::test);
  CHECK(test.column(1).codes == std::vector<std::int32_t>{1, kUnknownCode});
  CHECK(test.column(2).codes == std::vector<std::int32_t>{1, kUnknownCode});
  CHECK(test.column(3).codes == std::vector<std::int32_t>{1, kUnknownCode});
  CHECK(test.column(2).vocabulary == train.column(2).vocabulary);
  CHECK(test.category(2, 1) == "<unknown>");
}

TEST_CASE("parsing is deterministic and vocabularies round-trip") {
  const auto schema = DatasetSchema::nslkdd();
  const auto text = three_line_fixture();
  const auto a = parse_nslkdd_text(text, schema);
  const auto b = parse_nslkdd_text(text, schema);
  CHECK(a == b);
  const std::vector<std::string> services{"http", "private", "ftp_data"};
  for (std::size_t r = 0; r < a.n_rows(); ++r) CHECK(a.category(2, r) == services[r]);
}

TEST_CASE("class counts and binarize") {
  const auto schema = DatasetSchema::nslkdd();
  const auto single = parse_nslkdd_text(nslkdd_line("tcp", "http", "SF", "normal"), schema);
  const auto counts = class_counts(single);
  CHECK(counts.size() == 1);
  CHECK(counts.at(AttackClass::normal) == 1);

  const auto all_normal = parse_nslkdd_text(
      nslkdd_line("tcp", "http", "SF", "normal") + nslkdd_line("udp", "domain_u", "SF", "normal"), schema);
  const auto bin = binarize(all_normal);
  for (auto l : bin.labels()) CHECK(l == 0);

  const auto mixed = binarize(parse_nslkdd_text(three_line_fixture(), schema));
  CHECK(mixed.labels()[0] == 0);
  CHECK(mixed.labels()[1] == 1);
  CHECK(mixed.raw_classes()[2] == AttackClass::r2l);
}

TEST_CASE("builtin attack map matches the bundled data file") {
  const auto from_file = AttackMap::load(std::filesystem::path(NIDENS_DATA_DIR) / "attack_classes_v1.csv");
  CHECK(from_file.classes == AttackMap::builtin().classes);
  CHECK(AttackMap::builtin().lookup("httptunnel") == AttackClass::u2r);
  CHECK(AttackMap::builtin().lookup("worm") == AttackClass::r2l);
  CHECK_THROWS_AS(AttackMap::builtin().lookup("nope"), ParseError);
}

TEST_CASE("reference count check flags mismatches and notes the test total") {
  const auto schema = DatasetSchema::nslkdd();
  ParseOptions opts;
  opts.split = SplitTag::test;
  const auto ds = parse_nslkdd_text(three_line_fixture(), schema, opts);
  const auto check = check_reference_counts(ds);
  CHECK_FALSE(check.match);
  CHECK(check.observed[0] == 1);
  CHECK(check.expected[0] == 9711);
  bool total_note = false;
  for (const auto& n : check.notes) total_note |= n.find("22543") != std::string::npos && n.find("22544") != std::string::npos;
  CHECK(total_note);
  const auto& ref = nslkdd_reference_counts();
  std::size_t train_sum = 0;
  for (auto v : ref.train) train_sum += v;
  CHECK(train_sum == ref.train_total);
  CHECK(ref.train[1] + ref.train[2] + ref.train[3] + ref.train[4] == 58630);
}

TEST_CASE("cache round trip") {
  const auto ds = parse_nslkdd_text(three_line_fixture(), DatasetSchema::nslkdd());
  const auto path = std::filesystem::temp_directory_path() / "nidens_cache_test.bin";
  write_cache(ds, path, "abc");
  const auto back = read_cache(path);
  CHECK(back == ds);
  std::filesystem::remove(path);
}

TEST_CASE("subset keeps vocabularies and repeats rows") {
  const auto ds = parse_nslkdd_text(three_line_fixture(), DatasetSchema::nslkdd());
  const std::vector<std::size_t> rows{2, 2, 0};
  const auto sub = ds.subset(rows);
  CHECK(sub.n_rows() == 3);
  CHECK(sub.column(2).codes == std::vector<std::int32_t>{3, 3, 1});
  CHECK(sub.column(2).vocabulary == ds.column(2).vocabulary);
}
