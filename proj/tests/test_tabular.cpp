#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <map>

#include "dtgan/common.hpp"
#include "dtgan/rng.hpp"
#include "dtgan/tabular.hpp"

using namespace dtgan;
using namespace dtgan::tabular;

namespace {

Table make_table(std::vector<std::string> header, std::vector<std::vector<std::string>> rows) {
  Table t;
  t.header = std::move(header);
  t.rows = std::move(rows);
  return t;
}

// Schema with one continuous column "v" over [0, 10] and one categorical
// target "c" over {a, b, c}.
Schema vc_schema() {
  ColumnSpec v;
  v.name = "v";
  v.kind = ColumnKind::continuous;
  v.min = 0.0;
  v.max = 10.0;
  ColumnSpec c;
  c.name = "c";
  c.kind = ColumnKind::categorical;
  c.categories = {"a", "b", "c"};
  c.frequencies = {0.4, 0.3, 0.3};
  return Schema({v, c}, "c");
}

}  // namespace

TEST_CASE("csv parsing handles quotes, commas and embedded newlines") {
  Table t = parse_csv("a,b\n\"x,y\",\"he said \"\"hi\"\"\"\n\"line1\nline2\",plain\n");
  CHECK(t.header == std::vector<std::string>{"a", "b"});
  REQUIRE(t.num_rows() == 2);
  CHECK(t.rows[0][0] == "x,y");
  CHECK(t.rows[0][1] == "he said \"hi\"");
  CHECK(t.rows[1][0] == "line1\nline2");
  CHECK(t.rows[1][1] == "plain");
}

TEST_CASE("csv writing round trips") {
  Table t = make_table({"name", "note"}, {{"a,b", "with \"quotes\""}, {"", "new\nline"}});
  Table back = parse_csv(to_csv(t));
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
}

TEST_CASE("csv errors") {
  CHECK_THROWS_AS(parse_csv(""), DataError);
  CHECK_THROWS_AS(parse_csv("a,b\n1\n"), DataError);       // ragged row
  CHECK_THROWS_AS(parse_csv("a,b\n\"x,1\n"), DataError);   // unterminated quote
}

TEST_CASE("schema inference follows the categorical rule") {
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < 1000; ++i) {
    rows.push_back({i % 2 == 0 ? "a" : "b",                   // strings -> categorical
                    format_number(0.001 * i + 0.1),           // many distinct -> continuous
                    std::to_string(i % 3),                    // 3 distinct ints -> categorical
                    std::to_string(i)});                      // 1000 distinct ints -> continuous
  }
  Table t = make_table({"s", "x", "k", "id"}, rows);
  Schema schema = infer_schema(t, "s", 20);
  CHECK(schema.column(0).kind == ColumnKind::categorical);
  CHECK(schema.column(0).categories == std::vector<std::string>{"a", "b"});
  CHECK(schema.column(1).kind == ColumnKind::continuous);
  CHECK(schema.column(2).kind == ColumnKind::categorical);
  CHECK(schema.column(2).categories.size() == 3);
  CHECK(schema.column(3).kind == ColumnKind::continuous);
  CHECK(schema.encoded_width() == 1 + 1 + 3 + 2);
  CHECK(schema.condition_width() == 2 + 3);
}

TEST_CASE("schema inference is row-order independent") {
  std::vector<std::vector<std::string>> rows;
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    rows.push_back({rng.uniform() < 0.3 ? "x" : "y", format_number(rng.normal())});
  }
  Table t1 = make_table({"c", "v"}, rows);
  rng.shuffle(rows.begin(), rows.end());
  Table t2 = make_table({"c", "v"}, rows);
  CHECK(infer_schema(t1, "c").to_json() == infer_schema(t2, "c").to_json());
}

TEST_CASE("schema inference errors") {
  Table empty = make_table({"a"}, {});
  CHECK_THROWS_AS(infer_schema(empty, "a"), DataError);
  Table t = make_table({"a", "b"}, {{"x", "1.5"}, {"y", "2.25"}});
  CHECK_THROWS_AS(infer_schema(t, "missing"), DataError);
  CHECK_THROWS_AS(infer_schema(t, "b"), DataError);  // continuous target rejected
  Table holes = make_table({"a", "b"}, {{"x", "1"}, {"", "2"}});
  CHECK_THROWS_WITH_AS(infer_schema(holes, "a"),
                       "missing value at row 1, column 'a'", DataError);
}

TEST_CASE("encode scales continuous and one-hots categorical") {
  Table t = make_table({"v", "c"}, {{"0", "a"}, {"5", "b"}, {"10", "c"}});
  Schema schema = vc_schema();
  EncodedMatrix m = encode(schema, t);
  REQUIRE(m.cols() == 4);
  CHECK(m(0, 0) == -1.0f);
  CHECK(m(1, 0) == 0.0f);
  CHECK(m(2, 0) == 1.0f);
  // "b" in (a, b, c) -> (0, 1, 0)
  CHECK(m(1, 1) == 0.0f);
  CHECK(m(1, 2) == 1.0f);
  CHECK(m(1, 3) == 0.0f);
  CHECK(m.cols() == schema.encoded_width());
  // Every categorical block sums to one on real data.
  for (int r = 0; r < 3; ++r) CHECK(m.row(r).tail(3).sum() == 1.0f);
}

TEST_CASE("decode inverts encode on in-range data") {
  Table t = make_table({"v", "c"}, {{"0", "a"}, {"5", "b"}, {"10", "c"}, {"2.5", "a"}});
  Schema schema = vc_schema();
  Table back = decode(schema, encode(schema, t));
  CHECK(back.rows == t.rows);
}

TEST_CASE("encode-decode-encode is stable") {
  Rng rng(5);
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < 100; ++i) {
    rows.push_back({format_number(rng.normal() * 7.3), rng.uniform() < 0.5 ? "u" : "v"});
  }
  Table t = make_table({"x", "c"}, rows);
  Schema schema = infer_schema(t, "c");
  EncodedMatrix e1 = encode(schema, t);
  EncodedMatrix e2 = encode(schema, decode(schema, e1));
  CHECK((e1 - e2).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("decode is total on arbitrary matrices") {
  Schema schema = vc_schema();
  EncodedMatrix wild(2, 4);
  wild << 7.5f, 0.5f, -0.2f, -0.1f,   // out-of-range continuous, soft categorical
      -3.0f, 0.1f, 0.4f, 0.9f;
  Table out = decode(schema, wild);
  CHECK(out.rows[0][0] == "10");  // clamped to +1
  CHECK(out.rows[1][0] == "0");   // clamped to -1
  CHECK(out.rows[0][1] == "a");
  CHECK(out.rows[1][1] == "c");
}

TEST_CASE("degenerate continuous column encodes to zero and decodes to its constant") {
  Table t = make_table({"v", "c"}, {{"4.5", "a"}, {"4.5", "b"}});
  Schema schema = infer_schema(t, "c");
  EncodedMatrix m = encode(schema, t);
  CHECK(m(0, 0) == 0.0f);
  CHECK(m(1, 0) == 0.0f);
  Table back = decode(schema, m);
  CHECK(back.rows[0][0] == "4.5");
}

TEST_CASE("encode errors carry coordinates") {
  Schema schema = vc_schema();
  Table bad_cat = make_table({"v", "c"}, {{"3", "zzz"}});
  CHECK_THROWS_WITH_AS(encode(schema, bad_cat),
                       "unknown category at row 0, column 'c': zzz", DataError);
  Table bad_num = make_table({"v", "c"}, {{"oops", "a"}});
  CHECK_THROWS_WITH_AS(encode(schema, bad_num),
                       "unparsable numeric cell at row 0, column 'v': oops", DataError);
}

TEST_CASE("single-category condition always selects that slot") {
  Table t = make_table({"x", "c"}, {{"1.5", "only"}, {"2.25", "only"}});
  Schema schema = infer_schema(t, "c");
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    ConditionVector cond = sample_condition(schema, rng);
    CHECK(cond.column == 1);
    CHECK(cond.category == 0);
    CHECK(cond.dense.sum() == 1.0f);
  }
}

TEST_CASE("equal-frequency categories draw 50/50") {
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < 100; ++i) rows.push_back({i % 2 == 0 ? "a" : "b"});
  Table t = make_table({"c"}, rows);
  Schema schema = infer_schema(t, "c");
  Rng rng(10);
  int count_a = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    if (sample_condition(schema, rng).category == 0) ++count_a;
  }
  CHECK(std::abs(count_a / static_cast<double>(draws) - 0.5) < 0.02);
}

TEST_CASE("condition column choice is uniform over categorical columns") {
  std::vector<std::vector<std::string>> rows;
  Rng gen(11);
  for (int i = 0; i < 100; ++i) {
    rows.push_back({gen.uniform() < 0.5 ? "a" : "b", gen.uniform() < 0.2 ? "x" : "y",
                    gen.uniform() < 0.8 ? "p" : "q", format_number(gen.normal())});
  }
  Table t = make_table({"c1", "c2", "c3", "v"}, rows);
  Schema schema = infer_schema(t, "c1");
  Rng rng(12);
  std::map<int, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[sample_condition(schema, rng).column];
  for (auto [col, n] : counts) {
    CHECK(std::abs(n / static_cast<double>(draws) - 1.0 / 3.0) < 0.01);
  }
}

TEST_CASE("log-frequency weighting shifts category draws") {
  // 95/5 split: log-frequency weights give about 93.2/6.8.
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < 100; ++i) rows.push_back({i < 95 ? "major" : "minor"});
  Table t = make_table({"c"}, rows);
  Schema schema = infer_schema(t, "c");
  double expected = std::log1p(0.95) / (std::log1p(0.95) + std::log1p(0.05));
  Rng rng(13);
  int major = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    if (schema.column(0).categories[static_cast<size_t>(
            sample_condition(schema, rng).category)] == "major")
      ++major;
  }
  CHECK(std::abs(major / static_cast<double>(draws) - expected) < 0.01);
}

TEST_CASE("typify parses by schema") {
  Table t = make_table({"v", "c"}, {{"1.5", "a"}, {"2.5", "b"}});
  Schema schema = infer_schema(t, "c");
  auto cols = typify(schema, t);
  CHECK(cols[0].values == std::vector<double>{1.5, 2.5});
  CHECK(cols[1].categories == std::vector<int>{0, 1});
}

TEST_CASE("schema json round trips") {
  Schema schema = vc_schema();
  Schema back = Schema::from_json(schema.to_json());
  CHECK(back.to_json() == schema.to_json());
  CHECK(back.target() == "c");
  CHECK(back.encoded_width() == schema.encoded_width());
}

TEST_CASE("csv file io is atomic and round trips") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "dtgan_tabular_test";
  fs::create_directories(dir);
  Table t = make_table({"a", "b"}, {{"1", "x"}, {"2", "y"}});
  std::string path = (dir / "t.csv").string();
  write_csv(t, path);
  CHECK(!fs::exists(path + ".tmp"));
  Table back = read_csv(path);
  CHECK(back.rows == t.rows);
  fs::remove_all(dir);
}
