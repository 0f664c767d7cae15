#include <doctest.h>

#include <random>

#include <json.hpp>

#include "support.hpp"
#include "ttpmap/binary.hpp"
#include "ttpmap/error.hpp"
#include "ttpmap/ident.hpp"

using namespace ttpmap;
using nlohmann::json;

namespace {

json three_records() {
  return json{{"binary_id", "b"},
              {"platform", "linux"},
              {"functions",
               {{{"id", "a"}, {"address", 0x100}, {"name", "sub_100"}, {"code", "int sub_100() { return sub_200(1); }"}},
                {{"id", "b"}, {"address", 0x200}, {"name", "sub_200"}, {"code", "int sub_200(int x) { return x; }"}},
                {{"id", "c"}, {"address", 0x300}, {"name", "puts"}, {"code", ""}, {"external", true}}}}};
}

}  // namespace

TEST_CASE("load_binary_export reads every record") {
  auto b = parse_binary_export(three_records().dump());
  REQUIRE(b.functions.size() == 3);
  CHECK(b.platform == Platform::Linux);
  CHECK(b.functions[0].callee_names == std::set<std::string>{"sub_200"});
  CHECK(b.functions[1].callee_names.empty());  // the signature is not a self-call
  CHECK(b.functions[2].external);
  CHECK_FALSE(b.functions[0].summary.has_value());
}

TEST_CASE("load_binary_export rejects an empty binary") {
  auto doc = three_records();
  doc["functions"] = json::array();
  CHECK_THROWS_WITH_AS(parse_binary_export(doc.dump()), doctest::Contains("empty binary"), ValidationError);
}

TEST_CASE("missing decompiled code is a parse error naming record and field") {
  auto doc = three_records();
  doc["functions"][1].erase("code");
  try {
    parse_binary_export(doc.dump());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    std::string msg = e.what();
    CHECK(msg.find("function record 1") != std::string::npos);
    CHECK(msg.find("'code'") != std::string::npos);
  }
}

TEST_CASE("duplicate func_id is a validation error") {
  auto doc = three_records();
  doc["functions"][2]["id"] = "a";
  CHECK_THROWS_AS(parse_binary_export(doc.dump()), ValidationError);
}

TEST_CASE("unrecognized platforms map to unknown; bad recovered names are rejected") {
  auto doc = three_records();
  doc["platform"] = "amiga";
  CHECK(parse_binary_export(doc.dump()).platform == Platform::Unknown);
  doc = three_records();
  doc["functions"][0]["recovered_name"] = "not valid";
  CHECK_THROWS_AS(parse_binary_export(doc.dump()), ParseError);
  CHECK_THROWS_AS(parse_binary_export("{not json"), ParseError);
}

TEST_CASE("explicit callees are kept verbatim") {
  auto doc = three_records();
  doc["functions"][0]["callees"] = {"sub_200", "qux"};
  auto b = parse_binary_export(doc.dump());
  CHECK(b.functions[0].callee_names == std::set<std::string>{"qux", "sub_200"});
}

TEST_CASE("extract_callees examples") {
  CHECK(extract_callees("v1 = sub_401000(a1);", {"sub_401000"}) == std::set<std::string>{"sub_401000"});
  CHECK(extract_callees("return a + b;", {"a", "b"}).empty());
  CHECK(extract_callees("f(); g(); f();", {"f", "g", "h"}) == std::set<std::string>{"f", "g"});
  // call position only: a space before '(' or a longer identifier is not a call of f
  CHECK(extract_callees("xf(); f (1); f_2(3);", {"f"}).empty());
  CHECK(extract_callees("if (f(1)) f(2);", {"f"}) == std::set<std::string>{"f"});
}

TEST_CASE("extract_callees output is a subset of the known names") {
  std::mt19937_64 rng(7);
  const std::vector<std::string> vocab = {"a", "b", "sub_1", "sub_2", "memcpy", "x1", "y"};
  const std::vector<std::string> glue = {"(", ");", " ", "+", "\n", "((", ","};
  for (int trial = 0; trial < 300; ++trial) {
    std::string code;
    for (int i = 0; i < 40; ++i) {
      code += vocab[rng() % vocab.size()];
      code += glue[rng() % glue.size()];
    }
    std::set<std::string> known;
    for (const auto& v : vocab) {
      if (rng() % 2) known.insert(v);
    }
    // independent oracle: scan every occurrence and check its neighbours
    std::set<std::string> expected;
    for (const auto& name : known) {
      for (auto pos = code.find(name); pos != std::string::npos; pos = code.find(name, pos + 1)) {
        bool left_ok = pos == 0 || !is_ident_char(code[pos - 1]);
        bool right_ok = pos + name.size() < code.size() && code[pos + name.size()] == '(';
        if (left_ok && right_ok) expected.insert(name);
      }
    }
    auto got = extract_callees(code, known);
    CHECK(got == expected);
    for (const auto& g : got) CHECK(known.count(g) == 1);
  }
}

TEST_CASE("dedup keeps the lowest address") {
  auto b = testing::make_binary({{"hi", 0x200, "sub_200", "int x() { return 1; }"},
                                 {"lo", 0x100, "sub_100", "int x() { return 1; }"},
                                 {"other", 0x300, "sub_300", "int y() { return 2; }"}});
  auto d = dedup_functions(b);
  REQUIRE(d.functions.size() == 2);
  CHECK(d.find_by_id("lo") != nullptr);
  CHECK(d.find_by_id("hi") == nullptr);
}

TEST_CASE("dedup of distinct bodies is the identity") {
  auto b = testing::make_binary({{"a", 1, "f", "int f() { g(); }"}, {"b", 2, "g", "int g() { }"}});
  CHECK(dedup_functions(b) == b);
}

TEST_CASE("dedup rewrites callers of removed duplicates") {
  auto b = testing::make_binary({{"keep", 0x100, "sub_100", "{ return 7; }"},
                                 {"drop", 0x180, "sub_180", "{ return 7; }"},
                                 {"caller", 0x200, "sub_200", "int sub_200() { sub_180(); }"}});
  auto d = dedup_functions(b);
  REQUIRE(d.functions.size() == 2);
  CHECK(d.find_by_id("caller")->callee_names == std::set<std::string>{"sub_100"});
}

TEST_CASE("externals with identical empty bodies are never merged") {
  auto b = testing::make_binary({{"x1", 0x900, "send", "", true}, {"x2", 0x908, "recv", "", true}});
  CHECK(dedup_functions(b).functions.size() == 2);
}

TEST_CASE("dedup is idempotent on random binaries") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<testing::Fn> fns;
    int n = 2 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) {
      std::string body = "{ ";
      for (int j = 0; j < 2; ++j) body += "f" + std::to_string(rng() % n) + "(); ";
      body += "return " + std::to_string(rng() % 3) + "; }";
      fns.push_back({"id" + std::to_string(i), static_cast<std::uint64_t>(0x1000 + 0x10 * ((i * 7) % n)),
                     "f" + std::to_string(i), body});
    }
    auto once = dedup_functions(testing::make_binary(fns));
    CHECK(dedup_functions(once) == once);
    std::set<std::string> bodies;
    for (const auto& f : once.functions) CHECK(bodies.insert(f.decompiled_code).second);
  }
}

TEST_CASE("export round-trip is the identity on the normalized model") {
  auto b = parse_binary_export(three_records().dump());
  b.functions[0].summary = "calls the helper";
  b.functions[0].recovered_name = "call_helper";
  auto again = parse_binary_export(serialize_binary_export(b));
  CHECK(again == b);

  testing::TempDir dir;
  write_binary_export(b, dir / "out.json");
  CHECK(load_binary_export(dir / "out.json") == b);
}

TEST_CASE("golden fixture loads with its duplicate removed") {
  auto raw = load_binary_export(testing::fixture("golden_binary.json"));
  CHECK(raw.functions.size() == 18);
  auto b = dedup_functions(raw);
  CHECK(b.functions.size() == 17);
  CHECK(b.find_by_id("f12") == nullptr);
  CHECK(b.find_by_id("f06")->callee_names == std::set<std::string>{"sub_401600"});
  CHECK(b.find_by_id("f07")->callee_names == std::set<std::string>{"CopyFileA", "sub_401500"});
}
