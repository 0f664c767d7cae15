#include <doctest.h>

#include "support.hpp"
#include "ttpmap/config.hpp"
#include "ttpmap/error.hpp"

using namespace ttpmap;

namespace {

constexpr const char* kBase = R"(# sample
mode = "mock"
parallelism = 3

[retrieval]
k = 5
tau = 0.7   # inline comment

[analyzer]
max_tool_calls = 4
no_explorer = true

[paths]
attck_bundle = "bundle.json"
guideline_dir = "g"
run_dir = "/abs/run"

[mock]
script = "mock.json"
)";

}  // namespace

TEST_CASE("parse and typed access") {
  auto c = Config::parse(kBase);
  CHECK(c.require("mode") == "mock");
  CHECK(c.get_int("retrieval.k", 0) == 5);
  CHECK(c.get_double("retrieval.tau", 0) == doctest::Approx(0.7));
  CHECK(c.get_bool("analyzer.no_explorer", false));
  CHECK(c.get("provider.model", "none") == "none");
  CHECK_FALSE(c.has("provider.model"));
  CHECK_THROWS_WITH_AS(c.require("provider.endpoint"), doctest::Contains("provider.endpoint"), ConfigError);
  CHECK(Config::parse(c.dump()).values() == c.values());
}

TEST_CASE("syntax and key errors") {
  CHECK_THROWS_AS(Config::parse("bogus = 1"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[retrieval]\nkk = 1"), ConfigError);
  CHECK_THROWS_AS(Config::parse("mode"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[retrieval\nk = 1"), ConfigError);
  auto c = Config::parse("[retrieval]\nk = many");
  CHECK_THROWS_AS(c.get_int("retrieval.k", 1), ConfigError);
}

TEST_CASE("overrides") {
  auto c = Config::parse(kBase);
  c.set("retrieval.k=9");
  c.set("provider.model = m1");
  CHECK(c.get_int("retrieval.k", 0) == 9);
  CHECK(c.require("provider.model") == "m1");
  CHECK_THROWS_AS(c.set("nope=1"), ConfigError);
  CHECK_THROWS_AS(c.set("retrieval.k"), ConfigError);
}

TEST_CASE("run config resolution and mode requirements") {
  auto c = Config::parse(kBase);
  auto rc = to_run_config(c, "/base");
  CHECK(rc.gateway.mode == BackendMode::Mock);
  CHECK(rc.retrieval.k == 5);
  CHECK(rc.retrieval.tau == doctest::Approx(0.7));
  CHECK(rc.analyzer.budget.max_tool_calls == 4);
  CHECK(rc.analyzer.budget.max_context_chars == 60000);
  CHECK(rc.analyzer.budget.per_function_chars == 8000);
  CHECK(rc.analyzer.no_explorer);
  CHECK(rc.parallelism == 3);
  CHECK(rc.attck_bundle == std::filesystem::path("/base/bundle.json"));
  CHECK(rc.run_dir == std::filesystem::path("/abs/run"));
  CHECK(*rc.mock_script == std::filesystem::path("/base/mock.json"));

  auto defaults = to_run_config(Config::parse("mode = mock\n[mock]\nscript = m.json"));
  CHECK(defaults.retrieval.k == 20);
  CHECK(defaults.retrieval.tau == doctest::Approx(0.5));
  CHECK(defaults.analyzer.budget.max_tool_calls == 8);

  CHECK_THROWS_WITH_AS(to_run_config(Config::parse("mode = mock")), doctest::Contains("mock.script"), ConfigError);
  CHECK_THROWS_WITH_AS(to_run_config(Config::parse("mode = replay")), doctest::Contains("record_dir"), ConfigError);
  CHECK_THROWS_WITH_AS(to_run_config(Config::parse("mode = live")), doctest::Contains("provider.endpoint"),
                       ConfigError);
  CHECK_THROWS_AS(to_run_config(Config::parse("mode = sideways")), ConfigError);
  c.set("retrieval.tau=1.5");
  CHECK_THROWS_AS(to_run_config(c), ConfigError);
}

TEST_CASE("load reports a missing file") {
  CHECK_THROWS_AS(Config::load("/nonexistent/ttpmap.toml"), Error);
  auto golden = Config::load(testing::fixture("golden.toml"));
  CHECK(golden.require("mode") == "mock");
}
