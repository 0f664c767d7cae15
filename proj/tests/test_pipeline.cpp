#include <doctest.h>

#include <cstdio>
#include <cstdlib>

#include <json.hpp>
#include <sys/wait.h>

#include "published_tables.hpp"
#include "support.hpp"
#include "ttpmap/io.hpp"
#include "ttpmap/pipeline.hpp"

using namespace ttpmap;
using nlohmann::json;

namespace {

Config golden_config(const testing::TempDir& dir) {
  auto c = Config::load(testing::fixture("golden.toml"));
  c.set("paths.attck_bundle", testing::fixture("mini_attck_bundle.json").string());
  c.set("mock.script", testing::fixture("pipeline_mock.json").string());
  c.set("paths.run_dir", (dir / "run").string());
  c.set("paths.guideline_dir", (dir / "guidelines").string());
  return c;
}

// Shared prefix of every end-to-end test: rename and guidelines.
std::filesystem::path prepare(const Config& c) {
  CommandOptions opts;
  auto renamed = cmd_rename(c, testing::fixture("golden_binary.json"), opts);
  cmd_guidelines(c, opts);
  return renamed["output"].get<std::string>();
}

std::size_t tool_turns(const std::filesystem::path& transcripts) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(transcripts)) {
    auto doc = json::parse(read_file(e.path()));
    n += doc["tool_log"].size();
    for (const auto& m : doc["messages"]) {
      if (m["role"] == "user" && m["content"].get<std::string>().rfind("retrieve_", 0) == 0) ++n;
    }
  }
  return n;
}

struct Proc {
  int code;
  std::string out;
  std::string err;
};

Proc run_cli(const std::string& args, const testing::TempDir& dir) {
  auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  std::string cmd = std::string("\"") + TTPMAP_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
  int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
}

std::string golden_flags(const testing::TempDir& dir) {
  return "-c \"" + testing::fixture("golden.toml").string() + "\" --set paths.attck_bundle=" +
         testing::fixture("mini_attck_bundle.json").string() + " mock.script=" +
         testing::fixture("pipeline_mock.json").string() + " paths.run_dir=" + (dir / "run").string() +
         " paths.guideline_dir=" + (dir / "guidelines").string();
}

}  // namespace

TEST_CASE("ingest reports the graph shape of the golden fixture") {
  testing::TempDir dir;
  CommandOptions opts;
  opts.dot = dir / "graph.dot";
  auto s = cmd_ingest(golden_config(dir), testing::fixture("golden_binary.json"), opts);
  CHECK(s["functions"] == 17);
  CHECK(s["duplicates_removed"] == 1);
  CHECK(read_file(dir / "graph.dot").find("digraph") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "run/manifest.ingest.json"));
}

TEST_CASE("full mock pipeline on the golden fixture") {
  testing::TempDir dir;
  auto c = golden_config(dir);
  auto renamed = prepare(c);
  auto b = load_binary_export(renamed);
  for (const auto& f : b.functions) {
    if (!f.external) CHECK(f.recovered_name.has_value());
  }
  CHECK(b.find_by_id("f04")->recovered_name == "stage_collected_files");

  auto s = cmd_run(c, renamed, CommandOptions{});
  CHECK(s["analysis"]["pairs"] == 10);
  CHECK(s["analysis"]["errored"] == 0);
  CHECK(s["retrieval"]["counts"]["final"] == 10);

  auto report = json::parse(read_file(dir / "run/report.json"));
  std::set<std::string> predicted;
  for (const auto& t : report["predicted_ttps"]) predicted.insert(t["ttp"].get<std::string>());
  CHECK(predicted.count("T1074") == 1);
  CHECK(std::filesystem::exists(dir / "run/transcripts/f04__T1074.json"));

  auto manifest = json::parse(read_file(dir / "run/manifest.run.json"));
  CHECK(manifest["mode"] == "mock");
  CHECK(manifest["attck_version"] == "16.1");

  auto stats = cmd_stats(dir / "run/candidates.json");
  CHECK(stats["counts"]["dense"] == 99);
}

TEST_CASE("no_explorer ablation makes zero tool turns and loses the staging verdict") {
  testing::TempDir dir;
  auto c = golden_config(dir);
  auto renamed = prepare(c);
  CommandOptions opts;
  opts.ablation = "no_explorer";
  auto s = cmd_run(c, renamed, opts);
  CHECK(s["analysis"]["tool_calls"] == 0);
  CHECK(tool_turns(dir / "run/transcripts") == 0);
  auto report = json::parse(read_file(dir / "run/report.json"));
  for (const auto& t : report["predicted_ttps"]) CHECK(t["ttp"] != "T1074");
}

TEST_CASE("guidelines resume reuses the store; version skew is refused") {
  testing::TempDir dir;
  auto c = golden_config(dir);
  prepare(c);
  CommandOptions resume;
  resume.resume = true;
  auto s = cmd_guidelines(c, resume);
  CHECK(s["reused"] == 9);
  CHECK(s["gateway"]["chat_requests"] == 0);

  auto path = dir / "guidelines/T1057.guideline";
  auto doc = json::parse(read_file(path));
  doc["attck_version"] = "15.0";
  write_file_atomic(path, doc.dump(2) + "\n");
  CHECK_THROWS_AS(cmd_guidelines(c, resume), StageError);
  resume.allow_version_skew = true;
  CHECK(cmd_guidelines(c, resume)["reused"] == 9);
}

TEST_CASE("record then replay gives identical reports without network") {
  testing::TempDir dir;
  auto c = golden_config(dir);
  auto renamed = prepare(c);
  c.set("mode", "record");
  c.set("record_dir", (dir / "rec").string());
  cmd_run(c, renamed, CommandOptions{});
  auto recorded = read_file(dir / "run/report.json");

  c.set("mode", "replay");
  for (int i = 0; i < 2; ++i) {
    auto s = cmd_run(c, renamed, CommandOptions{});
    CHECK(s["gateway"]["network_attempts"] == 0);
    CHECK(s["gateway"]["backend_chat_calls"] == 0);
    CHECK(read_file(dir / "run/report.json") == recorded);
  }

  c.set("record_dir", (dir / "empty").string());
  std::filesystem::create_directories(dir / "empty");
  CHECK_THROWS_AS(cmd_run(c, renamed, CommandOptions{}), StageError);
}

TEST_CASE("eval scores reports against binary-level ground truth") {
  testing::TempDir dir;
  EvalInputs in;
  for (const auto& [id, r] : testing::case_study()) {
    json report{{"binary_id", id}, {"predicted_ttps", json::array()}};
    for (const auto& t : r.predicted) report["predicted_ttps"].push_back({{"ttp", t}, {"name", t}, {"functions", json::array()}});
    json truth{{"reported", r.reported}, {"validated", r.validated_true}};
    write_file_atomic(dir / (id + ".report.json"), report.dump());
    write_file_atomic(dir / (id + ".truth.json"), truth.dump());
    in.reports.push_back(dir / (id + ".report.json"));
    in.ground_truths.push_back(dir / (id + ".truth.json"));
  }
  auto s = cmd_eval(in);
  CHECK(s["overall"]["coverage_percent"] == 85.71);
  CHECK(s["overall"]["precision_percent"] == 90.0);
  CHECK(s["binaries"][0]["precision_percent"] == 93.33);
  CHECK(s["binaries"][1]["precision_percent"] == 86.67);

  in.ground_truths.pop_back();
  CHECK_THROWS(cmd_eval(in));
}

TEST_CASE("cli: help, bad flags and missing config keys") {
  testing::TempDir dir;
  auto help = run_cli("--help", dir);
  CHECK(help.code == 0);
  for (const char* sub : {"ingest", "rename", "guidelines", "retrieve", "analyze", "run", "eval", "stats"}) {
    CHECK(help.out.find(sub) != std::string::npos);
  }
  CHECK(run_cli("run --bogus", dir).code != 0);

  write_file_atomic(dir / "bad.toml", "mode = \"live\"\n");
  auto missing = run_cli("run -c \"" + (dir / "bad.toml").string() + "\" \"" +
                             testing::fixture("golden_binary.json").string() + "\"",
                         dir);
  CHECK(missing.code == 2);
  CHECK(missing.err.find("provider.endpoint") != std::string::npos);
}

TEST_CASE("cli: rename resume issues no model calls") {
  testing::TempDir dir;
  auto flags = golden_flags(dir);
  auto bin = "\"" + testing::fixture("golden_binary.json").string() + "\"";
  auto first = run_cli("rename " + flags + " " + bin, dir);
  REQUIRE(first.code == 0);
  CHECK(json::parse(first.out)["model_calls"] == 13);
  auto second = run_cli("rename " + flags + " --resume " + bin, dir);
  REQUIRE(second.code == 0);
  CHECK(json::parse(second.out)["model_calls"] == 0);
}
