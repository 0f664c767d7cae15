// Acceptance runner: one PASS/FAIL line per criterion, exit 1 on any failure.
// `--attck-bundle <path>` runs only the full-bundle ingestion check and exits
// 77 (skipped) when no bundle is available.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

#include <fmt/format.h>
#include <json.hpp>

#include "published_tables.hpp"
#include "support.hpp"
#include "ttpmap/analyzer.hpp"
#include "ttpmap/attck.hpp"
#include "ttpmap/callgraph.hpp"
#include "ttpmap/eval.hpp"
#include "ttpmap/guideline.hpp"
#include "ttpmap/ident.hpp"
#include "ttpmap/io.hpp"
#include "ttpmap/pipeline.hpp"
#include "ttpmap/renamer.hpp"
#include "ttpmap/retrieval.hpp"

using namespace ttpmap;
using nlohmann::json;

namespace {

constexpr double kMetricTolerance = 0.05;  // percentage points

struct Check {
  std::string detail;
  bool ok = true;
  void expect(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

bool report(const char* id, const char* title, double limit_s, const std::function<Check()>& body) {
  auto start = std::chrono::steady_clock::now();
  Check c;
  try {
    c = body();
  } catch (const std::exception& e) {
    c.ok = false;
    c.detail = std::string("exception: ") + e.what();
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (c.ok && secs >= limit_s) {
    c.ok = false;
    c.detail = fmt::format("took {:.3f} s, limit {} s", secs, limit_s);
  }
  std::string line = fmt::format("{} {} {} ({:.3f} s < {} s)", id, c.ok ? "PASS" : "FAIL", title, secs, limit_s);
  if (!c.ok) line += ": " + c.detail;
  std::puts(line.c_str());
  std::fflush(stdout);
  return c.ok;
}

bool near(double got, double want) { return std::abs(got - want) <= kMetricTolerance; }

const TtpCatalog& mini_catalog() {
  static const TtpCatalog cat = load_attck_bundle(testing::fixture("mini_attck_bundle.json"));
  return cat;
}

Check ac1_metrics() {
  Check c;
  auto bench = testing::synthetic_benchmark();
  auto rep = compute_metrics(bench.predictions, build_instances(bench.functions, bench.ttps, bench.labels));
  for (const auto& row : testing::published_rows()) {
    for (const auto& m : rep.per_ttp) {
      if (m.ttp_id != row.ttp) continue;
      c.expect(near(m.scores.precision, row.precision) && near(m.scores.recall, row.recall) && near(m.scores.f1, row.f1),
               fmt::format("{} gives {:.2f}/{:.2f}/{:.2f}", row.ttp, m.scores.precision, m.scores.recall, m.scores.f1));
    }
  }
  c.expect(rep.per_ttp.size() == 14, "expected 14 techniques");
  c.expect(near(rep.average.precision, 93.25) && near(rep.average.recall, 93.81) && near(rep.average.f1, 92.61),
           fmt::format("average {:.2f}/{:.2f}/{:.2f}", rep.average.precision, rep.average.recall, rep.average.f1));

  std::vector<Prf> published;
  for (const auto& row : testing::published_rows()) published.push_back({row.precision, row.recall, row.f1});
  auto avg = macro_average(published);
  c.expect(near(avg.precision, 93.25) && near(avg.recall, 93.81) && near(avg.f1, 92.61), "macro average of published rows");

  auto study = testing::case_study();
  auto a = binary_eval(study[0].second);
  auto b = binary_eval(study[1].second);
  c.expect(near(*a.precision * 100, 93.3) && near(*b.precision * 100, 86.7), "per-sample precision");
  std::size_t reported = 0, predicted = 0, validated = 0, covered = 0;
  for (const auto& [id, r] : study) {
    reported += r.reported.size();
    predicted += r.predicted.size();
    validated += r.validated_true.size();
  }
  covered = a.covered + b.covered;
  c.expect(near(100.0 * covered / reported, 85.7), "overall coverage");
  c.expect(near(100.0 * validated / predicted, 90.0), "overall precision");

  BinaryEvalResult fig;
  for (int i = 0; i < 95; ++i) fig.reported.insert("T" + std::to_string(3000 + i));
  for (int i = 0; i < 83; ++i) fig.predicted.insert("T" + std::to_string(3000 + i));
  c.expect(near(*binary_eval(fig).coverage * 100, 87.37), "83/95");
  return c;
}

Check ac2_dense() {
  Check c;
  std::mt19937_64 rng(20240716);
  for (int trial = 0; trial < 100 && c.ok; ++trial) {
    std::size_t nf = 1 + rng() % 200, nt = 1 + rng() % 20, dim = 32;
    std::size_t k = std::vector<std::size_t>{1, 5, 20}[rng() % 3];
    std::vector<std::pair<std::string, std::vector<double>>> funcs, ttps;
    EmbeddingSet fs, ts;
    for (std::size_t i = 0; i < nf; ++i) {
      auto v = (i > 0 && rng() % 5 == 0) ? funcs[rng() % funcs.size()].second : testing::random_unit(rng, dim);
      funcs.emplace_back(fmt::format("fn_{:05}_{}", rng() % 100000, i), v);
      fs.add(funcs.back().first, v);
    }
    for (std::size_t t = 0; t < nt; ++t) {
      ttps.emplace_back("T" + std::to_string(1000 + t), testing::random_unit(rng, dim));
      ts.add(ttps.back().first, ttps.back().second);
    }
    auto want = testing::brute_force_topk(ttps, funcs, k);
    auto got = dense_retrieve(ts, fs, k);
    for (const auto& [t, list] : want) {
      const auto& g = got.at(t);
      bool same = g.size() == list.size();
      for (std::size_t i = 0; same && i < list.size(); ++i) {
        same = g[i].func_id == list[i].first && g[i].score == list[i].second;
      }
      c.expect(same, fmt::format("trial {} technique {} differs from the brute-force order", trial, t));
    }
  }
  return c;
}

Check ac3_gating() {
  Check c;
  std::mt19937_64 rng(3);
  const std::vector<double> levels = {0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0};
  std::size_t boundary_cases = 0;
  for (int trial = 0; trial < 500 && c.ok; ++trial) {
    std::size_t nf = 1 + rng() % 10, nt = 1 + rng() % 10;
    RetrievalConfig cfg{1 + rng() % nf, 0.5};
    DenseResult dense;
    NeuralMap neural;
    for (std::size_t t = 0; t < nt; ++t) {
      std::vector<std::size_t> perm(nf);
      for (std::size_t i = 0; i < nf; ++i) perm[i] = i;
      std::shuffle(perm.begin(), perm.end(), rng);
      auto& list = dense["T" + std::to_string(1000 + t)];
      for (std::size_t r = 0; r < nf; ++r) list.push_back({"f" + std::to_string(perm[r]), 1.0 - 0.05 * r});
    }
    for (std::size_t f = 0; f < nf; ++f) {
      for (std::size_t t = 0; t < nt; ++t) {
        if (rng() % 2 == 0) continue;
        double conf = levels[rng() % levels.size()];
        boundary_cases += conf == cfg.tau;
        neural["f" + std::to_string(f)].push_back({"T" + std::to_string(1000 + t), "", conf});
      }
    }
    std::set<std::pair<std::string, std::string>> want, have;
    for (const auto& [t, list] : dense) {
      for (std::size_t r = 0; r < cfg.k; ++r) {
        for (const auto& p : neural[list[r].func_id]) {
          if (p.ttp_id == t && p.confidence > cfg.tau) want.insert({list[r].func_id, t});
        }
      }
    }
    for (const auto& p : gate_candidates(dense, neural, cfg).pairs) have.insert({p.func_id, p.ttp_id});
    c.expect(have == want, fmt::format("trial {}: gate differs from the conjunction", trial));
  }
  c.expect(boundary_cases > 0, "no conf = tau boundary cases were generated");
  return c;
}

Check ac4_ordering() {
  Check c;
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200 && c.ok; ++trial) {
    std::size_t n = 1 + rng() % 50;
    std::vector<std::string> nodes;
    std::vector<std::uint64_t> addrs;
    for (std::size_t i = 0; i < n; ++i) {
      nodes.push_back("n" + std::to_string(i));
      addrs.push_back(0x400000 + 0x10 * ((i * 7 + trial) % n));
    }
    std::set<std::pair<std::size_t, std::size_t>> edges;
    double density = std::uniform_real_distribution<double>(0.0, 0.12)(rng);
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t v = 0; v < n; ++v)
        if (std::uniform_real_distribution<double>(0, 1)(rng) < density) edges.emplace(u, v);
    CallGraph g(nodes, addrs, edges);
    auto order = condense_and_order(g);
    for (auto [u, v] : edges) {
      auto cu = order.component_of[u], cv = order.component_of[v];
      c.expect(cu == cv || cv < cu, fmt::format("trial {}: edge {}->{} points forward", trial, u, v));
    }
    // components are exactly the mutual-reachability classes
    std::vector<std::vector<bool>> r(n, std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i) r[i][i] = true;
    for (auto [u, v] : edges) r[u][v] = true;
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i)
        if (r[i][k])
          for (std::size_t j = 0; j < n; ++j)
            if (r[k][j]) r[i][j] = true;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        c.expect((order.component_of[i] == order.component_of[j]) == (r[i][j] && r[j][i]),
                 fmt::format("trial {}: nodes {} and {} grouped wrongly", trial, i, j));
    auto again = condense_and_order(CallGraph(nodes, addrs, edges));
    c.expect(again.components == order.components && again.level == order.level, "order is not deterministic");
  }
  return c;
}

std::size_t rename_calls(const Binary& b, std::vector<ChatRequest>* log = nullptr) {
  auto mock = testing::echo_renamer();
  auto gw = testing::mock_gateway(mock);
  auto graph = build_call_graph(b);
  auto order = condense_and_order(graph);
  rename_binary(b, graph, order, *gw);
  if (log) *log = mock->requests();
  return mock->total_calls();
}

Check ac5_renamer() {
  Check c;
  std::vector<testing::Fn> chain;
  for (int i = 0; i < 10; ++i) {
    std::string name = "sub_" + std::to_string(i);
    std::string body = i + 1 < 10 ? "sub_" + std::to_string(i + 1) + "();" : "return 0;";
    chain.push_back({"f" + std::to_string(i), static_cast<std::uint64_t>(0x1000 + i), name,
                     "int " + name + "() { " + body + " }"});
  }
  auto n = rename_calls(testing::make_binary(chain));
  c.expect(n == 10, fmt::format("acyclic n=10 took {} calls", n));

  auto cyc = testing::make_binary({{"b", 0x200, "sub_200", "int sub_200() { sub_300(); }"},
                                   {"c", 0x300, "sub_300", "int sub_300() { sub_200(); sub_400(); }"},
                                   {"d", 0x400, "sub_400", "int sub_400() { return 0; }"}});
  std::vector<ChatRequest> log;
  n = rename_calls(cyc, &log);
  c.expect(n == 5, fmt::format("2-cycle + leaf took {} calls", n));
  if (log.size() == 5) {
    const std::string pending = "summary pending for ";
    c.expect(log[1].last_message().find(pending + "sub_300") != std::string::npos, "pass 1 of b lacks a placeholder");
    c.expect(log[2].last_message().find(pending + "sub_200") != std::string::npos, "pass 1 of c lacks a placeholder");
    c.expect(log[3].last_message().find(pending) == std::string::npos, "revisit of b still sees a placeholder");
    c.expect(log[4].last_message().find(pending) == std::string::npos, "revisit of c still sees a placeholder");
    c.expect(log[3].last_message().find("- n_sub_300: body of sub_300") != std::string::npos,
             "revisit of b lacks c's summary");
  }
  return c;
}

Check ac6_guideline() {
  Check c;
  auto mock = std::make_shared<ScriptedMock>();
  auto classify = [&](const char* ttp, const char* label) {
    ScriptedMock::Rule r;
    r.contains = {"Classify the attribution logic", std::string("Technique: ") + ttp + " "};
    r.responses = {std::string("CLASSIFICATION: ") + label};
    mock->add(std::move(r));
  };
  classify("T1057", "behavior_focused");
  classify("T1074", "intent_critical");
  classify("T1070", "intent_critical");
  mock->on("Task: Synthesize representative positive examples",
           "POSITIVE: clears the Security event log with wevtutil\n"
           "POSITIVE: deletes its own dropper after execution\n"
           "NEGATIVE: a backup tool prunes old archives\n"
           "NEGATIVE: stops the logging service before acting\n");
  mock->on("Task: Consolidate everything above",
           "REQUIRED: removes or alters artifacts that record adversary activity\n"
           "POSITIVE_INDICATOR: targets event logs, shell history or its own files\n"
           "NEGATIVE_INDICATOR: routine cleanup by a legitimate program\n"
           "DIFFERENTIATION: disabling logging before it records anything is T1562\n");
  auto gw = testing::mock_gateway(mock);
  auto g = synthesize_guideline(mini_catalog().at("T1070"), *gw);
  validate_guideline(g);
  bool names_t1562 = false;
  for (const auto& d : g.differentiation_criteria) names_t1562 |= d.find("T1562") != std::string::npos;
  c.expect(names_t1562, "differentiation criteria do not mention T1562");

  testing::TempDir dir;
  GuidelineStore store(dir.path());
  store.save(g);
  auto bytes = read_file(store.path_for("T1070"));
  auto back = store.load("T1070", "16.1");
  c.expect(back == g, "reloaded guideline differs");
  c.expect(serialize_guideline(back) == bytes, "reloaded guideline does not serialize byte-identically");

  c.expect(classify_ttp(mini_catalog().at("T1057"), *gw) == TtpClass::BehaviorFocused, "T1057 not behavior_focused");
  c.expect(classify_ttp(mini_catalog().at("T1074"), *gw) == TtpClass::IntentCritical, "T1074 not intent_critical");
  return c;
}

Check ac7_agent() {
  Check c;
  using Scope = ScriptedMock::Scope;
  auto b = testing::make_binary({{"s", 0x100, "sub_100", "int sub_100() { CopyFileA(1); }"},
                                 {"m", 0x200, "sub_200", "int sub_200() { sub_100(); send(1); }"},
                                 {"x1", 0x900, "CopyFileA", "", true},
                                 {"x2", 0x908, "send", "", true}});
  b.functions[0].recovered_name = "stage_files";
  b.functions[1].recovered_name = "exfil_staged";
  auto graph = build_call_graph(b);
  FunctionIndex index(b);
  CandidatePair pair{"s", "T1074", 1, 0.9, 0.9, "r"};
  const TtpRecord* ttp = mini_catalog().find("T1074");

  for (std::size_t budget = 0; budget <= 8; ++budget) {
    auto loop = std::make_shared<ScriptedMock>();
    loop->on("Target technique", "TOOL: retrieve_function exfil_staged");
    auto gw = testing::mock_gateway(loop);
    AnalyzerConfig cfg;
    cfg.budget.max_tool_calls = budget;
    auto a = explore_and_decide(pair, index, graph, ttp, nullptr, *gw, cfg);
    c.expect(a.model_turns <= budget + 2, fmt::format("budget {} took {} turns", budget, a.model_turns));
  }

  auto script = [] {
    auto m = std::make_shared<ScriptedMock>();
    m->on("Decide now", "VERDICT: ABSENT\nEVIDENCE: copies files; purpose unclear", Scope::LastMessage);
    m->on("retrieve_caller: callers of stage_files", "TOOL: retrieve_function exfil_staged", Scope::LastMessage);
    m->on("Function exfil_staged (address", "VERDICT: PRESENT\nEVIDENCE: the caller sends the staged copy out",
          Scope::LastMessage);
    m->on("Target technique", "TOOL: retrieve_caller stage_files");
    return m;
  };
  AnalyzerConfig zero, ablated, full;
  zero.budget.max_tool_calls = 0;
  ablated.no_explorer = true;
  auto gw0 = testing::mock_gateway(script());
  auto gwa = testing::mock_gateway(script());
  auto gwf = testing::mock_gateway(script());
  auto a0 = explore_and_decide(pair, index, graph, ttp, nullptr, *gw0, zero);
  auto aa = explore_and_decide(pair, index, graph, ttp, nullptr, *gwa, ablated);
  auto af = explore_and_decide(pair, index, graph, ttp, nullptr, *gwf, full);
  c.expect(a0.transcript == aa.transcript && a0.verdict == aa.verdict, "budget 0 differs from no_explorer");
  c.expect(aa.bundle.tool_log.empty(), "no_explorer made tool calls");
  for (const auto& m : aa.transcript) {
    c.expect(!(m.role == "user" && m.content.rfind("retrieve_", 0) == 0), "no_explorer transcript has tool output");
  }
  c.expect(!aa.verdict.present, "no_explorer verdict should be ABSENT");
  c.expect(af.verdict.present, "explorer verdict should be PRESENT");
  c.expect(!af.bundle.retrieved.empty() && af.bundle.retrieved[0].role == ContextRole::Caller,
           "explorer did not fetch the caller");
  return c;
}

Config golden_config(const testing::TempDir& dir, const std::string& sub) {
  auto c = Config::load(testing::fixture("golden.toml"));
  c.set("paths.attck_bundle", testing::fixture("mini_attck_bundle.json").string());
  c.set("mock.script", testing::fixture("pipeline_mock.json").string());
  c.set("paths.run_dir", (dir / (sub + "/run")).string());
  c.set("paths.guideline_dir", (dir / (sub + "/guidelines")).string());
  c.set("record_dir", (dir / "record").string());
  return c;
}

Check ac8_replay() {
  Check c;
  testing::TempDir dir;
  auto run_all = [&](const std::string& sub, const std::string& mode) {
    auto cfg = golden_config(dir, sub);
    cfg.set("mode", mode);
    auto renamed = cmd_rename(cfg, testing::fixture("golden_binary.json"), CommandOptions{});
    cmd_guidelines(cfg, CommandOptions{});
    auto s = cmd_run(cfg, renamed["output"].get<std::string>(), CommandOptions{});
    if (mode == "replay") {
      c.expect(renamed["gateway"]["network_attempts"] == 0 && s["gateway"]["network_attempts"] == 0,
               "replay attempted network access");
      c.expect(s["gateway"]["backend_chat_calls"] == 0, "replay reached a chat backend");
    }
    return read_file(dir / (sub + "/run/report.json"));
  };
  run_all("rec", "record");
  auto first = run_all("r1", "replay");
  auto second = run_all("r2", "replay");
  c.expect(first == second, "replayed reports differ");
  auto doc = json::parse(first);
  c.expect(!doc["predicted_ttps"].empty(), "replayed report predicts nothing");
  auto b = load_binary_export(testing::fixture("golden_binary.json"));
  std::size_t externals = 0;
  for (const auto& f : b.functions) externals += f.external;
  auto order = condense_and_order(build_call_graph(dedup_functions(b)));
  std::size_t cycles = 0;
  for (bool cy : order.cyclic) cycles += cy;
  c.expect(b.functions.size() >= 10 && externals >= 1 && cycles >= 1, "golden fixture shape");
  return c;
}

Check ac9_reduction() {
  Check c;
  auto r4 = [](double v) { return std::round(v * 10000.0) / 10000.0; };
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    StageCounts s;
    s.dense = 1 + rng() % 100000;
    s.neural = rng() % (s.dense + 1);
    s.neural_scored = rng() % (s.neural + 1);
    s.final = rng() % (s.neural_scored + 1);
    auto r = reduction_stats(s);
    double dn = static_cast<double>(s.dense);
    c.expect(r4(r.at("neural")) == r4((dn - s.neural) / dn) && r4(r.at("neural_w_score")) == r4((dn - s.neural_scored) / dn) &&
                 r4(r.at("full")) == r4((dn - s.final) / dn),
             fmt::format("trial {}: fractions differ", trial));
    c.expect(r.at("neural") <= r.at("neural_w_score") && r.at("neural_w_score") <= r.at("full"),
             fmt::format("trial {}: not monotone", trial));
  }
  StageCounts published{10000, 5635, 3434, 0, 1411};
  auto r = reduction_stats(published);
  c.expect(round_to(r.at("neural") * 100, 2) == 43.65, "neural reduction");
  c.expect(round_to(r.at("neural_w_score") * 100, 2) == 65.66, "scored reduction");
  c.expect(round_to(r.at("full") * 100, 2) == 85.89, "full reduction");
  return c;
}

int run_bundle_check(const std::string& path) {
  if (path.empty() || !std::filesystem::exists(path)) {
    std::puts("AC10 SKIP ATT&CK v16.1 bundle ingestion: no bundle given (pass --attck-bundle <path>)");
    return 77;
  }
  bool ok = report("AC10", "ATT&CK bundle ingestion yields 203 parent techniques", 30.0, [&] {
    Check c;
    BundleStats stats;
    auto cat = load_attck_bundle(path, &stats);
    c.expect(cat.size() == 203, fmt::format("{} parent techniques", cat.size()));
    for (const auto& t : cat.techniques()) {
      c.expect(is_technique_id(t.ttp_id) && t.ttp_id.find('.') == std::string::npos, "bad id " + t.ttp_id);
    }
    c.expect(stats.excluded_revoked + stats.excluded_deprecated > 0, "no revoked or deprecated objects seen");
    return c;
  });
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--attck-bundle") return run_bundle_check(i + 1 < argc ? argv[i + 1] : "");
  }
  bool ok = true;
  ok &= report("AC1", "metric arithmetic matches the published tables", 1.0, ac1_metrics);
  ok &= report("AC2", "dense retrieval equals brute-force full sort", 5.0, ac2_dense);
  ok &= report("AC3", "gating equals top-k AND conf > tau", 2.0, ac3_gating);
  ok &= report("AC4", "bottom-up order respects every cross-component edge", 2.0, ac4_ordering);
  ok &= report("AC5", "renamer call-count law and placeholder revisit", 1.0, ac5_renamer);
  ok &= report("AC6", "guideline synthesis, persistence and classification", 1.0, ac6_guideline);
  ok &= report("AC7", "agent loop bound, zero-budget ablation and explorer flip", 2.0, ac7_agent);
  ok &= report("AC8", "replayed golden run is byte-identical with no network", 10.0, ac8_replay);
  ok &= report("AC9", "reduction statistics", 1.0, ac9_reduction);
  std::puts("AC10 see the acceptance_attck_bundle test (needs the full v16.1 bundle)");
  return ok ? 0 : 1;
}
