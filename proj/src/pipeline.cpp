#include "ttpmap/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <set>

#include <fmt/format.h>

#include "ttpmap/analyzer.hpp"
#include "ttpmap/attck.hpp"
#include "ttpmap/binary.hpp"
#include "ttpmap/callgraph.hpp"
#include "ttpmap/eval.hpp"
#include "ttpmap/guideline.hpp"
#include "ttpmap/hash.hpp"
#include "ttpmap/http_backend.hpp"
#include "ttpmap/ident.hpp"
#include "ttpmap/io.hpp"
#include "ttpmap/renamer.hpp"
#include "ttpmap/retrieval.hpp"

namespace ttpmap {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw StageError(name, e.what());
  }
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Prepared {
  Config config;
  RunConfig rc;
};

Prepared prepare(const Config& config, const CommandOptions& opts, bool needs_run_dir = true) {
  return stage("config", [&] {
    Config c = config;
    if (opts.ablation) {
      if (*opts.ablation == "no_explorer") c.set("analyzer.no_explorer", "true");
      else if (*opts.ablation == "no_guideline") c.set("analyzer.no_guideline", "true");
      else throw ConfigError(fmt::format("unknown ablation '{}' (expected no_explorer or no_guideline)", *opts.ablation));
    }
    RunConfig rc = to_run_config(c);
    if (needs_run_dir) c.require("paths.run_dir");
    return Prepared{std::move(c), std::move(rc)};
  });
}

void write_manifest(const Prepared& p, const CommandOptions& opts, const std::string& command,
                    const std::vector<fs::path>& inputs, const std::string& attck_version = {}) {
  Summary m;
  m["command"] = command;
  m["tool_version"] = kToolVersion;
  m["started_at"] = utc_now();
  m["config_path"] = opts.config_path.string();
  m["config"] = p.config.dump();
  m["models"] = {{"chat", p.rc.gateway.model}, {"embedding", p.rc.gateway.embedding_model}};
  m["mode"] = std::string(to_string(p.rc.gateway.mode));
  if (!attck_version.empty()) m["attck_version"] = attck_version;
  Summary in = Summary::object();
  for (const auto& path : inputs) in[path.string()] = sha256_hex(read_file(path));
  m["inputs"] = std::move(in);
  m["options"] = {{"resume", opts.resume},
                  {"allow_version_skew", opts.allow_version_skew},
                  {"ablation", opts.ablation ? json(*opts.ablation) : json(nullptr)},
                  {"ttps", opts.ttps}};
  write_file_atomic(p.rc.run_dir / fmt::format("manifest.{}.json", command), m.dump(2) + "\n");
}

Summary gateway_summary(const GatewayHandle& h) {
  auto s = h.gateway->stats();
  Summary out{{"chat_requests", s.chat_requests},
              {"backend_chat_calls", s.backend_chat_calls},
              {"embed_texts", s.embed_texts},
              {"backend_embed_texts", s.backend_embed_texts},
              {"replay_hits", s.replay_hits}};
  if (h.guard) out["network_attempts"] = h.guard->attempts();
  return out;
}

void finish(Summary& summary, const Prepared& p, const std::string& command, const Stopwatch& clock) {
  summary["seconds"] = clock.seconds();
  write_file_atomic(p.rc.run_dir / fmt::format("summary.{}.json", command), summary.dump(2) + "\n");
}

TtpCatalog load_catalog(const RunConfig& rc, const std::vector<std::string>& only, BundleStats* stats = nullptr) {
  return stage("attck", [&] {
    if (rc.attck_bundle.empty()) throw ConfigError("missing config key 'paths.attck_bundle'");
    auto full = load_attck_bundle(rc.attck_bundle, stats);
    if (only.empty()) return full;
    std::vector<TtpRecord> picked;
    for (const auto& id : only) {
      picked.push_back(full.at(parent_technique(id)));
    }
    return TtpCatalog(std::move(picked), full.attck_version());
  });
}

Binary load_renamed(const fs::path& path) {
  return stage("ingest", [&] { return load_binary_export(path); });
}

}  // namespace

GatewayHandle make_gateway(const RunConfig& rc) {
  GatewayHandle h;
  std::shared_ptr<ChatBackend> chat;
  std::shared_ptr<EmbeddingBackend> embed;
  const auto mode = rc.gateway.mode;

  if (mode == BackendMode::Replay) {
    h.guard = std::make_shared<NoNetworkBackend>();
    chat = h.guard;
    embed = h.guard;
  } else {
    if (rc.mock_script && (mode == BackendMode::Mock || mode == BackendMode::Record)) {
      h.mock = ScriptedMock::from_file(*rc.mock_script);
      chat = h.mock;
    }
    const auto& em = rc.gateway.embedding_model;
    if (em == "mock-hash") embed = std::make_shared<HashEmbeddingBackend>();
    else if (em == "mock-bow") embed = std::make_shared<TokenHashEmbeddingBackend>();

    if (!chat || !embed) {
      if (mode == BackendMode::Mock) {
        if (!embed) throw ConfigError(fmt::format("mock mode needs a mock embedding model, got '{}'", em));
      } else {
        std::string key;
        if (!rc.api_key_env.empty()) {
          const char* v = std::getenv(rc.api_key_env.c_str());
          if (!v) throw ConfigError(fmt::format("environment variable {} is not set", rc.api_key_env));
          key = v;
        }
        auto http = std::make_shared<HttpBackend>(rc.endpoint, key);
        if (!chat) chat = http;
        if (!embed) embed = http;
      }
    }
  }
  h.gateway = std::make_shared<Gateway>(rc.gateway, chat, embed);
  return h;
}

Summary cmd_ingest(const Config& config, const fs::path& export_path, const CommandOptions& opts) {
  Stopwatch clock;
  auto p = prepare(config, opts);
  Summary s;
  s["command"] = "ingest";
  auto raw = stage("ingest", [&] { return load_binary_export(export_path); });
  auto binary = stage("ingest", [&] { return dedup_functions(raw); });
  auto graph = stage("callgraph", [&] { return build_call_graph(binary); });
  auto order = stage("callgraph", [&] { return condense_and_order(graph); });

  auto out = opts.output.value_or(p.rc.run_dir / "ingested.json");
  stage("ingest", [&] {
    write_binary_export(binary, out);
    if (opts.dot) write_file_atomic(*opts.dot, condensation_dot(graph, order));
    write_manifest(p, opts, "ingest", {export_path});
  });
  std::size_t cyclic = 0;
  for (bool c : order.cyclic) cyclic += c ? 1 : 0;
  s["binary_id"] = binary.binary_id;
  s["functions"] = binary.functions.size();
  s["duplicates_removed"] = raw.functions.size() - binary.functions.size();
  s["edges"] = graph.edges().size();
  s["unresolved_callees"] = graph.unresolved_count();
  s["components"] = order.components.size();
  s["cyclic_components"] = cyclic;
  s["output"] = out.string();
  finish(s, p, "ingest", clock);
  return s;
}

Summary cmd_rename(const Config& config, const fs::path& export_path, const CommandOptions& opts) {
  Stopwatch clock;
  auto p = prepare(config, opts);
  auto handle = stage("gateway", [&] { return make_gateway(p.rc); });
  auto binary = stage("ingest", [&] { return dedup_functions(load_binary_export(export_path)); });
  auto graph = stage("callgraph", [&] { return build_call_graph(binary); });
  auto order = stage("callgraph", [&] { return condense_and_order(graph); });

  RenameOptions ro;
  ro.checkpoint_path = p.rc.run_dir / "rename.checkpoint.json";
  ro.parallelism = p.rc.parallelism;
  if (!opts.resume) {
    std::error_code ec;
    fs::remove(*ro.checkpoint_path, ec);
  }
  auto outcome = stage("rename", [&] { return rename_binary(binary, graph, order, *handle.gateway, ro); });
  auto renamed = stage("rename", [&] { return rewrite_identifiers(outcome.binary); });

  auto out = opts.output.value_or(p.rc.run_dir / "renamed.json");
  stage("rename", [&] {
    write_binary_export(renamed, out);
    if (opts.dot) write_file_atomic(*opts.dot, condensation_dot(graph, order));
    write_manifest(p, opts, "rename", {export_path});
  });

  std::size_t fallbacks = 0;
  for (const auto& [id, r] : outcome.state.completed) fallbacks += r.fallback ? 1 : 0;
  std::size_t cyclic = 0;
  for (bool c : order.cyclic) cyclic += c ? 1 : 0;
  Summary s;
  s["command"] = "rename";
  s["binary_id"] = renamed.binary_id;
  s["functions"] = renamed.functions.size();
  s["components"] = order.components.size();
  s["cyclic_components"] = cyclic;
  s["model_calls"] = outcome.model_calls;
  s["fallback_names"] = fallbacks;
  s["output"] = out.string();
  s["gateway"] = gateway_summary(handle);
  finish(s, p, "rename", clock);
  return s;
}

Summary cmd_guidelines(const Config& config, const CommandOptions& opts) {
  Stopwatch clock;
  auto p = prepare(config, opts);
  stage("config", [&] { return config.require("paths.guideline_dir"); });
  auto handle = stage("gateway", [&] { return make_gateway(p.rc); });
  BundleStats bstats;
  auto catalog = load_catalog(p.rc, opts.ttps, &bstats);
  GuidelineStore store(p.rc.guideline_dir);
  SynthesisOptions so;
  so.procedure_example_limit = p.rc.procedure_example_limit;

  std::size_t written = 0, skipped = 0;
  std::map<std::string, std::size_t> classes;
  std::vector<std::string> warnings;
  for (const auto& t : catalog.techniques()) {
    if (opts.resume && store.contains(t.ttp_id)) {
      auto g = stage("guidelines", [&] {
        return store.load(t.ttp_id, catalog.attck_version(), opts.allow_version_skew, &warnings);
      });
      ++classes[std::string(to_string(g.classification))];
      ++skipped;
      continue;
    }
    auto g = stage("guidelines", [&] { return synthesize_guideline(t, *handle.gateway, so); });
    stage("guidelines", [&] { store.save(g); });
    ++classes[std::string(to_string(g.classification))];
    ++written;
  }
  stage("guidelines", [&] { write_manifest(p, opts, "guidelines", {p.rc.attck_bundle}, catalog.attck_version()); });

  Summary s;
  s["command"] = "guidelines";
  s["attck_version"] = catalog.attck_version();
  s["techniques"] = catalog.size();
  s["excluded_revoked"] = bstats.excluded_revoked;
  s["excluded_deprecated"] = bstats.excluded_deprecated;
  s["written"] = written;
  s["reused"] = skipped;
  s["classifications"] = classes;
  s["warnings"] = warnings;
  s["gateway"] = gateway_summary(handle);
  finish(s, p, "guidelines", clock);
  return s;
}

namespace {

Summary counts_json(const StageCounts& c) {
  return {{"dense", c.dense},
          {"neural", c.neural},
          {"neural_scored", c.neural_scored},
          {"dense_and_neural", c.dense_and_neural},
          {"final", c.final}};
}

Summary reductions_json(const StageCounts& c) {
  if (c.dense == 0) return nullptr;
  Summary out;
  for (const auto& [k, v] : reduction_stats(c)) out[k] = round_to(v * 100.0, 2);
  return out;
}

struct RetrieveStep {
  CandidateSet candidates;
  Summary summary;
};

RetrieveStep do_retrieve(const Prepared& p, const Binary& binary, const TtpCatalog& catalog, Gateway& gateway) {
  auto outcome = stage("retrieve", [&] {
    return retrieve_candidates(binary, catalog, gateway, p.rc.retrieval, p.rc.parallelism);
  });
  stage("retrieve", [&] { write_file_atomic(p.rc.run_dir / "candidates.json", serialize_candidates(outcome.candidates)); });
  Summary s;
  s["techniques"] = catalog.size();
  s["k"] = p.rc.retrieval.k;
  s["tau"] = p.rc.retrieval.tau;
  s["neural_calls"] = outcome.neural_calls;
  s["counts"] = counts_json(outcome.candidates.counts);
  s["reduction_percent"] = reductions_json(outcome.candidates.counts);
  s["warnings"] = outcome.warnings;
  return {std::move(outcome.candidates), std::move(s)};
}

Summary do_analyze(const Prepared& p, const CommandOptions& opts, const Binary& binary, const TtpCatalog& catalog,
                   const CandidateSet& candidates, Gateway& gateway) {
  auto graph = stage("callgraph", [&] { return build_call_graph(binary); });
  std::map<std::string, ReasoningGuideline> guidelines;
  std::vector<std::string> warnings;
  std::size_t missing = 0;
  if (!p.rc.analyzer.no_guideline) {
    stage("guidelines", [&] {
      if (p.rc.guideline_dir.empty()) throw ConfigError("missing config key 'paths.guideline_dir'");
      GuidelineStore store(p.rc.guideline_dir);
      std::set<std::string> ttps;
      for (const auto& c : candidates.pairs) ttps.insert(c.ttp_id);
      for (const auto& t : ttps) {
        if (!store.contains(t)) {
          ++missing;
          continue;
        }
        guidelines.emplace(t, store.load(t, catalog.attck_version(), opts.allow_version_skew, &warnings));
      }
    });
  }
  auto report = stage("analyze", [&] {
    return analyze_binary(candidates, binary, graph, catalog, guidelines, gateway, p.rc.analyzer);
  });
  stage("analyze", [&] {
    write_file_atomic(p.rc.run_dir / "report.json", report_json(report, catalog));
    write_file_atomic(p.rc.run_dir / "report.txt", report_text(report, catalog));
    write_transcripts(report, p.rc.run_dir);
  });
  std::size_t tool_turns = 0, model_turns = 0, positives = 0;
  for (const auto& pa : report.pairs) {
    tool_turns += pa.bundle.tool_log.size();
    model_turns += pa.model_turns;
    positives += pa.verdict.present ? 1 : 0;
  }
  Summary s;
  s["pairs"] = report.pairs.size();
  s["positive_verdicts"] = positives;
  s["predicted_ttps"] = report.predicted.size();
  s["errored"] = report.errored;
  s["flagged"] = report.flagged;
  s["tool_calls"] = tool_turns;
  s["model_turns"] = model_turns;
  s["missing_guidelines"] = missing;
  s["no_explorer"] = p.rc.analyzer.no_explorer;
  s["no_guideline"] = p.rc.analyzer.no_guideline;
  s["warnings"] = warnings;
  return s;
}

}  // namespace

Summary cmd_retrieve(const Config& config, const fs::path& renamed_export, const CommandOptions& opts) {
  Stopwatch clock;
  auto p = prepare(config, opts);
  auto handle = stage("gateway", [&] { return make_gateway(p.rc); });
  auto binary = load_renamed(renamed_export);
  auto catalog = load_catalog(p.rc, opts.ttps);
  auto step = do_retrieve(p, binary, catalog, *handle.gateway);
  stage("retrieve", [&] {
    write_manifest(p, opts, "retrieve", {renamed_export, p.rc.attck_bundle}, catalog.attck_version());
  });
  Summary s;
  s["command"] = "retrieve";
  s["binary_id"] = binary.binary_id;
  s["retrieval"] = std::move(step.summary);
  s["gateway"] = gateway_summary(handle);
  finish(s, p, "retrieve", clock);
  return s;
}

Summary cmd_analyze(const Config& config, const fs::path& renamed_export, const fs::path& candidates_path,
                    const CommandOptions& opts) {
  Stopwatch clock;
  auto p = prepare(config, opts);
  auto handle = stage("gateway", [&] { return make_gateway(p.rc); });
  auto binary = load_renamed(renamed_export);
  auto catalog = load_catalog(p.rc, opts.ttps);
  auto candidates = stage("analyze", [&] { return parse_candidates(read_file(candidates_path)); });
  auto analysis = do_analyze(p, opts, binary, catalog, candidates, *handle.gateway);
  stage("analyze", [&] {
    write_manifest(p, opts, "analyze", {renamed_export, candidates_path, p.rc.attck_bundle}, catalog.attck_version());
  });
  Summary s;
  s["command"] = "analyze";
  s["binary_id"] = binary.binary_id;
  s["analysis"] = std::move(analysis);
  s["gateway"] = gateway_summary(handle);
  finish(s, p, "analyze", clock);
  return s;
}

Summary cmd_run(const Config& config, const fs::path& renamed_export, const CommandOptions& opts) {
  Stopwatch clock;
  auto p = prepare(config, opts);
  auto handle = stage("gateway", [&] { return make_gateway(p.rc); });
  auto binary = load_renamed(renamed_export);
  auto catalog = load_catalog(p.rc, opts.ttps);
  Stopwatch retrieve_clock;
  auto step = do_retrieve(p, binary, catalog, *handle.gateway);
  double retrieve_seconds = retrieve_clock.seconds();
  Stopwatch analyze_clock;
  auto analysis = do_analyze(p, opts, binary, catalog, step.candidates, *handle.gateway);
  double analyze_seconds = analyze_clock.seconds();
  stage("run", [&] { write_manifest(p, opts, "run", {renamed_export, p.rc.attck_bundle}, catalog.attck_version()); });
  Summary s;
  s["command"] = "run";
  s["binary_id"] = binary.binary_id;
  s["retrieval"] = std::move(step.summary);
  s["analysis"] = std::move(analysis);
  s["timings"] = {{"retrieve_seconds", retrieve_seconds}, {"analyze_seconds", analyze_seconds}};
  s["gateway"] = gateway_summary(handle);
  finish(s, p, "run", clock);
  return s;
}

namespace {

struct ReportView {
  std::string binary_id;
  std::set<std::string> predicted;
  std::set<PairKey> positive_pairs;
};

ReportView read_report(const fs::path& path) {
  auto doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ParseError(fmt::format("{}: not an analysis report", path.string()));
  ReportView v;
  v.binary_id = doc.value("binary_id", "");
  try {
    for (const auto& t : doc.at("predicted_ttps")) v.predicted.insert(t.at("ttp").get<std::string>());
    for (const auto& pr : doc.value("pairs", json::array())) {
      if (pr.at("present").get<bool>()) {
        v.positive_pairs.emplace(pr.at("function").get<std::string>(), pr.at("ttp").get<std::string>());
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return v;
}

Summary scores_json(const BinaryScores& sc, std::size_t reported, std::size_t predicted, std::size_t validated) {
  auto pct = [](const std::optional<double>& v) { return v ? json(round_to(*v * 100.0, 2)) : json(nullptr); };
  return {{"reported", reported},
          {"predicted", predicted},
          {"validated", validated},
          {"covered", sc.covered},
          {"coverage_percent", pct(sc.coverage)},
          {"precision_percent", pct(sc.precision)},
          {"discovered", sc.discovered},
          {"discovered_true", sc.discovered_true},
          {"notes", sc.notes}};
}

}  // namespace

Summary cmd_eval(const EvalInputs& in) {
  Stopwatch clock;
  Summary s;
  s["command"] = "eval";
  if (in.reports.size() != in.ground_truths.size() && !in.ground_truths.empty()) {
    throw StageError("eval", "each report needs a matching ground-truth file");
  }
  std::vector<ReportView> reports;
  for (const auto& r : in.reports) reports.push_back(stage("eval", [&] { return read_report(r); }));

  if (!in.ground_truths.empty()) {
    Summary per = Summary::array();
    std::size_t reported = 0, predicted = 0, covered = 0, validated = 0, discovered = 0, discovered_true = 0;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      auto gt = stage("eval", [&] { return parse_ground_truth(read_file(in.ground_truths[i])); });
      BinaryEvalResult r{gt.reported, reports[i].predicted, {}};
      for (const auto& v : gt.validated) {
        if (r.predicted.count(v)) r.validated_true.insert(v);
      }
      auto sc = stage("eval", [&] { return binary_eval(r); });
      if (r.validated_true.size() != gt.validated.size()) {
        sc.notes.push_back("validated techniques absent from the prediction were ignored");
      }
      auto row = scores_json(sc, r.reported.size(), r.predicted.size(), r.validated_true.size());
      row["binary_id"] = reports[i].binary_id;
      per.push_back(std::move(row));
      reported += r.reported.size();
      predicted += r.predicted.size();
      covered += sc.covered;
      validated += r.validated_true.size();
      discovered += sc.discovered;
      discovered_true += sc.discovered_true;
    }
    BinaryScores overall;
    overall.covered = covered;
    overall.discovered = discovered;
    overall.discovered_true = discovered_true;
    if (reported) overall.coverage = static_cast<double>(covered) / static_cast<double>(reported);
    else overall.notes.push_back("coverage undefined: no reported techniques");
    if (predicted) overall.precision = static_cast<double>(validated) / static_cast<double>(predicted);
    else overall.notes.push_back("precision undefined: no predicted techniques");
    s["binaries"] = std::move(per);
    s["overall"] = scores_json(overall, reported, predicted, validated);
  }

  if (in.annotations) {
    auto labels = stage("eval", [&] { return load_annotations(*in.annotations); });
    std::vector<std::string> functions;
    if (in.binary) {
      auto b = stage("eval", [&] { return load_binary_export(*in.binary); });
      for (const auto& f : b.functions) {
        if (!f.external) functions.push_back(f.func_id);
      }
    } else {
      for (const auto& l : labels) functions.push_back(l.func_id);
    }
    std::vector<std::string> ttps = in.ttps;
    if (ttps.empty()) {
      std::set<std::string> all;
      for (const auto& l : labels) all.insert(l.ttp_ids.begin(), l.ttp_ids.end());
      ttps.assign(all.begin(), all.end());
    }
    auto instances = stage("eval", [&] { return build_instances(functions, ttps, labels); });
    std::set<PairKey> predictions;
    std::set<std::string> ttp_set(ttps.begin(), ttps.end());
    std::set<std::string> fn_set(functions.begin(), functions.end());
    std::size_t outside = 0;
    for (const auto& r : reports) {
      for (const auto& pr : r.positive_pairs) {
        if (ttp_set.count(pr.second) && fn_set.count(pr.first)) predictions.insert(pr);
        else ++outside;
      }
    }
    auto metrics = stage("eval", [&] { return compute_metrics(predictions, instances); });
    if (in.output) stage("eval", [&] { emit_eval_report(metrics, *in.output); });
    s["instances"] = instances.size();
    s["predictions_outside_instances"] = outside;
    s["metrics"] = json::parse(metrics_json(metrics));
    s["table"] = metrics_table(metrics);
  }
  s["seconds"] = clock.seconds();
  return s;
}

Summary cmd_stats(const fs::path& candidates) {
  auto set = stage("stats", [&] { return parse_candidates(read_file(candidates)); });
  Summary s;
  s["command"] = "stats";
  s["counts"] = counts_json(set.counts);
  s["reduction_percent"] = reductions_json(set.counts);
  s["pairs"] = set.pairs.size();
  return s;
}

}  // namespace ttpmap
