#include "ttpmap/analyzer.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "ttpmap/error.hpp"
#include "ttpmap/ident.hpp"
#include "ttpmap/io.hpp"
#include "ttpmap/parallel.hpp"

namespace ttpmap {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(ContextRole role) { return role == ContextRole::Caller ? "caller" : "callee"; }

FunctionIndex::FunctionIndex(const Binary& binary) : binary_(binary) {
  for (std::size_t i = 0; i < binary.functions.size(); ++i) {
    const auto& f = binary.functions[i];
    by_name_.emplace(f.display_name(), i);
    if (f.recovered_name && *f.recovered_name != f.raw_name) by_name_.emplace(f.raw_name, i);
    by_id_.emplace(f.func_id, i);
  }
}

std::vector<std::size_t> FunctionIndex::lookup(std::string_view name) const {
  std::string key = trim(name);
  std::optional<std::uint64_t> address;
  if (auto at = key.find('@'); at != std::string::npos) {
    try {
      address = std::stoull(key.substr(at + 1), nullptr, 16);
    } catch (const std::exception&) {
      return {};
    }
    key.resize(at);
  }
  std::set<std::size_t> hits;
  auto [lo, hi] = by_name_.equal_range(key);
  for (auto it = lo; it != hi; ++it) hits.insert(it->second);
  if (hits.empty()) {
    if (auto it = by_id_.find(key); it != by_id_.end()) hits.insert(it->second);
  }
  std::vector<std::size_t> out;
  for (auto i : hits) {
    if (!address || binary_.functions[i].entry_address == *address) out.push_back(i);
  }
  return out;
}

namespace {

std::string head_biased(const std::string& code, std::size_t cap) {
  if (code.size() <= cap) return code;
  const std::string marker = "\n/* ... truncated ... */\n";
  if (cap <= marker.size()) return code.substr(0, cap);
  std::size_t room = cap - marker.size();
  std::size_t head = room * 3 / 4;
  std::size_t tail = room - head;
  return code.substr(0, head) + marker + code.substr(code.size() - tail);
}

std::string function_header(const FunctionRecord& f) {
  std::string out = fmt::format("Function {} (address 0x{})", f.display_name(), hex_address(f.entry_address));
  if (f.external) out += " [external import]";
  out += "\n";
  if (f.summary) out += "Summary: " + *f.summary + "\n";
  return out;
}

}  // namespace

ToolResult tool_retrieve_function(const FunctionIndex& index, std::string_view name) {
  auto hits = index.lookup(name);
  const auto& fns = index.binary().functions;
  if (hits.empty()) {
    return {fmt::format("retrieve_function: no function named '{}' exists in this binary.", trim(name)), "not_found", {}};
  }
  if (hits.size() > 1) {
    std::string text = fmt::format("retrieve_function: '{}' matches several functions; request one as name@address:\n",
                                   trim(name));
    for (auto i : hits) text += fmt::format("- {}@0x{}\n", fns[i].display_name(), hex_address(fns[i].entry_address));
    return {text, "ambiguous", hits};
  }
  const auto& f = fns[hits.front()];
  std::string body = f.external ? "/* external library function; no code available */" : f.decompiled_code;
  return {function_header(f) + "Code:\n" + body + "\n", "ok", hits};
}

ToolResult tool_retrieve_caller(const FunctionIndex& index, const CallGraph& graph, std::string_view name) {
  auto hits = index.lookup(name);
  const auto& fns = index.binary().functions;
  if (hits.empty()) {
    return {fmt::format("retrieve_caller: no function named '{}' exists in this binary.", trim(name)), "not_found", {}};
  }
  if (hits.size() > 1) {
    std::string text = fmt::format("retrieve_caller: '{}' matches several functions; request one as name@address:\n",
                                   trim(name));
    for (auto i : hits) text += fmt::format("- {}@0x{}\n", fns[i].display_name(), hex_address(fns[i].entry_address));
    return {text, "ambiguous", hits};
  }
  const auto& f = fns[hits.front()];
  auto node = graph.index_of(f.func_id);
  std::vector<std::size_t> callers;
  if (node) callers = graph.callers(*node);
  if (callers.empty()) {
    return {fmt::format("retrieve_caller: {} has no callers in this binary.\n", f.display_name()), "ok", {}};
  }
  std::string text = fmt::format("retrieve_caller: callers of {}:\n", f.display_name());
  for (auto c : callers) {
    const auto& g = fns[c];
    text += "- " + g.display_name();
    if (g.summary) text += ": " + *g.summary;
    text += "\n";
  }
  return {text, "ok", callers};
}

std::string analysis_prompt(const FunctionRecord& seed, const TtpRecord* ttp, std::string_view ttp_id,
                            const ReasoningGuideline* guideline, std::size_t tool_budget) {
  std::string out = fmt::format("Target technique: {}", ttp_id);
  if (ttp) out += " " + ttp->name + "\nDefinition:\n" + ttp->description;
  out += "\n\n";
  if (guideline) out += render_checklist(*guideline) + "\n";
  out += "Seed function:\n" + function_header(seed) + "Code:\n" + seed.decompiled_code + "\n\n";
  if (tool_budget > 0) {
    out += fmt::format(
        "If the code above is not enough to decide, request more context with exactly one line per reply "
        "(at most {} requests):\n"
        "TOOL: retrieve_function <function name>\n"
        "TOOL: retrieve_caller <function name>\n",
        tool_budget);
  } else {
    out += "No tools are available; decide from the code shown.\n";
  }
  out += "Question: Does the seed function implement " + std::string(ttp_id) + "?";
  if (guideline) out += " Walk through the guideline before deciding.";
  out += "\nWhen ready, answer with two lines:\nVERDICT: PRESENT or VERDICT: ABSENT\nEVIDENCE: <the code behavior that "
         "supports the verdict>\n";
  return out;
}

namespace {

struct AgentReply {
  enum class Kind { Verdict, Tool, Malformed } kind = Kind::Malformed;
  bool present = false;
  std::string evidence;
  std::string tool;
  std::string argument;
};

AgentReply parse_agent_reply(std::string_view text) {
  AgentReply out;
  std::optional<bool> verdict;
  std::string evidence;
  std::optional<std::pair<std::string, std::string>> tool;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.rfind("VERDICT:", 0) == 0 && !verdict) {
      std::string v = trim(std::string_view(line).substr(8));
      std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
      if (v == "PRESENT" || v == "TRUE") verdict = true;
      if (v == "ABSENT" || v == "FALSE") verdict = false;
    } else if (line.rfind("EVIDENCE:", 0) == 0 && evidence.empty()) {
      evidence = trim(std::string_view(line).substr(9));
    } else if (line.rfind("TOOL:", 0) == 0 && !tool) {
      std::string rest = trim(std::string_view(line).substr(5));
      auto sp = rest.find_first_of(" \t(");
      std::string name = rest.substr(0, sp);
      std::string arg = sp == std::string::npos ? "" : trim(std::string_view(rest).substr(sp + 1));
      while (!arg.empty() && (arg.back() == ')' || arg.back() == '"' || arg.back() == '\'')) arg.pop_back();
      while (!arg.empty() && (arg.front() == '"' || arg.front() == '\'')) arg.erase(arg.begin());
      tool.emplace(name, trim(arg));
    }
  }
  if (verdict) {
    if (*verdict && evidence.empty()) return out;  // a positive verdict must cite evidence
    out.kind = AgentReply::Kind::Verdict;
    out.present = *verdict;
    out.evidence = evidence;
    return out;
  }
  if (tool) {
    out.kind = AgentReply::Kind::Tool;
    out.tool = tool->first;
    out.argument = tool->second;
  }
  return out;
}

constexpr std::string_view kAnalystSystem =
    "You are a malware analyst deciding whether a decompiled function from a stripped binary implements a specific "
    "MITRE ATT&CK technique. Fetch additional functions only when the decision depends on them.";

class Conversation {
 public:
  Conversation(const CandidatePair& pair, const FunctionIndex& index, const CallGraph& graph, const AnalyzerConfig& cfg)
      : pair_(pair), index_(index), graph_(graph), cfg_(cfg) {}

  PairAnalysis run(const FunctionRecord& seed, std::size_t seed_node, const TtpRecord* ttp,
                   const ReasoningGuideline* guideline, Gateway& gateway) {
    PairAnalysis out;
    out.bundle.seed = pair_.func_id;
    out.bundle.ttp_id = pair_.ttp_id;
    out.verdict.func_id = pair_.func_id;
    out.verdict.ttp_id = pair_.ttp_id;
    in_context_.insert(seed_node);

    const std::size_t budget = cfg_.no_explorer ? 0 : cfg_.budget.max_tool_calls;
    ChatRequest req;
    req.system = std::string(kAnalystSystem);
    req.messages.push_back({"user", analysis_prompt(seed, ttp, pair_.ttp_id, guideline, budget)});

    bool forced = false;
    std::size_t tools_used = 0;
    while (true) {
      std::string reply;
      try {
        reply = gateway.chat(req);
      } catch (const Error& e) {
        out.verdict.error = e.what();
        break;
      }
      ++out.model_turns;
      req.messages.push_back({"assistant", reply});
      auto parsed = parse_agent_reply(reply);

      if (parsed.kind == AgentReply::Kind::Verdict) {
        out.verdict.present = parsed.present;
        out.verdict.evidence = parsed.evidence;
        break;
      }
      if (parsed.kind == AgentReply::Kind::Tool && !forced && tools_used < budget) {
        ++tools_used;
        req.messages.push_back({"user", run_tool(parsed.tool, parsed.argument, out.bundle)});
        continue;
      }
      if (forced) {
        out.verdict.present = false;
        out.verdict.evidence = "malformed response";
        out.verdict.flagged = true;
        break;
      }
      forced = true;
      std::string why = parsed.kind == AgentReply::Kind::Tool
                            ? "No further tool calls are available."
                            : "Your reply did not contain a verdict in the required format.";
      req.messages.push_back(
          {"user", why + " Decide now from the context above without requesting tools. Answer with two lines:\n"
                         "VERDICT: PRESENT or VERDICT: ABSENT\nEVIDENCE: <the code behavior that supports the verdict>"});
    }
    out.transcript = std::move(req.messages);
    return out;
  }

 private:
  std::string run_tool(const std::string& tool, const std::string& arg, ContextBundle& bundle) {
    if (tool == "retrieve_caller") {
      auto r = tool_retrieve_caller(index_, graph_, arg);
      bundle.tool_log.push_back({tool, arg, r.outcome});
      return r.text;
    }
    if (tool != "retrieve_function") {
      bundle.tool_log.push_back({tool, arg, "unknown_tool"});
      return fmt::format("Unknown tool '{}'. Available tools: retrieve_function, retrieve_caller.", tool);
    }

    auto r = tool_retrieve_function(index_, arg);
    if (r.outcome != "ok") {
      bundle.tool_log.push_back({tool, arg, r.outcome});
      return r.text;
    }
    std::size_t node = r.nodes.front();
    const auto& f = index_.binary().functions[node];
    if (in_context_.count(node)) {
      bundle.tool_log.push_back({tool, arg, "cached"});
      return fmt::format("retrieve_function: {} is already in the conversation above.", f.display_name());
    }
    std::size_t remaining = cfg_.budget.max_context_chars > context_used_ ? cfg_.budget.max_context_chars - context_used_ : 0;
    if (remaining == 0) {
      bundle.tool_log.push_back({tool, arg, "context_limit"});
      return "retrieve_function: the context limit is reached; decide with the code already shown.";
    }
    std::string body = f.external ? "/* external library function; no code available */" : f.decompiled_code;
    std::string shown = head_biased(body, std::min(cfg_.budget.per_function_chars, remaining));
    context_used_ += shown.size();
    bundle.tool_log.push_back({tool, arg, shown.size() < body.size() ? "truncated" : "ok"});
    bundle.retrieved.push_back({f.func_id, role_of(node)});
    in_context_.insert(node);
    return function_header(f) + "Code:\n" + shown + "\n";
  }

  // A fetched function calling something already in context is a caller.
  ContextRole role_of(std::size_t node) const {
    auto gnode = graph_.index_of(index_.binary().functions[node].func_id);
    if (!gnode) return ContextRole::Callee;
    for (auto callee : graph_.callees(*gnode)) {
      const auto& id = graph_.nodes()[callee];
      for (auto c : in_context_) {
        if (index_.binary().functions[c].func_id == id && c != node) return ContextRole::Caller;
      }
    }
    return ContextRole::Callee;
  }

  const CandidatePair& pair_;
  const FunctionIndex& index_;
  const CallGraph& graph_;
  const AnalyzerConfig& cfg_;
  std::set<std::size_t> in_context_;
  std::size_t context_used_ = 0;
};

}  // namespace

PairAnalysis explore_and_decide(const CandidatePair& pair, const FunctionIndex& index, const CallGraph& graph,
                                const TtpRecord* ttp, const ReasoningGuideline* guideline, Gateway& gateway,
                                const AnalyzerConfig& cfg) {
  if (guideline && guideline->ttp_id != pair.ttp_id) {
    throw ValidationError(fmt::format("guideline {} does not match pair technique {}", guideline->ttp_id, pair.ttp_id));
  }
  std::optional<std::size_t> seed;
  const auto& fns = index.binary().functions;
  for (std::size_t i = 0; i < fns.size(); ++i) {
    if (fns[i].func_id == pair.func_id) seed = i;
  }
  if (!seed) throw NotFoundError(fmt::format("seed function {} is not in the binary", pair.func_id));
  Conversation conv(pair, index, graph, cfg);
  return conv.run(fns[*seed], *seed, ttp, guideline, gateway);
}

AnalysisReport analyze_binary(const CandidateSet& candidates, const Binary& binary, const CallGraph& graph,
                              const TtpCatalog& catalog, const std::map<std::string, ReasoningGuideline>& guidelines,
                              Gateway& gateway, const AnalyzerConfig& cfg) {
  AnalysisReport report;
  report.binary_id = binary.binary_id;

  std::vector<const CandidatePair*> pairs;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& p : candidates.pairs) {
    if (seen.emplace(p.func_id, p.ttp_id).second) pairs.push_back(&p);
  }

  FunctionIndex index(binary);
  report.pairs.resize(pairs.size());
  parallel_for(pairs.size(), cfg.parallelism, [&](std::size_t i) {
    const auto& p = *pairs[i];
    auto& slot = report.pairs[i];
    const ReasoningGuideline* g = nullptr;
    if (!cfg.no_guideline) {
      auto it = guidelines.find(p.ttp_id);
      if (it == guidelines.end()) {
        slot.bundle.seed = p.func_id;
        slot.bundle.ttp_id = p.ttp_id;
        slot.verdict.func_id = p.func_id;
        slot.verdict.ttp_id = p.ttp_id;
        slot.verdict.error = fmt::format("no reasoning guideline for {}", p.ttp_id);
        return;
      }
      g = &it->second;
    }
    try {
      slot = explore_and_decide(p, index, graph, catalog.find(p.ttp_id), g, gateway, cfg);
    } catch (const Error& e) {
      slot.bundle.seed = p.func_id;
      slot.bundle.ttp_id = p.ttp_id;
      slot.verdict.func_id = p.func_id;
      slot.verdict.ttp_id = p.ttp_id;
      slot.verdict.error = e.what();
    }
  });

  for (const auto& pa : report.pairs) {
    if (pa.verdict.error) ++report.errored;
    if (pa.verdict.flagged) ++report.flagged;
    if (pa.verdict.present && !pa.verdict.error) {
      const auto* f = binary.find_by_id(pa.verdict.func_id);
      report.predicted[pa.verdict.ttp_id].push_back(
          {pa.verdict.func_id, f ? f->display_name() : pa.verdict.func_id, pa.verdict.evidence});
    }
  }
  for (auto& [ttp, fns] : report.predicted) {
    std::sort(fns.begin(), fns.end(), [](const auto& a, const auto& b) { return a.func_id < b.func_id; });
  }
  return report;
}

std::string report_json(const AnalysisReport& report, const TtpCatalog& catalog) {
  ordered_json predicted = ordered_json::array();
  for (const auto& [ttp, fns] : report.predicted) {
    ordered_json entry;
    entry["ttp"] = ttp;
    const auto* rec = catalog.find(ttp);
    entry["name"] = rec ? rec->name : "";
    ordered_json support = ordered_json::array();
    for (const auto& f : fns) support.push_back({{"function", f.func_id}, {"name", f.name}, {"evidence", f.evidence}});
    entry["functions"] = std::move(support);
    predicted.push_back(std::move(entry));
  }
  ordered_json pairs = ordered_json::array();
  for (const auto& pa : report.pairs) {
    ordered_json j;
    j["function"] = pa.verdict.func_id;
    j["ttp"] = pa.verdict.ttp_id;
    j["present"] = pa.verdict.present;
    j["evidence"] = pa.verdict.evidence;
    j["flagged"] = pa.verdict.flagged;
    j["error"] = pa.verdict.error ? ordered_json(*pa.verdict.error) : ordered_json(nullptr);
    j["tool_calls"] = pa.bundle.tool_log.size();
    j["model_turns"] = pa.model_turns;
    pairs.push_back(std::move(j));
  }
  ordered_json doc;
  doc["binary_id"] = report.binary_id;
  doc["predicted_ttps"] = std::move(predicted);
  doc["pairs"] = std::move(pairs);
  doc["errored"] = report.errored;
  doc["flagged"] = report.flagged;
  return doc.dump(2) + "\n";
}

std::string report_text(const AnalysisReport& report, const TtpCatalog& catalog) {
  std::ostringstream os;
  os << "Binary: " << report.binary_id << "\n";
  os << fmt::format("Analyzed pairs: {}  errored: {}  flagged: {}\n", report.pairs.size(), report.errored,
                    report.flagged);
  os << fmt::format("Predicted techniques: {}\n\n", report.predicted.size());
  for (const auto& [ttp, fns] : report.predicted) {
    const auto* rec = catalog.find(ttp);
    os << ttp << (rec ? " " + rec->name : std::string{}) << "\n";
    for (const auto& f : fns) os << "  - " << f.name << " (" << f.func_id << "): " << f.evidence << "\n";
  }
  return os.str();
}

std::string transcript_json(const PairAnalysis& pair) {
  ordered_json msgs = ordered_json::array();
  for (const auto& m : pair.transcript) msgs.push_back({{"role", m.role}, {"content", m.content}});
  ordered_json tools = ordered_json::array();
  for (const auto& t : pair.bundle.tool_log) {
    tools.push_back({{"tool", t.tool}, {"argument", t.argument}, {"outcome", t.outcome}});
  }
  ordered_json retrieved = ordered_json::array();
  for (const auto& r : pair.bundle.retrieved) {
    retrieved.push_back({{"function", r.func_id}, {"role", std::string(to_string(r.role))}});
  }
  ordered_json doc;
  doc["function"] = pair.verdict.func_id;
  doc["ttp"] = pair.verdict.ttp_id;
  doc["messages"] = std::move(msgs);
  doc["tool_log"] = std::move(tools);
  doc["retrieved"] = std::move(retrieved);
  doc["verdict"] = {{"present", pair.verdict.present}, {"evidence", pair.verdict.evidence},
                    {"flagged", pair.verdict.flagged}};
  return doc.dump(2) + "\n";
}

void write_transcripts(const AnalysisReport& report, const std::filesystem::path& run_dir) {
  for (const auto& pa : report.pairs) {
    auto name = sanitize_identifier(pa.verdict.func_id) + "__" + pa.verdict.ttp_id + ".json";
    write_file_atomic(run_dir / "transcripts" / name, transcript_json(pa));
  }
}

}  // namespace ttpmap
