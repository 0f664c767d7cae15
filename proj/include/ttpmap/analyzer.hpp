#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ttpmap/attck.hpp"
#include "ttpmap/binary.hpp"
#include "ttpmap/callgraph.hpp"
#include "ttpmap/gateway.hpp"
#include "ttpmap/guideline.hpp"
#include "ttpmap/retrieval.hpp"

namespace ttpmap {

struct AnalysisBudget {
  std::size_t max_tool_calls = 8;
  std::size_t max_context_chars = 60000;
  std::size_t per_function_chars = 8000;
};

enum class ContextRole { Callee, Caller };
std::string_view to_string(ContextRole role);

struct RetrievedFunction {
  std::string func_id;
  ContextRole role = ContextRole::Callee;
  bool operator==(const RetrievedFunction&) const = default;
};

struct ToolCall {
  std::string tool;      // retrieve_function | retrieve_caller
  std::string argument;
  std::string outcome;   // ok | truncated | cached | not_found | ambiguous | context_limit | unknown_tool
  bool operator==(const ToolCall&) const = default;
};

struct ContextBundle {
  std::string seed;
  std::string ttp_id;
  std::vector<RetrievedFunction> retrieved;
  std::vector<ToolCall> tool_log;
  bool operator==(const ContextBundle&) const = default;
};

struct Verdict {
  bool present = false;
  std::string evidence;
  std::string ttp_id;
  std::string func_id;
  bool flagged = false;  // malformed final answer coerced to ABSENT
  std::optional<std::string> error;
  bool operator==(const Verdict&) const = default;
};

struct PairAnalysis {
  Verdict verdict;
  ContextBundle bundle;
  std::vector<ChatMessage> transcript;  // system prompt excluded
  std::size_t model_turns = 0;
};

struct AnalyzerConfig {
  AnalysisBudget budget;
  bool no_explorer = false;   // forces a zero tool budget
  bool no_guideline = false;  // analysis prompt carries only the technique definition
  std::size_t parallelism = 1;
};

/// Name lookups over a binary: recovered names, raw names, `name@0xADDR`
/// and func_ids, in that order of preference.
class FunctionIndex {
 public:
  explicit FunctionIndex(const Binary& binary);
  std::vector<std::size_t> lookup(std::string_view name) const;
  const Binary& binary() const { return binary_; }

 private:
  const Binary& binary_;
  std::multimap<std::string, std::size_t, std::less<>> by_name_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

struct ToolResult {
  std::string text;
  std::string outcome;
  std::vector<std::size_t> nodes;  // resolved functions
};

/// Code of the named function, or an agent-visible miss / disambiguation
/// message. Never throws for unknown names.
ToolResult tool_retrieve_function(const FunctionIndex& index, std::string_view name);

/// Display names of the callers of the named function.
ToolResult tool_retrieve_caller(const FunctionIndex& index, const CallGraph& graph, std::string_view name);

/// Renders the opening analysis message for a pair.
std::string analysis_prompt(const FunctionRecord& seed, const TtpRecord* ttp, std::string_view ttp_id,
                            const ReasoningGuideline* guideline, std::size_t tool_budget);

/// Runs one agent conversation: optional tool turns within the budget, then a
/// `VERDICT:` / `EVIDENCE:` answer. Exhausting the budget or answering out of
/// format triggers one forced decision turn with tools disabled. Terminates
/// within max_tool_calls + 2 model turns. Gateway failures are reported in
/// `verdict.error`.
PairAnalysis explore_and_decide(const CandidatePair& pair, const FunctionIndex& index, const CallGraph& graph,
                                const TtpRecord* ttp, const ReasoningGuideline* guideline, Gateway& gateway,
                                const AnalyzerConfig& cfg);

struct SupportingFunction {
  std::string func_id;
  std::string name;
  std::string evidence;
};

struct AnalysisReport {
  std::string binary_id;
  std::vector<PairAnalysis> pairs;  // one per distinct candidate, in candidate order
  std::map<std::string, std::vector<SupportingFunction>> predicted;  // ttp_id -> positive functions
  std::size_t errored = 0;
  std::size_t flagged = 0;
};

/// Analyzes every distinct candidate pair and aggregates the binary-level
/// technique set as the union of positive verdicts.
AnalysisReport analyze_binary(const CandidateSet& candidates, const Binary& binary, const CallGraph& graph,
                              const TtpCatalog& catalog, const std::map<std::string, ReasoningGuideline>& guidelines,
                              Gateway& gateway, const AnalyzerConfig& cfg);

std::string report_json(const AnalysisReport& report, const TtpCatalog& catalog);
std::string report_text(const AnalysisReport& report, const TtpCatalog& catalog);
std::string transcript_json(const PairAnalysis& pair);

/// Writes transcripts/<func_id>__<ttp_id>.json under `run_dir`.
void write_transcripts(const AnalysisReport& report, const std::filesystem::path& run_dir);

}  // namespace ttpmap
