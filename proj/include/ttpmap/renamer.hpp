#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ttpmap/binary.hpp"
#include "ttpmap/callgraph.hpp"
#include "ttpmap/error.hpp"
#include "ttpmap/gateway.hpp"

namespace ttpmap {

struct RenameResult {
  std::string summary;
  std::string recovered_name;
  bool fallback = false;  // set when the response could not be parsed

  bool operator==(const RenameResult&) const = default;
};

/// What the prompt shows for one direct callee.
struct CalleeContext {
  std::string shown_name;  // recovered name if known, else the raw name
  std::string summary;
};

/// Keyed by the callee's raw name.
using CalleeSummaries = std::map<std::string, CalleeContext>;

std::string placeholder_summary(const std::string& name);

/// Prompt text for one function; callee raw names in the body are replaced by
/// their shown names.
std::string rename_prompt(const FunctionRecord& func, const CalleeSummaries& callees);

/// Parses `SUMMARY:` / `NAME:` lines. Returns nullopt when either is missing
/// or the name sanitizes to nothing.
std::optional<RenameResult> parse_rename_response(std::string_view text);

/// One rename exchange. An unparseable answer gets one reformat turn; after
/// that the function falls back to `fn_<address-hex>` with the raw answer as
/// its summary. Gateway errors propagate.
RenameResult rename_function(const FunctionRecord& func, const CalleeSummaries& callees, Gateway& gateway);

struct CheckpointEntry {
  std::string summary;
  std::string recovered_name;
  int pass = 1;
  bool operator==(const CheckpointEntry&) const = default;
};

/// func_id -> {summary, recovered_name, pass}
using RenameCheckpoint = std::map<std::string, CheckpointEntry>;

RenameCheckpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const RenameCheckpoint& checkpoint, const std::filesystem::path& path);

struct RenamePassState {
  std::map<std::string, RenameResult> completed;  // final results
  std::set<std::string> placeholders;             // cycle members still awaiting their revisit
  std::vector<std::string> revisit_queue;         // cycle members in revisit order
};

class RenameError : public Error {
 public:
  RenameError(std::string func_id, const std::string& what)
      : Error("renaming " + func_id + " failed: " + what), func_id_(std::move(func_id)) {}
  const std::string& func_id() const noexcept { return func_id_; }

 private:
  std::string func_id_;
};

struct RenameOptions {
  std::optional<std::filesystem::path> checkpoint_path;  // read on start, written after every component
  std::size_t parallelism = 1;
};

struct RenameOutcome {
  Binary binary;  // recovered_name and summary set on every non-external function
  RenamePassState state;
  std::size_t model_calls = 0;
};

/// Bottom-up renaming over `order`. Acyclic functions take one call. Members of
/// cyclic components are first renamed with placeholder summaries for their
/// in-component callees, then revisited once with the provisional results.
/// Components on the same level run concurrently up to `parallelism`.
RenameOutcome rename_binary(const Binary& binary, const CallGraph& graph, const SccOrder& order, Gateway& gateway,
                            const RenameOptions& options = {});

/// Replaces raw names by recovered names in every body and callee list.
/// Colliding names get `_2`, `_3`, ... suffixes in ascending address order;
/// externals keep their names and are never renamed.
Binary rewrite_identifiers(const Binary& binary);

}  // namespace ttpmap
