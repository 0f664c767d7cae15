#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ttpmap {

enum class Platform { Linux, Windows, Unknown };

std::string_view to_string(Platform p);
Platform platform_from_string(std::string_view s);

/// One decompiled function. External imports carry empty code and are never
/// renamed.
struct FunctionRecord {
  std::string func_id;
  std::uint64_t entry_address = 0;
  std::string raw_name;
  std::string decompiled_code;
  std::set<std::string> callee_names;
  std::optional<std::string> summary;
  std::optional<std::string> recovered_name;
  bool external = false;

  /// Name the function currently goes by: recovered if present, else raw.
  const std::string& display_name() const { return recovered_name ? *recovered_name : raw_name; }

  bool operator==(const FunctionRecord&) const = default;
};

struct Binary {
  std::string binary_id;
  Platform platform = Platform::Unknown;
  std::vector<FunctionRecord> functions;

  const FunctionRecord* find_by_id(std::string_view id) const;
  bool operator==(const Binary&) const = default;
};

/// Reads the JSON interchange document. Throws ParseError (naming the record
/// index and field) or ValidationError (duplicate id, empty binary). Missing
/// `callees` arrays are recomputed from the code.
Binary load_binary_export(const std::filesystem::path& path);
Binary parse_binary_export(std::string_view json_text);

/// Serializes the normalized model. Optional `summary` and `recovered_name`
/// keys are written only when present.
std::string serialize_binary_export(const Binary& binary);
void write_binary_export(const Binary& binary, const std::filesystem::path& path);

/// Members of `known_names` that occur in call position in `code`: an
/// identifier token immediately followed by '('.
std::set<std::string> extract_callees(std::string_view code, const std::set<std::string>& known_names);

/// The code from the first '{' on when a signature precedes it, so the
/// definition header is not mistaken for a self-call.
std::string_view function_body(std::string_view code);

/// Keeps the lowest-address function among byte-identical bodies and rewrites
/// callee references to removed names. External records are never merged.
Binary dedup_functions(const Binary& binary);

}  // namespace ttpmap
