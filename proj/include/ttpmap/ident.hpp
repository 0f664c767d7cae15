#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace ttpmap {

inline bool is_ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}

inline bool is_ident_char(char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }

// C-style identifier: letters, digits, underscore; first character not a digit.
bool is_valid_identifier(std::string_view s);

// Replaces every non-identifier character by '_' and prefixes '_' when the
// first character is a digit. Empty input stays empty.
std::string sanitize_identifier(std::string_view s);

// ATT&CK technique id: T#### or T####.###
bool is_technique_id(std::string_view s);

// Parent technique of a sub-technique id ("T1055.001" -> "T1055").
std::string parent_technique(std::string_view id);

// Calls `fn(token)` for every maximal identifier token in `text` and splices
// its return value in place of the token. Everything else is copied as-is.
std::string map_identifiers(std::string_view text,
                            const std::function<std::string(std::string_view)>& fn);

std::string trim(std::string_view s);

std::string hex_address(std::uint64_t address);

}  // namespace ttpmap
