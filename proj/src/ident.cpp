#include "ttpmap/ident.hpp"

#include <cstdint>

#include <fmt/format.h>

namespace ttpmap {

bool is_valid_identifier(std::string_view s) {
  if (s.empty() || !is_ident_start(s.front())) return false;
  for (char c : s) {
    if (!is_ident_char(c)) return false;
  }
  return true;
}

std::string sanitize_identifier(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 1);
  for (char c : s) out.push_back(is_ident_char(c) ? c : '_');
  if (!out.empty() && !is_ident_start(out.front())) out.insert(out.begin(), '_');
  return out;
}

bool is_technique_id(std::string_view s) {
  auto digits = [&](std::size_t from, std::size_t n) {
    for (std::size_t i = from; i < from + n; ++i) {
      if (s[i] < '0' || s[i] > '9') return false;
    }
    return true;
  };
  if (s.size() == 5) return s[0] == 'T' && digits(1, 4);
  if (s.size() == 9) return s[0] == 'T' && digits(1, 4) && s[5] == '.' && digits(6, 3);
  return false;
}

std::string parent_technique(std::string_view id) {
  auto dot = id.find('.');
  return std::string(dot == std::string_view::npos ? id : id.substr(0, dot));
}

std::string map_identifiers(std::string_view text,
                            const std::function<std::string(std::string_view)>& fn) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (is_ident_start(c)) {
      std::size_t j = i;
      while (j < text.size() && is_ident_char(text[j])) ++j;
      out += fn(text.substr(i, j - i));
      i = j;
    } else if (c >= '0' && c <= '9') {
      // numeric literals such as 0x401000 or 12ULL are not identifiers
      std::size_t j = i;
      while (j < text.size() && is_ident_char(text[j])) ++j;
      out.append(text.substr(i, j - i));
      i = j;
    } else {
      out.push_back(c);
      ++i;
    }
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

std::string hex_address(std::uint64_t address) { return fmt::format("{:x}", address); }

}  // namespace ttpmap
