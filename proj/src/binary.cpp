#include "ttpmap/binary.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

#include "ttpmap/error.hpp"
#include "ttpmap/ident.hpp"
#include "ttpmap/io.hpp"

namespace ttpmap {

using nlohmann::json;

std::string_view to_string(Platform p) {
  switch (p) {
    case Platform::Linux: return "linux";
    case Platform::Windows: return "windows";
    case Platform::Unknown: break;
  }
  return "unknown";
}

Platform platform_from_string(std::string_view s) {
  if (s == "linux") return Platform::Linux;
  if (s == "windows") return Platform::Windows;
  return Platform::Unknown;
}

const FunctionRecord* Binary::find_by_id(std::string_view id) const {
  for (const auto& f : functions) {
    if (f.func_id == id) return &f;
  }
  return nullptr;
}

namespace {

template <typename T>
T required_field(const json& rec, std::size_t index, const char* field, json::value_t kind) {
  auto it = rec.find(field);
  if (it == rec.end()) {
    throw ParseError(fmt::format("function record {}: missing field '{}'", index, field));
  }
  bool ok = it->type() == kind ||
            (kind == json::value_t::number_unsigned && it->type() == json::value_t::number_integer &&
             it->get<std::int64_t>() >= 0);
  if (!ok) throw ParseError(fmt::format("function record {}: field '{}' has wrong type", index, field));
  return it->get<T>();
}

}  // namespace

Binary parse_binary_export(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("binary export is not valid JSON: {}", e.what()));
  }
  if (!doc.is_object()) throw ParseError("binary export: top level must be an object");
  if (!doc.contains("binary_id") || !doc["binary_id"].is_string()) {
    throw ParseError("binary export: missing field 'binary_id'");
  }
  if (!doc.contains("functions") || !doc["functions"].is_array()) {
    throw ParseError("binary export: missing field 'functions'");
  }

  Binary bin;
  bin.binary_id = doc["binary_id"].get<std::string>();
  if (auto it = doc.find("platform"); it != doc.end() && it->is_string()) {
    bin.platform = platform_from_string(it->get<std::string>());
  }

  const auto& funcs = doc["functions"];
  if (funcs.empty()) throw ValidationError("empty binary");

  std::vector<bool> has_callees;
  for (std::size_t i = 0; i < funcs.size(); ++i) {
    const auto& rec = funcs[i];
    if (!rec.is_object()) throw ParseError(fmt::format("function record {}: not an object", i));
    FunctionRecord f;
    f.func_id = required_field<std::string>(rec, i, "id", json::value_t::string);
    f.entry_address = required_field<std::uint64_t>(rec, i, "address", json::value_t::number_unsigned);
    f.raw_name = required_field<std::string>(rec, i, "name", json::value_t::string);
    f.decompiled_code = required_field<std::string>(rec, i, "code", json::value_t::string);
    if (auto it = rec.find("external"); it != rec.end()) {
      if (!it->is_boolean()) throw ParseError(fmt::format("function record {}: field 'external' has wrong type", i));
      f.external = it->get<bool>();
    }
    bool callees_given = false;
    if (auto it = rec.find("callees"); it != rec.end()) {
      if (!it->is_array()) throw ParseError(fmt::format("function record {}: field 'callees' has wrong type", i));
      for (const auto& c : *it) {
        if (!c.is_string()) throw ParseError(fmt::format("function record {}: field 'callees' has wrong type", i));
        f.callee_names.insert(c.get<std::string>());
      }
      callees_given = true;
    }
    if (auto it = rec.find("summary"); it != rec.end() && it->is_string()) f.summary = it->get<std::string>();
    if (auto it = rec.find("recovered_name"); it != rec.end() && it->is_string()) {
      auto name = it->get<std::string>();
      if (!is_valid_identifier(name)) {
        throw ParseError(fmt::format("function record {}: field 'recovered_name' is not an identifier", i));
      }
      f.recovered_name = std::move(name);
    }
    has_callees.push_back(callees_given);
    bin.functions.push_back(std::move(f));
  }

  std::unordered_set<std::string> ids;
  for (const auto& f : bin.functions) {
    if (!ids.insert(f.func_id).second) {
      throw ValidationError(fmt::format("duplicate func_id '{}'", f.func_id));
    }
  }

  std::set<std::string> known;
  for (const auto& f : bin.functions) {
    known.insert(f.raw_name);
    if (f.recovered_name) known.insert(*f.recovered_name);
  }
  for (std::size_t i = 0; i < bin.functions.size(); ++i) {
    auto& f = bin.functions[i];
    if (!has_callees[i] && !f.external) f.callee_names = extract_callees(function_body(f.decompiled_code), known);
  }
  return bin;
}

Binary load_binary_export(const std::filesystem::path& path) {
  return parse_binary_export(read_file(path));
}

std::string serialize_binary_export(const Binary& binary) {
  json funcs = json::array();
  for (const auto& f : binary.functions) {
    json rec = json::object();
    rec["id"] = f.func_id;
    rec["address"] = f.entry_address;
    rec["name"] = f.raw_name;
    rec["code"] = f.decompiled_code;
    rec["callees"] = f.callee_names;
    if (f.external) rec["external"] = true;
    if (f.summary) rec["summary"] = *f.summary;
    if (f.recovered_name) rec["recovered_name"] = *f.recovered_name;
    funcs.push_back(std::move(rec));
  }
  json doc = json::object();
  doc["binary_id"] = binary.binary_id;
  doc["platform"] = std::string(to_string(binary.platform));
  doc["functions"] = std::move(funcs);
  return doc.dump(2) + "\n";
}

void write_binary_export(const Binary& binary, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_binary_export(binary));
}

std::string_view function_body(std::string_view code) {
  auto brace = code.find('{');
  if (brace == std::string_view::npos) return code;
  if (code.substr(0, brace).find('(') == std::string_view::npos) return code;
  return code.substr(brace);
}

std::set<std::string> extract_callees(std::string_view code, const std::set<std::string>& known_names) {
  std::set<std::string> found;
  std::size_t i = 0;
  while (i < code.size()) {
    char c = code[i];
    if (is_ident_start(c)) {
      std::size_t j = i;
      while (j < code.size() && is_ident_char(code[j])) ++j;
      // decompilers do not emit whitespace between callee and '('
      if (j < code.size() && code[j] == '(') {
        std::string token(code.substr(i, j - i));
        if (known_names.count(token)) found.insert(std::move(token));
      }
      i = j;
    } else if (c >= '0' && c <= '9') {
      while (i < code.size() && is_ident_char(code[i])) ++i;
    } else {
      ++i;
    }
  }
  return found;
}

Binary dedup_functions(const Binary& binary) {
  // body -> index of the lowest-address function carrying it
  std::unordered_map<std::string, std::size_t> keeper;
  for (std::size_t i = 0; i < binary.functions.size(); ++i) {
    const auto& f = binary.functions[i];
    if (f.external) continue;
    auto [it, inserted] = keeper.emplace(f.decompiled_code, i);
    if (!inserted && f.entry_address < binary.functions[it->second].entry_address) it->second = i;
  }

  std::map<std::string, std::string> renamed;  // removed raw name -> kept raw name
  std::vector<bool> keep(binary.functions.size(), true);
  for (std::size_t i = 0; i < binary.functions.size(); ++i) {
    const auto& f = binary.functions[i];
    if (f.external) continue;
    std::size_t k = keeper.at(f.decompiled_code);
    if (k != i) {
      keep[i] = false;
      renamed[f.raw_name] = binary.functions[k].raw_name;
    }
  }

  Binary out;
  out.binary_id = binary.binary_id;
  out.platform = binary.platform;
  for (std::size_t i = 0; i < binary.functions.size(); ++i) {
    if (!keep[i]) continue;
    FunctionRecord f = binary.functions[i];
    std::set<std::string> callees;
    for (const auto& c : f.callee_names) {
      auto it = renamed.find(c);
      callees.insert(it == renamed.end() ? c : it->second);
    }
    f.callee_names = std::move(callees);
    out.functions.push_back(std::move(f));
  }
  return out;
}

}  // namespace ttpmap
