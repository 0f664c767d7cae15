#include "ttpmap/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include <fmt/format.h>

#include "ttpmap/error.hpp"
#include "ttpmap/ident.hpp"
#include "ttpmap/io.hpp"

namespace ttpmap {

const std::vector<std::string>& Config::known_keys() {
  static const std::vector<std::string> keys = {
      "mode",
      "cache_dir",
      "record_dir",
      "parallelism",
      "requests_per_minute",
      "provider.endpoint",
      "provider.model",
      "provider.embedding_model",
      "provider.api_key_env",
      "retrieval.k",
      "retrieval.tau",
      "analyzer.max_tool_calls",
      "analyzer.max_context_chars",
      "analyzer.per_function_chars",
      "analyzer.no_explorer",
      "analyzer.no_guideline",
      "attck.procedure_example_limit",
      "paths.attck_bundle",
      "paths.guideline_dir",
      "paths.run_dir",
      "mock.script",
  };
  return keys;
}

namespace {

bool is_known(std::string_view key) {
  const auto& keys = Config::known_keys();
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

std::string unquote(std::string value, std::size_t line_no) {
  if (value.empty() || value.front() != '"') {
    if (auto hash = value.find('#'); hash != std::string::npos) value = trim(value.substr(0, hash));
    return value;
  }
  std::string out;
  std::size_t i = 1;
  for (; i < value.size() && value[i] != '"'; ++i) {
    if (value[i] == '\\' && i + 1 < value.size()) {
      char c = value[++i];
      out += c == 'n' ? '\n' : c == 't' ? '\t' : c;
    } else {
      out += value[i];
    }
  }
  if (i >= value.size()) throw ConfigError(fmt::format("config line {}: unterminated string", line_no));
  std::string rest = trim(std::string_view(value).substr(i + 1));
  if (!rest.empty() && rest.front() != '#') {
    throw ConfigError(fmt::format("config line {}: unexpected text after string", line_no));
  }
  return out;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

}  // namespace

Config Config::parse(std::string_view text) {
  Config cfg;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      auto close = line.find(']');
      if (close == std::string::npos) throw ConfigError(fmt::format("config line {}: unterminated section", line_no));
      section = trim(std::string_view(line).substr(1, close - 1));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("config line {}: expected key = value", line_no));
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    if (!is_known(key)) throw ConfigError(fmt::format("config line {}: unknown key '{}'", line_no, key));
    cfg.values_[key] = unquote(trim(std::string_view(line).substr(eq + 1)), line_no);
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse(text);
}

void Config::set(std::string_view assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError(fmt::format("override '{}' is not key=value", assignment));
  set(trim(assignment.substr(0, eq)), unquote(trim(assignment.substr(eq + 1)), 0));
}

void Config::set(const std::string& key, std::string value) {
  if (!is_known(key)) throw ConfigError(fmt::format("unknown config key '{}'", key));
  values_[key] = std::move(value);
}

bool Config::has(std::string_view key) const { return values_.find(key) != values_.end(); }

const std::string& Config::require(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(fmt::format("missing config key '{}'", key));
  return it->second;
}

std::string Config::get(std::string_view key, std::string fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long long Config::get_int(std::string_view key, long long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  long long v = 0;
  const auto& s = it->second;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw ConfigError(fmt::format("config key '{}': '{}' is not an integer", key, s));
  }
  return v;
}

double Config::get_double(std::string_view key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    double v = std::stod(it->second, &used);
    if (used == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(fmt::format("config key '{}': '{}' is not a number", key, it->second));
}

bool Config::get_bool(std::string_view key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError(fmt::format("config key '{}': '{}' is not a boolean", key, it->second));
}

std::string Config::dump() const {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [key, value] : values_) {
    auto dot = key.find('.');
    if (dot == std::string::npos) sections[""].emplace_back(key, value);
    else sections[key.substr(0, dot)].emplace_back(key.substr(dot + 1), value);
  }
  std::string out;
  for (const auto& [name, entries] : sections) {
    if (!name.empty()) out += (out.empty() ? "" : "\n") + fmt::format("[{}]\n", name);
    for (const auto& [k, v] : entries) out += k + " = " + quote(v) + "\n";
  }
  return out;
}

namespace {

std::size_t positive(const Config& c, std::string_view key, long long fallback, long long min = 1) {
  auto v = c.get_int(key, fallback);
  if (v < min) throw ConfigError(fmt::format("config key '{}' must be at least {}", key, min));
  return static_cast<std::size_t>(v);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

RunConfig to_run_config(const Config& c, const std::filesystem::path& base) {
  RunConfig rc;
  rc.gateway.mode = backend_mode_from_string(c.require("mode"));
  rc.parallelism = positive(c, "parallelism", 1);
  rc.gateway.parallelism = rc.parallelism;
  rc.gateway.requests_per_minute = c.get_double("requests_per_minute", 0.0);
  if (rc.gateway.requests_per_minute < 0) throw ConfigError("config key 'requests_per_minute' must be >= 0");
  rc.gateway.cache_dir = resolve(base, c.get("cache_dir", ""));
  rc.gateway.record_dir = resolve(base, c.get("record_dir", ""));
  rc.gateway.model = c.get("provider.model", "mock-chat");
  rc.gateway.embedding_model = c.get("provider.embedding_model", "mock-hash");
  rc.endpoint = c.get("provider.endpoint", "");
  rc.api_key_env = c.get("provider.api_key_env", "");
  if (c.has("mock.script")) rc.mock_script = resolve(base, c.require("mock.script"));

  switch (rc.gateway.mode) {
    case BackendMode::Mock:
      c.require("mock.script");
      break;
    case BackendMode::Replay:
      c.require("record_dir");
      break;
    case BackendMode::Record:
      c.require("record_dir");
      if (!rc.mock_script) c.require("provider.endpoint");
      break;
    case BackendMode::Live:
      c.require("provider.endpoint");
      break;
  }

  rc.retrieval.k = positive(c, "retrieval.k", 20);
  rc.retrieval.tau = c.get_double("retrieval.tau", 0.5);
  rc.retrieval.validate();

  rc.analyzer.budget.max_tool_calls = positive(c, "analyzer.max_tool_calls", 8, 0);
  rc.analyzer.budget.max_context_chars = positive(c, "analyzer.max_context_chars", 60000);
  rc.analyzer.budget.per_function_chars = positive(c, "analyzer.per_function_chars", 8000);
  rc.analyzer.no_explorer = c.get_bool("analyzer.no_explorer", false);
  rc.analyzer.no_guideline = c.get_bool("analyzer.no_guideline", false);
  rc.analyzer.parallelism = rc.parallelism;
  rc.procedure_example_limit = positive(c, "attck.procedure_example_limit", 10, 0);

  rc.attck_bundle = resolve(base, c.get("paths.attck_bundle", ""));
  rc.guideline_dir = resolve(base, c.get("paths.guideline_dir", ""));
  rc.run_dir = resolve(base, c.get("paths.run_dir", ""));
  return rc;
}

}  // namespace ttpmap
