#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ttpmap/analyzer.hpp"
#include "ttpmap/gateway.hpp"
#include "ttpmap/retrieval.hpp"

namespace ttpmap {

/// Flat key/value settings read from a TOML-style file: `[section]` headers,
/// `key = value` lines, `#` comments, optional double quotes around values.
/// Keys are stored fully qualified ("retrieval.k").
class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  /// Applies a `key=value` override. Unknown keys are a ConfigError.
  void set(std::string_view assignment);
  void set(const std::string& key, std::string value);

  bool has(std::string_view key) const;
  /// ConfigError naming the key when it is absent.
  const std::string& require(std::string_view key) const;
  std::string get(std::string_view key, std::string fallback) const;
  long long get_int(std::string_view key, long long fallback) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;

  /// Canonical text form, sections sorted; parses back to the same values.
  std::string dump() const;
  const std::map<std::string, std::string, std::less<>>& values() const { return values_; }

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

struct RunConfig {
  GatewayOptions gateway;
  std::string endpoint;
  std::string api_key_env;
  std::optional<std::filesystem::path> mock_script;
  RetrievalConfig retrieval;
  AnalyzerConfig analyzer;
  std::size_t procedure_example_limit = 10;
  std::size_t parallelism = 1;
  std::filesystem::path attck_bundle;
  std::filesystem::path guideline_dir;
  std::filesystem::path run_dir;
};

/// Validates ranges and mode-specific requirements. Relative paths resolve
/// against `base_dir`.
RunConfig to_run_config(const Config& config, const std::filesystem::path& base_dir = {});

}  // namespace ttpmap
