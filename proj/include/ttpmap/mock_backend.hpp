#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "ttpmap/gateway.hpp"

namespace ttpmap {

/// Deterministic, offline chat backend answering from an ordered rule list.
/// The first rule whose matcher accepts the request answers it.
class ScriptedMock : public ChatBackend {
 public:
  enum class Scope { Prompt, LastMessage };

  struct Rule {
    std::string name;
    std::vector<std::string> contains;  // all must occur
    std::optional<std::regex> pattern;
    Scope scope = Scope::Prompt;
    // Served in order; the last one repeats once the list is exhausted.
    std::vector<std::string> responses;
    std::function<std::string(const ChatRequest&)> responder;
  };

  ScriptedMock() = default;
  explicit ScriptedMock(std::vector<Rule> rules, std::optional<std::string> default_response = std::nullopt);

  /// Rules file: {"rules": [{"name", "contains": str|[str], "regex", "scope": "prompt"|"last",
  /// "response": str | "responses": [str]}], "default": str}
  static std::shared_ptr<ScriptedMock> from_file(const std::filesystem::path& path);
  static std::shared_ptr<ScriptedMock> from_json(std::string_view text);

  ScriptedMock& add(Rule rule);
  ScriptedMock& on(std::string needle, std::string response, Scope scope = Scope::Prompt);
  ScriptedMock& on_sequence(std::string needle, std::vector<std::string> responses, Scope scope = Scope::Prompt);
  ScriptedMock& set_default(std::string response);

  std::string complete(const ChatRequest& request) override;

  std::size_t count(std::string_view rule_name) const;
  std::size_t total_calls() const;
  std::size_t unmatched_calls() const;
  std::vector<ChatRequest> requests() const;

 private:
  std::vector<Rule> rules_;
  std::optional<std::string> default_;
  mutable std::mutex mu_;
  std::vector<std::size_t> counters_;
  std::size_t unmatched_ = 0;
  std::vector<ChatRequest> log_;
};

/// Embedding backend deriving each vector from a hash of the text: the
/// FNV-1a 64 hash of the text seeds a splitmix64 stream, and component i is
/// the i-th draw mapped to [-1, 1) as (z >> 11) * 2^-53 * 2 - 1.
class HashEmbeddingBackend : public EmbeddingBackend {
 public:
  explicit HashEmbeddingBackend(std::size_t dimension = 64) : dimension_(dimension) {}
  std::vector<Embedding> embed(const std::vector<std::string>& texts, const std::string& model) override;
  static Embedding vector_for(std::string_view text, std::size_t dimension);

 private:
  std::size_t dimension_;
};

/// Bag-of-tokens variant: the sum of hash vectors of the lowercase word
/// tokens, so texts sharing vocabulary land close together.
class TokenHashEmbeddingBackend : public EmbeddingBackend {
 public:
  explicit TokenHashEmbeddingBackend(std::size_t dimension = 64) : dimension_(dimension) {}
  std::vector<Embedding> embed(const std::vector<std::string>& texts, const std::string& model) override;

 private:
  std::size_t dimension_;
};

/// Fails every call. Installed in replay runs to prove nothing goes live.
class NoNetworkBackend : public ChatBackend, public EmbeddingBackend {
 public:
  std::string complete(const ChatRequest& request) override;
  std::vector<Embedding> embed(const std::vector<std::string>& texts, const std::string& model) override;
  std::size_t attempts() const { return attempts_.load(); }

 private:
  std::atomic<std::size_t> attempts_{0};
};

}  // namespace ttpmap
