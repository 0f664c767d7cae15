#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <condition_variable>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ttpmap {

struct ChatMessage {
  std::string role;  // "user" or "assistant"
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string system;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::string model;

  /// Flat text of the whole conversation, used by prompt matchers.
  std::string rendered() const;
  const std::string& last_message() const;
};

/// Stable SHA-256 over model, temperature, system text and messages.
/// Independent of how the request object was assembled.
std::string fingerprint(const ChatRequest& request);

using Embedding = std::vector<double>;

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// Throws TransientError for retryable failures.
  virtual std::string complete(const ChatRequest& request) = 0;
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::vector<Embedding> embed(const std::vector<std::string>& texts, const std::string& model) = 0;
};

enum class BackendMode { Live, Record, Replay, Mock };

std::string_view to_string(BackendMode mode);
BackendMode backend_mode_from_string(std::string_view s);

/// Token bucket limiting request starts to `per_minute`, with a burst of one.
class RateLimiter {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;
  using Sleeper = std::function<void(std::chrono::nanoseconds)>;

  explicit RateLimiter(double per_minute, Clock clock = {}, Sleeper sleeper = {});
  /// Blocks until a token is available. Returns the time spent waiting.
  std::chrono::nanoseconds acquire();

 private:
  double per_minute_;
  Clock clock_;
  Sleeper sleeper_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_free_{};
  bool started_ = false;
};

struct GatewayOptions {
  BackendMode mode = BackendMode::Mock;
  std::string model = "mock-chat";
  std::string embedding_model = "mock-hash";
  double temperature = 0.0;
  std::filesystem::path cache_dir;   // embedding cache; empty keeps it in memory
  std::filesystem::path record_dir;  // record/replay store
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  double requests_per_minute = 0.0;  // 0 = unlimited
  std::size_t parallelism = 4;
  bool cache_chat = false;  // memoize chat responses by fingerprint
};

struct GatewayStats {
  std::size_t chat_requests = 0;     // calls to Gateway::chat
  std::size_t backend_chat_calls = 0;  // attempts reaching the chat backend
  std::size_t embed_texts = 0;       // texts passed to Gateway::embed
  std::size_t backend_embed_texts = 0;  // texts actually computed by the backend
  std::size_t replay_hits = 0;
  int last_attempts = 0;             // attempts used by the most recent chat
};

/// Provider-neutral access point shared by every stage. Safe for concurrent
/// callers; backend concurrency is capped at `parallelism`.
class Gateway {
 public:
  Gateway(GatewayOptions options, std::shared_ptr<ChatBackend> chat_backend,
          std::shared_ptr<EmbeddingBackend> embedding_backend);

  /// Fills in model and temperature when the request leaves them unset.
  std::string chat(ChatRequest request);

  /// One unit-norm vector per text, cached by hash(model, text).
  std::vector<Embedding> embed(const std::vector<std::string>& texts);

  GatewayStats stats() const;
  const GatewayOptions& options() const { return options_; }

  void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) { sleeper_ = std::move(sleeper); }

 private:
  std::string call_with_retry(const ChatRequest& request);
  std::string embedding_key(std::string_view text) const;
  void acquire_slot();
  void release_slot();

  GatewayOptions options_;
  std::shared_ptr<ChatBackend> chat_backend_;
  std::shared_ptr<EmbeddingBackend> embedding_backend_;
  std::function<void(std::chrono::milliseconds)> sleeper_;
  std::unique_ptr<RateLimiter> limiter_;

  mutable std::mutex mu_;
  std::condition_variable slot_cv_;
  std::size_t in_flight_ = 0;
  GatewayStats stats_;
  std::unordered_map<std::string, std::string> chat_cache_;
  std::unordered_map<std::string, Embedding> embed_cache_;
};

/// L2-normalizes in place. Zero vectors are left unchanged.
void normalize(Embedding& v);

}  // namespace ttpmap
