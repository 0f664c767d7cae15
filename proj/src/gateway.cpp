#include "ttpmap/gateway.hpp"

#include <cmath>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "ttpmap/error.hpp"
#include "ttpmap/hash.hpp"
#include "ttpmap/io.hpp"

namespace ttpmap {

using nlohmann::json;

std::string ChatRequest::rendered() const {
  std::string out;
  if (!system.empty()) out += "[system]\n" + system + "\n";
  for (const auto& m : messages) out += "[" + m.role + "]\n" + m.content + "\n";
  return out;
}

const std::string& ChatRequest::last_message() const {
  static const std::string empty;
  return messages.empty() ? empty : messages.back().content;
}

namespace {

json request_json(const ChatRequest& r) {
  json msgs = json::array();
  for (const auto& m : r.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  // nlohmann::json objects keep keys sorted, so dump() is canonical
  return json{{"model", r.model}, {"temperature", r.temperature}, {"system", r.system}, {"messages", msgs}};
}

}  // namespace

std::string fingerprint(const ChatRequest& request) { return sha256_hex(request_json(request).dump()); }

std::string_view to_string(BackendMode mode) {
  switch (mode) {
    case BackendMode::Live: return "live";
    case BackendMode::Record: return "record";
    case BackendMode::Replay: return "replay";
    case BackendMode::Mock: break;
  }
  return "mock";
}

BackendMode backend_mode_from_string(std::string_view s) {
  if (s == "live") return BackendMode::Live;
  if (s == "record") return BackendMode::Record;
  if (s == "replay") return BackendMode::Replay;
  if (s == "mock") return BackendMode::Mock;
  throw ConfigError(fmt::format("unknown gateway mode '{}' (expected live, record, replay or mock)", s));
}

RateLimiter::RateLimiter(double per_minute, Clock clock, Sleeper sleeper)
    : per_minute_(per_minute), clock_(std::move(clock)), sleeper_(std::move(sleeper)) {
  if (!clock_) clock_ = [] { return std::chrono::steady_clock::now(); };
  if (!sleeper_) sleeper_ = [](std::chrono::nanoseconds d) { std::this_thread::sleep_for(d); };
}

std::chrono::nanoseconds RateLimiter::acquire() {
  if (per_minute_ <= 0.0) return std::chrono::nanoseconds{0};
  const auto interval = std::chrono::nanoseconds(static_cast<std::int64_t>(60e9 / per_minute_));
  std::chrono::nanoseconds wait{0};
  {
    std::lock_guard lock(mu_);
    auto now = clock_();
    if (!started_ || next_free_ <= now) {
      next_free_ = now + interval;
      started_ = true;
    } else {
      wait = next_free_ - now;
      next_free_ += interval;
    }
  }
  if (wait.count() > 0) sleeper_(wait);
  return wait;
}

void normalize(Embedding& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (sq == 0.0) return;
  double n = std::sqrt(sq);
  for (double& x : v) x /= n;
}

Gateway::Gateway(GatewayOptions options, std::shared_ptr<ChatBackend> chat_backend,
                 std::shared_ptr<EmbeddingBackend> embedding_backend)
    : options_(std::move(options)),
      chat_backend_(std::move(chat_backend)),
      embedding_backend_(std::move(embedding_backend)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }),
      limiter_(std::make_unique<RateLimiter>(options_.requests_per_minute)) {
  if (options_.parallelism == 0) options_.parallelism = 1;
  if ((options_.mode == BackendMode::Record || options_.mode == BackendMode::Replay) &&
      options_.record_dir.empty()) {
    throw ConfigError("record and replay modes need record_dir");
  }
}

GatewayStats Gateway::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

void Gateway::acquire_slot() {
  std::unique_lock lock(mu_);
  slot_cv_.wait(lock, [&] { return in_flight_ < options_.parallelism; });
  ++in_flight_;
}

void Gateway::release_slot() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  slot_cv_.notify_one();
}

std::string Gateway::call_with_retry(const ChatRequest& request) {
  if (!chat_backend_) throw GatewayError("no chat backend configured");
  std::chrono::milliseconds backoff = options_.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    limiter_->acquire();
    {
      std::lock_guard lock(mu_);
      ++stats_.backend_chat_calls;
      stats_.last_attempts = attempt;
    }
    try {
      acquire_slot();
      struct Release {
        Gateway* g;
        ~Release() { g->release_slot(); }
      } release{this};
      return chat_backend_->complete(request);
    } catch (const TransientError& e) {
      if (attempt >= options_.max_attempts) {
        throw TransportError(fmt::format("chat failed after {} attempts: {}", attempt, e.what()), attempt);
      }
      sleeper_(backoff);
      backoff *= 2;
    }
  }
}

std::string Gateway::chat(ChatRequest request) {
  if (request.model.empty()) request.model = options_.model;
  if (request.temperature == 0.0) request.temperature = options_.temperature;
  const std::string fp = fingerprint(request);
  {
    std::lock_guard lock(mu_);
    ++stats_.chat_requests;
    if (options_.cache_chat) {
      if (auto it = chat_cache_.find(fp); it != chat_cache_.end()) return it->second;
    }
  }

  std::string response;
  if (options_.mode == BackendMode::Replay) {
    auto path = options_.record_dir / (fp + ".json");
    if (!std::filesystem::exists(path)) throw ReplayMissError(fp);
    response = json::parse(read_file(path)).at("response").get<std::string>();
    std::lock_guard lock(mu_);
    ++stats_.replay_hits;
  } else {
    response = call_with_retry(request);
    if (options_.mode == BackendMode::Record) {
      json rec{{"fingerprint", fp}, {"request", request_json(request)}, {"response", response}};
      write_file_atomic(options_.record_dir / (fp + ".json"), rec.dump(2) + "\n");
    }
  }

  if (options_.cache_chat) {
    std::lock_guard lock(mu_);
    chat_cache_.emplace(fp, response);
  }
  return response;
}

std::string Gateway::embedding_key(std::string_view text) const {
  std::string material = options_.embedding_model;
  material.push_back('\0');
  material.append(text);
  return sha256_hex(material);
}

std::vector<Embedding> Gateway::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) throw ValidationError("embed: empty batch");

  std::vector<std::string> keys;
  keys.reserve(texts.size());
  for (const auto& t : texts) keys.push_back(embedding_key(t));

  std::unordered_map<std::string, Embedding> found;
  std::vector<std::size_t> missing;  // first index of each uncached key
  {
    std::lock_guard lock(mu_);
    stats_.embed_texts += texts.size();
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (found.count(keys[i])) continue;
      if (auto it = embed_cache_.find(keys[i]); it != embed_cache_.end()) {
        found.emplace(keys[i], it->second);
      } else {
        found.emplace(keys[i], Embedding{});
        missing.push_back(i);
      }
    }
  }

  auto load_vector = [](const std::filesystem::path& p) {
    auto doc = json::parse(read_file(p));
    return (doc.is_object() ? doc.at("vector") : doc).get<Embedding>();
  };

  std::vector<std::size_t> to_compute;
  for (auto i : missing) {
    const auto& key = keys[i];
    if (!options_.cache_dir.empty()) {
      auto p = options_.cache_dir / (key + ".json");
      if (std::filesystem::exists(p)) {
        found[key] = load_vector(p);
        continue;
      }
    }
    if (options_.mode == BackendMode::Replay) {
      auto p = options_.record_dir / ("emb-" + key + ".json");
      if (!std::filesystem::exists(p)) throw ReplayMissError("emb-" + key);
      found[key] = load_vector(p);
      std::lock_guard lock(mu_);
      ++stats_.replay_hits;
      continue;
    }
    to_compute.push_back(i);
  }

  if (!to_compute.empty()) {
    if (!embedding_backend_) throw GatewayError("no embedding backend configured");
    std::vector<std::string> batch;
    for (auto i : to_compute) batch.push_back(texts[i]);
    std::vector<Embedding> vecs;
    std::chrono::milliseconds backoff = options_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
      limiter_->acquire();
      try {
        acquire_slot();
        struct Release {
          Gateway* g;
          ~Release() { g->release_slot(); }
        } release{this};
        vecs = embedding_backend_->embed(batch, options_.embedding_model);
        break;
      } catch (const TransientError& e) {
        if (attempt >= options_.max_attempts) {
          std::string failed;
          for (auto i : to_compute) failed += (failed.empty() ? "" : ", ") + keys[i].substr(0, 12);
          throw TransportError(fmt::format("embedding failed after {} attempts for keys [{}]: {}", attempt,
                                           failed, e.what()),
                               attempt);
        }
        sleeper_(backoff);
        backoff *= 2;
      }
    }
    if (vecs.size() != batch.size()) {
      throw GatewayError(fmt::format("embedding backend returned {} vectors for {} texts", vecs.size(), batch.size()));
    }
    {
      std::lock_guard lock(mu_);
      stats_.backend_embed_texts += batch.size();
    }
    for (std::size_t j = 0; j < to_compute.size(); ++j) {
      normalize(vecs[j]);
      const auto& key = keys[to_compute[j]];
      if (!options_.cache_dir.empty()) {
        write_file_atomic(options_.cache_dir / (key + ".json"), json(vecs[j]).dump() + "\n");
      }
      if (options_.mode == BackendMode::Record) {
        json rec{{"model", options_.embedding_model}, {"text", batch[j]}, {"vector", vecs[j]}};
        write_file_atomic(options_.record_dir / ("emb-" + key + ".json"), rec.dump() + "\n");
      }
      found[key] = std::move(vecs[j]);
    }
  }

  std::vector<Embedding> out;
  out.reserve(texts.size());
  {
    std::lock_guard lock(mu_);
    for (const auto& [k, v] : found) embed_cache_.emplace(k, v);
  }
  for (const auto& k : keys) out.push_back(found.at(k));
  return out;
}

}  // namespace ttpmap
