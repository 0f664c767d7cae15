#pragma once

#include <string>

#include "ttpmap/gateway.hpp"

namespace ttpmap {

/// OpenAI-compatible provider: POST {endpoint}/chat/completions and
/// {endpoint}/embeddings with a bearer key. HTTP 429 and 5xx responses and
/// connection failures surface as TransientError.
class HttpBackend : public ChatBackend, public EmbeddingBackend {
 public:
  HttpBackend(std::string endpoint, std::string api_key);

  std::string complete(const ChatRequest& request) override;
  std::vector<Embedding> embed(const std::vector<std::string>& texts, const std::string& model) override;

 private:
  std::string post(const std::string& path, const std::string& body);

  std::string origin_;     // scheme://host[:port]
  std::string base_path_;  // e.g. /v1
  std::string api_key_;
};

}  // namespace ttpmap
