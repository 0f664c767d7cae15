#include "ttpmap/http_backend.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "ttpmap/error.hpp"

namespace ttpmap {

using nlohmann::json;

HttpBackend::HttpBackend(std::string endpoint, std::string api_key) : api_key_(std::move(api_key)) {
  auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) throw ConfigError(fmt::format("provider.endpoint '{}' has no scheme", endpoint));
  auto path_start = endpoint.find('/', scheme_end + 3);
  origin_ = endpoint.substr(0, path_start);
  base_path_ = path_start == std::string::npos ? "" : endpoint.substr(path_start);
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
}

std::string HttpBackend::post(const std::string& path, const std::string& body) {
  httplib::Client client(origin_);
  client.set_connection_timeout(30);
  client.set_read_timeout(300);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(base_path_ + path, headers, body, "application/json");
  if (!res) throw TransientError(fmt::format("POST {}{}: {}", base_path_, path, httplib::to_string(res.error())));
  if (res->status == 429 || res->status >= 500) {
    throw TransientError(fmt::format("POST {}{}: HTTP {}", base_path_, path, res->status));
  }
  if (res->status != 200) {
    throw GatewayError(fmt::format("POST {}{}: HTTP {}: {}", base_path_, path, res->status, res->body.substr(0, 200)));
  }
  return res->body;
}

std::string HttpBackend::complete(const ChatRequest& request) {
  json msgs = json::array();
  if (!request.system.empty()) msgs.push_back({{"role", "system"}, {"content", request.system}});
  for (const auto& m : request.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  json body{{"model", request.model}, {"temperature", request.temperature}, {"messages", msgs}};
  auto reply = json::parse(post("/chat/completions", body.dump()), nullptr, false);
  if (reply.is_discarded()) throw GatewayError("chat completion reply is not JSON");
  try {
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw GatewayError(fmt::format("unexpected chat completion shape: {}", e.what()));
  }
}

std::vector<Embedding> HttpBackend::embed(const std::vector<std::string>& texts, const std::string& model) {
  json body{{"model", model}, {"input", texts}};
  auto reply = json::parse(post("/embeddings", body.dump()), nullptr, false);
  if (reply.is_discarded()) throw GatewayError("embedding reply is not JSON");
  std::vector<Embedding> out(texts.size());
  try {
    for (const auto& item : reply.at("data")) {
      auto idx = item.at("index").get<std::size_t>();
      if (idx >= out.size()) throw GatewayError("embedding reply index out of range");
      out[idx] = item.at("embedding").get<Embedding>();
    }
  } catch (const json::exception& e) {
    throw GatewayError(fmt::format("unexpected embedding reply shape: {}", e.what()));
  }
  return out;
}

}  // namespace ttpmap
