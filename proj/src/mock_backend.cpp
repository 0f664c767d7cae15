#include "ttpmap/mock_backend.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>
#include <json.hpp>

#include "ttpmap/error.hpp"
#include "ttpmap/hash.hpp"
#include "ttpmap/io.hpp"

namespace ttpmap {

using nlohmann::json;

ScriptedMock::ScriptedMock(std::vector<Rule> rules, std::optional<std::string> default_response)
    : rules_(std::move(rules)), default_(std::move(default_response)), counters_(rules_.size(), 0) {}

std::shared_ptr<ScriptedMock> ScriptedMock::from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("mock script is not valid JSON: {}", e.what()));
  }
  auto mock = std::make_shared<ScriptedMock>();
  const auto& rules = doc.value("rules", json::array());
  for (std::size_t i = 0; i < rules.size(); ++i) {
    const auto& r = rules[i];
    Rule rule;
    rule.name = r.value("name", fmt::format("rule{}", i));
    if (auto it = r.find("contains"); it != r.end()) {
      if (it->is_string()) {
        rule.contains.push_back(it->get<std::string>());
      } else {
        rule.contains = it->get<std::vector<std::string>>();
      }
    }
    if (auto it = r.find("regex"); it != r.end()) rule.pattern.emplace(it->get<std::string>());
    rule.scope = r.value("scope", std::string("prompt")) == "last" ? Scope::LastMessage : Scope::Prompt;
    if (auto it = r.find("responses"); it != r.end()) {
      rule.responses = it->get<std::vector<std::string>>();
    } else if (auto it2 = r.find("response"); it2 != r.end()) {
      rule.responses.push_back(it2->get<std::string>());
    } else {
      throw ParseError(fmt::format("mock rule {} has no response", i));
    }
    mock->add(std::move(rule));
  }
  if (auto it = doc.find("default"); it != doc.end() && it->is_string()) mock->set_default(it->get<std::string>());
  return mock;
}

std::shared_ptr<ScriptedMock> ScriptedMock::from_file(const std::filesystem::path& path) { return from_json(read_file(path)); }

ScriptedMock& ScriptedMock::add(Rule rule) {
  std::lock_guard lock(mu_);
  if (rule.name.empty()) rule.name = fmt::format("rule{}", rules_.size());
  rules_.push_back(std::move(rule));
  counters_.push_back(0);
  return *this;
}

ScriptedMock& ScriptedMock::on(std::string needle, std::string response, Scope scope) {
  return on_sequence(std::move(needle), {std::move(response)}, scope);
}

ScriptedMock& ScriptedMock::on_sequence(std::string needle, std::vector<std::string> responses, Scope scope) {
  Rule r;
  r.name = needle;
  r.contains.push_back(std::move(needle));
  r.scope = scope;
  r.responses = std::move(responses);
  return add(std::move(r));
}

ScriptedMock& ScriptedMock::set_default(std::string response) {
  std::lock_guard lock(mu_);
  default_ = std::move(response);
  return *this;
}

std::string ScriptedMock::complete(const ChatRequest& request) {
  const std::string prompt = request.rendered();
  std::function<std::string(const ChatRequest&)> responder;
  std::string answer;
  {
    std::lock_guard lock(mu_);
    log_.push_back(request);
    bool matched = false;
    for (std::size_t i = 0; i < rules_.size() && !matched; ++i) {
      const auto& rule = rules_[i];
      const std::string& hay = rule.scope == Scope::Prompt ? prompt : request.last_message();
      bool ok = true;
      for (const auto& needle : rule.contains) {
        if (hay.find(needle) == std::string::npos) {
          ok = false;
          break;
        }
      }
      if (ok && rule.pattern) ok = std::regex_search(hay, *rule.pattern);
      if (!ok) continue;
      matched = true;
      std::size_t n = counters_[i]++;
      if (rule.responder) {
        responder = rule.responder;
      } else if (!rule.responses.empty()) {
        answer = rule.responses[std::min(n, rule.responses.size() - 1)];
      }
    }
    if (!matched) {
      ++unmatched_;
      if (!default_) {
        throw GatewayError(fmt::format("mock: no rule matches prompt ({} chars)", prompt.size()));
      }
      answer = *default_;
    }
  }
  return responder ? responder(request) : answer;
}

std::size_t ScriptedMock::count(std::string_view rule_name) const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    if (rules_[i].name == rule_name) n += counters_[i];
  }
  return n;
}

std::size_t ScriptedMock::total_calls() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

std::size_t ScriptedMock::unmatched_calls() const {
  std::lock_guard lock(mu_);
  return unmatched_;
}

std::vector<ChatRequest> ScriptedMock::requests() const {
  std::lock_guard lock(mu_);
  return log_;
}

Embedding HashEmbeddingBackend::vector_for(std::string_view text, std::size_t dimension) {
  std::uint64_t state = fnv1a64(text);
  Embedding v(dimension);
  for (auto& x : v) {
    std::uint64_t z = splitmix64(state);
    x = static_cast<double>(z >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  }
  return v;
}

std::vector<Embedding> HashEmbeddingBackend::embed(const std::vector<std::string>& texts, const std::string&) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(vector_for(t, dimension_));
  return out;
}

std::vector<Embedding> TokenHashEmbeddingBackend::embed(const std::vector<std::string>& texts, const std::string&) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    Embedding acc(dimension_, 0.0);
    std::string token;
    auto flush = [&] {
      if (token.size() > 1) {
        auto v = HashEmbeddingBackend::vector_for(token, dimension_);
        for (std::size_t i = 0; i < dimension_; ++i) acc[i] += v[i];
      }
      token.clear();
    };
    for (char c : t) {
      if (std::isalnum(static_cast<unsigned char>(c))) {
        token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      } else {
        flush();
      }
    }
    flush();
    if (std::all_of(acc.begin(), acc.end(), [](double x) { return x == 0.0; })) {
      acc = HashEmbeddingBackend::vector_for(t, dimension_);
    }
    out.push_back(std::move(acc));
  }
  return out;
}

std::string NoNetworkBackend::complete(const ChatRequest&) {
  ++attempts_;
  throw GatewayError("network access attempted in an offline run");
}

std::vector<Embedding> NoNetworkBackend::embed(const std::vector<std::string>&, const std::string&) {
  ++attempts_;
  throw GatewayError("network access attempted in an offline run");
}

}  // namespace ttpmap
