#pragma once

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <regex>
#include <string>
#include <tuple>
#include <vector>

#include "ttpmap/binary.hpp"
#include "ttpmap/gateway.hpp"
#include "ttpmap/mock_backend.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(TTPMAP_FIXTURE_DIR) / name;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("ttpmap-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct Fn {
  std::string id;
  std::uint64_t address;
  std::string name;
  std::string code;
  bool external = false;
};

/// Binary with callees recomputed from the code, as the loader does.
inline ttpmap::Binary make_binary(const std::vector<Fn>& fns, const std::string& id = "test-bin") {
  ttpmap::Binary b;
  b.binary_id = id;
  b.platform = ttpmap::Platform::Linux;
  std::set<std::string> known;
  for (const auto& f : fns) known.insert(f.name);
  for (const auto& f : fns) {
    ttpmap::FunctionRecord r;
    r.func_id = f.id;
    r.entry_address = f.address;
    r.raw_name = f.name;
    r.decompiled_code = f.code;
    r.external = f.external;
    if (!f.external) r.callee_names = ttpmap::extract_callees(ttpmap::function_body(f.code), known);
    b.functions.push_back(std::move(r));
  }
  return b;
}

inline ttpmap::GatewayOptions mock_options() {
  ttpmap::GatewayOptions o;
  o.mode = ttpmap::BackendMode::Mock;
  o.parallelism = 4;
  return o;
}

inline std::shared_ptr<ttpmap::Gateway> mock_gateway(std::shared_ptr<ttpmap::ScriptedMock> mock,
                                                     ttpmap::GatewayOptions options = mock_options()) {
  return std::make_shared<ttpmap::Gateway>(options, std::move(mock),
                                           std::make_shared<ttpmap::HashEmbeddingBackend>());
}

/// Rename mock: answers every snippet with `n_<signature name>` and the
/// summary `body of <signature name>`.
inline std::shared_ptr<ttpmap::ScriptedMock> echo_renamer() {
  auto mock = std::make_shared<ttpmap::ScriptedMock>();
  ttpmap::ScriptedMock::Rule rule;
  rule.name = "rename";
  rule.contains = {"Recovered function name"};
  rule.responder = [](const ttpmap::ChatRequest& req) {
    static const std::regex sig(R"(Below is your code snippet\.\n[^(]*?([A-Za-z_]\w*)\()");
    std::smatch m;
    const std::string& text = req.last_message();
    std::string raw = std::regex_search(text, m, sig) ? m[1].str() : "unknown";
    return "SUMMARY: body of " + raw + "\nNAME: n_" + raw;
  };
  mock->add(std::move(rule));
  return mock;
}

inline std::vector<double> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> nd;
  std::vector<double> v(dim);
  double n = 0;
  for (auto& x : v) {
    x = nd(rng);
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

/// Brute-force top-k: every dot product, full sort by score then key, truncate.
inline std::map<std::string, std::vector<std::pair<std::string, double>>> brute_force_topk(
    const std::vector<std::pair<std::string, std::vector<double>>>& queries,
    const std::vector<std::pair<std::string, std::vector<double>>>& corpus, std::size_t k) {
  std::map<std::string, std::vector<std::pair<std::string, double>>> out;
  for (const auto& [qk, qv] : queries) {
    std::vector<std::pair<std::string, double>> all;
    for (const auto& [ck, cv] : corpus) {
      double s = 0.0;
      for (std::size_t i = 0; i < qv.size(); ++i) s += qv[i] * cv[i];
      all.emplace_back(ck, s);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (all.size() > k) all.resize(k);
    out[qk] = std::move(all);
  }
  return out;
}

}  // namespace testing
