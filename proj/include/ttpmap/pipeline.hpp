#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttpmap/config.hpp"
#include "ttpmap/error.hpp"
#include "ttpmap/gateway.hpp"
#include "ttpmap/mock_backend.hpp"

namespace ttpmap {

inline constexpr const char* kToolVersion = "0.1.0";

/// An error tagged with the pipeline stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)), detail_(what) {}
  const std::string& stage() const noexcept { return stage_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string stage_;
  std::string detail_;
};

/// The gateway plus handles on the backends behind it, for inspection.
struct GatewayHandle {
  std::shared_ptr<Gateway> gateway;
  std::shared_ptr<ScriptedMock> mock;          // set when a mock script drives chat
  std::shared_ptr<NoNetworkBackend> guard;     // set in replay mode
};

/// Mock and record-with-script modes answer from the configured script;
/// embedding models named mock-hash / mock-bow are computed locally. Replay
/// mode installs a backend that fails on any call.
GatewayHandle make_gateway(const RunConfig& rc);

struct CommandOptions {
  std::filesystem::path config_path;   // recorded in the manifest
  bool resume = false;
  bool allow_version_skew = false;
  std::optional<std::string> ablation;  // no_explorer | no_guideline
  std::vector<std::string> ttps;        // restricts the technique catalog
  std::optional<std::filesystem::path> output;
  std::optional<std::filesystem::path> dot;
};

using Summary = nlohmann::ordered_json;

/// Load, deduplicate and graph a binary export; writes the normalized export.
Summary cmd_ingest(const Config& config, const std::filesystem::path& export_path, const CommandOptions& opts);

/// Ingest, call graph, bottom-up renaming and identifier rewrite; writes the
/// renamed export and keeps a checkpoint in the run directory.
Summary cmd_rename(const Config& config, const std::filesystem::path& export_path, const CommandOptions& opts);

/// Synthesizes one guideline per catalog technique into the guideline store.
Summary cmd_guidelines(const Config& config, const CommandOptions& opts);

/// Dense + neural retrieval and gating; writes candidates.json.
Summary cmd_retrieve(const Config& config, const std::filesystem::path& renamed_export, const CommandOptions& opts);

/// Agent analysis of a candidate dump; writes report.json, report.txt and
/// transcripts.
Summary cmd_analyze(const Config& config, const std::filesystem::path& renamed_export,
                    const std::filesystem::path& candidates, const CommandOptions& opts);

/// retrieve followed by analyze.
Summary cmd_run(const Config& config, const std::filesystem::path& renamed_export, const CommandOptions& opts);

struct EvalInputs {
  std::vector<std::filesystem::path> reports;        // analysis reports, one per binary
  std::vector<std::filesystem::path> ground_truths;  // matching {"reported", "validated"} files
  std::optional<std::filesystem::path> annotations;  // function-level labels
  std::optional<std::filesystem::path> binary;       // export listing the evaluated functions
  std::vector<std::string> ttps;                     // instance techniques; defaults to the labeled ones
  std::optional<std::filesystem::path> output;       // writes <output>.txt / <output>.json
};

Summary cmd_eval(const EvalInputs& inputs);

/// Stage counts and reduction fractions of a candidate dump.
Summary cmd_stats(const std::filesystem::path& candidates);

}  // namespace ttpmap
