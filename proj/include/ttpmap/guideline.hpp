#pragma once

#include <cstddef>
#include <filesystem>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "ttpmap/attck.hpp"
#include "ttpmap/error.hpp"
#include "ttpmap/gateway.hpp"

namespace ttpmap {

enum class TtpClass { BehaviorFocused, IntentCritical };

std::string_view to_string(TtpClass c);
TtpClass ttp_class_from_string(std::string_view s);

/// Per-technique checklist applied at analysis time.
struct ReasoningGuideline {
  std::string ttp_id;
  TtpClass classification = TtpClass::BehaviorFocused;
  std::vector<std::string> required_components;
  std::vector<std::string> positive_indicators;
  std::vector<std::string> negative_indicators;
  std::vector<std::string> differentiation_criteria;  // each names a confusable technique id
  std::vector<std::string> positive_examples;
  std::vector<std::string> negative_examples;
  std::string attck_version;

  bool operator==(const ReasoningGuideline&) const = default;
};

/// Throws ValidationError when a list is empty or a differentiation
/// criterion lacks a technique id.
void validate_guideline(const ReasoningGuideline& g);

std::string serialize_guideline(const ReasoningGuideline& g);
ReasoningGuideline parse_guideline(std::string_view text);

/// Raised when a synthesis step fails; `step()` is 1-based.
class SynthesisError : public Error {
 public:
  SynthesisError(int step, const std::string& ttp_id, const std::string& what);
  int step() const noexcept { return step_; }

 private:
  int step_;
};

class VersionSkewError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct SynthesisOptions {
  std::size_t procedure_example_limit = 10;
};

/// Step 1: verbatim definition text.
std::string definition_context(const TtpRecord& record);
/// Step 2: sub-technique names and up to `limit` procedure examples.
std::string augmentation_context(const TtpRecord& record, std::size_t limit);

/// Step 3. The response must carry exactly one of the two labels; an
/// ambiguous answer gets one clarification turn before failing.
TtpClass classify_ttp(const TtpRecord& record, Gateway& gateway, const SynthesisOptions& options = {});

/// Runs steps 1-5. Steps 1 and 2 are plain data assembly; steps 3, 4 and 5
/// each take one model call when the responses are well formed.
ReasoningGuideline synthesize_guideline(const TtpRecord& record, Gateway& gateway,
                                        const SynthesisOptions& options = {});

/// Guideline renderings used in analysis prompts.
std::string render_checklist(const ReasoningGuideline& g);

/// One `<ttp_id>.guideline` document per technique.
class GuidelineStore {
 public:
  explicit GuidelineStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void save(const ReasoningGuideline& g);

  /// Loads and validates. A version differing from `expected_version` (when
  /// non-empty) throws VersionSkewError unless `allow_version_skew`, in which
  /// case a warning is appended to `warnings`.
  ReasoningGuideline load(std::string_view ttp_id, std::string_view expected_version = {},
                          bool allow_version_skew = false, std::vector<std::string>* warnings = nullptr) const;

  bool contains(std::string_view ttp_id) const;
  std::vector<std::string> ids() const;
  std::filesystem::path path_for(std::string_view ttp_id) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex write_mu_;
};

}  // namespace ttpmap
