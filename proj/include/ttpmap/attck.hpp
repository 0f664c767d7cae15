#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ttpmap {

/// An ATT&CK technique. Sub-techniques hang off their parent and never
/// carry sub-techniques of their own.
struct TtpRecord {
  std::string ttp_id;
  std::string name;
  std::set<std::string> tactics;
  std::string description;
  std::vector<TtpRecord> sub_techniques;
  std::vector<std::string> procedure_examples;  // most recent first
  std::string attck_version;

  bool operator==(const TtpRecord&) const = default;
};

/// Parent techniques sorted by ttp_id.
class TtpCatalog {
 public:
  TtpCatalog() = default;
  TtpCatalog(std::vector<TtpRecord> techniques, std::string attck_version);

  const std::vector<TtpRecord>& techniques() const { return techniques_; }
  const std::string& attck_version() const { return version_; }
  std::size_t size() const { return techniques_.size(); }
  bool empty() const { return techniques_.empty(); }

  /// Looks up a parent technique; sub-technique ids resolve to their parent.
  const TtpRecord* find(std::string_view ttp_id) const;
  const TtpRecord& at(std::string_view ttp_id) const;  // NotFoundError
  bool contains(std::string_view ttp_id) const { return find(ttp_id) != nullptr; }

 private:
  std::vector<TtpRecord> techniques_;
  std::string version_;
};

struct BundleStats {
  std::size_t attack_patterns = 0;
  std::size_t excluded_revoked = 0;
  std::size_t excluded_deprecated = 0;
  std::size_t sub_techniques = 0;
  std::size_t orphan_sub_techniques = 0;
  std::size_t procedure_examples = 0;
};

/// Reads an ATT&CK STIX 2.1 bundle. Revoked and deprecated attack-patterns
/// are skipped, sub-techniques are attached to their parents and "uses"
/// relationship descriptions become procedure examples.
/// Throws ParseError for unreadable bundles and ValidationError when no
/// technique survives.
TtpCatalog load_attck_bundle(const std::filesystem::path& path, BundleStats* stats = nullptr);
TtpCatalog parse_attck_bundle(std::string_view json_text, BundleStats* stats = nullptr);

}  // namespace ttpmap
