#include "ttpmap/attck.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "ttpmap/error.hpp"
#include "ttpmap/ident.hpp"
#include "ttpmap/io.hpp"

namespace ttpmap {

using nlohmann::json;

TtpCatalog::TtpCatalog(std::vector<TtpRecord> techniques, std::string attck_version)
    : techniques_(std::move(techniques)), version_(std::move(attck_version)) {
  std::sort(techniques_.begin(), techniques_.end(),
            [](const TtpRecord& a, const TtpRecord& b) { return a.ttp_id < b.ttp_id; });
}

const TtpRecord* TtpCatalog::find(std::string_view ttp_id) const {
  std::string parent = parent_technique(ttp_id);
  auto it = std::lower_bound(techniques_.begin(), techniques_.end(), parent,
                             [](const TtpRecord& r, const std::string& id) { return r.ttp_id < id; });
  if (it == techniques_.end() || it->ttp_id != parent) return nullptr;
  return &*it;
}

const TtpRecord& TtpCatalog::at(std::string_view ttp_id) const {
  if (const auto* r = find(ttp_id)) return *r;
  throw NotFoundError(fmt::format("technique '{}' is not in the catalog", ttp_id));
}

namespace {

bool flag(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it != obj.end() && it->is_boolean() && it->get<bool>();
}

std::string str(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it != obj.end() && it->is_string() ? it->get<std::string>() : std::string{};
}

std::string attack_id(const json& obj) {
  auto it = obj.find("external_references");
  if (it == obj.end() || !it->is_array()) return {};
  for (const auto& ref : *it) {
    if (str(ref, "source_name") == "mitre-attack") return str(ref, "external_id");
  }
  return {};
}

struct Procedure {
  std::string modified;
  std::string stix_id;
  std::string text;
};

}  // namespace

TtpCatalog parse_attck_bundle(std::string_view json_text, BundleStats* stats) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("ATT&CK bundle is not valid JSON: {}", e.what()));
  }
  if (!doc.is_object() || str(doc, "type") != "bundle" || !doc.contains("objects") || !doc["objects"].is_array()) {
    throw ParseError("ATT&CK bundle: expected a STIX bundle with an 'objects' array");
  }

  BundleStats local;
  std::string version;
  std::map<std::string, TtpRecord> parents;           // ttp_id -> record
  std::map<std::string, TtpRecord> subs;              // ttp_id -> record
  std::unordered_map<std::string, std::string> by_stix;  // stix id -> ttp_id
  std::vector<std::pair<std::string, const json*>> relationships;

  for (const auto& obj : doc["objects"]) {
    const std::string type = str(obj, "type");
    if (type == "x-mitre-collection") {
      version = str(obj, "x_mitre_version");
      continue;
    }
    if (type == "relationship") {
      if (str(obj, "relationship_type") == "uses") relationships.emplace_back(str(obj, "target_ref"), &obj);
      continue;
    }
    if (type != "attack-pattern") continue;
    ++local.attack_patterns;
    if (flag(obj, "revoked")) {
      ++local.excluded_revoked;
      continue;
    }
    if (flag(obj, "x_mitre_deprecated")) {
      ++local.excluded_deprecated;
      continue;
    }
    TtpRecord rec;
    rec.ttp_id = attack_id(obj);
    if (!is_technique_id(rec.ttp_id)) continue;
    rec.name = str(obj, "name");
    rec.description = str(obj, "description");
    if (auto it = obj.find("kill_chain_phases"); it != obj.end() && it->is_array()) {
      for (const auto& phase : *it) {
        if (str(phase, "kill_chain_name") == "mitre-attack") rec.tactics.insert(str(phase, "phase_name"));
      }
    }
    by_stix.emplace(str(obj, "id"), rec.ttp_id);
    bool is_sub = flag(obj, "x_mitre_is_subtechnique") || rec.ttp_id.find('.') != std::string::npos;
    (is_sub ? subs : parents).emplace(rec.ttp_id, std::move(rec));
  }

  std::map<std::string, std::vector<Procedure>> procedures;
  for (const auto& [target, rel] : relationships) {
    if (flag(*rel, "revoked") || flag(*rel, "x_mitre_deprecated")) continue;
    auto it = by_stix.find(target);
    if (it == by_stix.end()) continue;
    std::string text = str(*rel, "description");
    if (text.empty()) continue;
    procedures[it->second].push_back({str(*rel, "modified"), str(*rel, "id"), std::move(text)});
  }
  auto attach = [&](TtpRecord& rec) {
    auto it = procedures.find(rec.ttp_id);
    if (it == procedures.end()) return;
    auto& list = it->second;
    // ISO-8601 timestamps compare lexicographically
    std::sort(list.begin(), list.end(), [](const Procedure& a, const Procedure& b) {
      if (a.modified != b.modified) return a.modified > b.modified;
      return a.stix_id < b.stix_id;
    });
    for (auto& p : list) rec.procedure_examples.push_back(std::move(p.text));
    local.procedure_examples += list.size();
  };

  for (auto& [id, sub] : subs) {
    sub.attck_version = version;
    attach(sub);
    auto parent = parents.find(parent_technique(id));
    if (parent == parents.end()) {
      ++local.orphan_sub_techniques;
      continue;
    }
    ++local.sub_techniques;
    parent->second.sub_techniques.push_back(std::move(sub));
  }

  std::vector<TtpRecord> out;
  out.reserve(parents.size());
  for (auto& [id, rec] : parents) {
    rec.attck_version = version;
    attach(rec);
    out.push_back(std::move(rec));
  }
  if (out.empty()) throw ValidationError("ATT&CK bundle contains no usable techniques");
  if (stats) *stats = local;
  return TtpCatalog(std::move(out), version);
}

TtpCatalog load_attck_bundle(const std::filesystem::path& path, BundleStats* stats) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ParseError(e.what());
  }
  return parse_attck_bundle(text, stats);
}

}  // namespace ttpmap
