#include "ttpmap/guideline.hpp"

#include <algorithm>
#include <regex>

#include <fmt/format.h>
#include <json.hpp>

#include "ttpmap/ident.hpp"
#include "ttpmap/io.hpp"

namespace ttpmap {

using ordered_json = nlohmann::ordered_json;

namespace {

const std::regex& technique_pattern() {
  static const std::regex re(R"(T\d{4}(\.\d{3})?)");
  return re;
}

constexpr std::string_view kSystem =
    "You are a senior malware analyst who distills MITRE ATT&CK techniques into precise attribution "
    "guidance for reviewing decompiled code.";

ChatMessage user(std::string text) { return {"user", std::move(text)}; }
ChatMessage assistant(std::string text) { return {"assistant", std::move(text)}; }

// Values of `LABEL: value` lines, label matched case-insensitively at line start.
std::vector<std::string> labeled_lines(std::string_view text, std::string_view label) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line = trim(text.substr(pos, end - pos));
    while (!line.empty() && (line.front() == '-' || line.front() == '*')) line = trim(line.substr(1));
    if (line.size() > label.size() && line[label.size()] == ':') {
      bool match = std::equal(label.begin(), label.end(), line.begin(), [](char a, char b) {
        return std::toupper(static_cast<unsigned char>(a)) == std::toupper(static_cast<unsigned char>(b));
      });
      if (match) {
        std::string value = trim(std::string_view(line).substr(label.size() + 1));
        if (!value.empty()) out.push_back(std::move(value));
      }
    }
    pos = end + 1;
  }
  return out;
}

std::string bullet_list(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& i : items) out += "- " + i + "\n";
  return out;
}

std::string classification_meaning(TtpClass c) {
  return c == TtpClass::BehaviorFocused
             ? "behavior_focused: the presence of the characteristic action is sufficient, regardless of intent"
             : "intent_critical: the low-level actions can be benign; attribution requires evidence of adversarial "
               "purpose";
}

}  // namespace

std::string_view to_string(TtpClass c) {
  return c == TtpClass::BehaviorFocused ? "behavior_focused" : "intent_critical";
}

TtpClass ttp_class_from_string(std::string_view s) {
  if (s == "behavior_focused") return TtpClass::BehaviorFocused;
  if (s == "intent_critical") return TtpClass::IntentCritical;
  throw ParseError(fmt::format("unknown guideline classification '{}'", s));
}

SynthesisError::SynthesisError(int step, const std::string& ttp_id, const std::string& what)
    : Error(fmt::format("guideline synthesis for {} failed at step {}: {}", ttp_id, step, what)), step_(step) {}

void validate_guideline(const ReasoningGuideline& g) {
  if (!is_technique_id(g.ttp_id)) throw ValidationError(fmt::format("guideline has invalid ttp_id '{}'", g.ttp_id));
  auto require = [&](const std::vector<std::string>& v, const char* field) {
    if (v.empty()) throw ValidationError(fmt::format("guideline {}: '{}' is empty", g.ttp_id, field));
  };
  require(g.required_components, "required_components");
  require(g.positive_indicators, "positive_indicators");
  require(g.negative_indicators, "negative_indicators");
  require(g.differentiation_criteria, "differentiation_criteria");
  require(g.positive_examples, "positive_examples");
  require(g.negative_examples, "negative_examples");
  for (const auto& c : g.differentiation_criteria) {
    if (!std::regex_search(c, technique_pattern())) {
      throw ValidationError(
          fmt::format("guideline {}: differentiation criterion names no technique: '{}'", g.ttp_id, c));
    }
  }
}

std::string serialize_guideline(const ReasoningGuideline& g) {
  ordered_json doc;
  doc["ttp_id"] = g.ttp_id;
  doc["classification"] = std::string(to_string(g.classification));
  doc["required_components"] = g.required_components;
  doc["positive_indicators"] = g.positive_indicators;
  doc["negative_indicators"] = g.negative_indicators;
  doc["differentiation_criteria"] = g.differentiation_criteria;
  doc["positive_examples"] = g.positive_examples;
  doc["negative_examples"] = g.negative_examples;
  doc["attck_version"] = g.attck_version;
  return doc.dump(2) + "\n";
}

ReasoningGuideline parse_guideline(std::string_view text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw ParseError(fmt::format("guideline document is not valid JSON: {}", e.what()));
  }
  ReasoningGuideline g;
  try {
    g.ttp_id = doc.at("ttp_id").get<std::string>();
    g.classification = ttp_class_from_string(doc.at("classification").get<std::string>());
    g.required_components = doc.at("required_components").get<std::vector<std::string>>();
    g.positive_indicators = doc.at("positive_indicators").get<std::vector<std::string>>();
    g.negative_indicators = doc.at("negative_indicators").get<std::vector<std::string>>();
    g.differentiation_criteria = doc.at("differentiation_criteria").get<std::vector<std::string>>();
    g.positive_examples = doc.at("positive_examples").get<std::vector<std::string>>();
    g.negative_examples = doc.at("negative_examples").get<std::vector<std::string>>();
    g.attck_version = doc.at("attck_version").get<std::string>();
  } catch (const ordered_json::exception& e) {
    throw ParseError(fmt::format("guideline document: {}", e.what()));
  }
  validate_guideline(g);
  return g;
}

std::string definition_context(const TtpRecord& record) {
  std::string out = fmt::format("Technique: {} {}\n", record.ttp_id, record.name);
  if (!record.tactics.empty()) {
    std::string tactics;
    for (const auto& t : record.tactics) tactics += (tactics.empty() ? "" : ", ") + t;
    out += "Tactics: " + tactics + "\n";
  }
  out += "Definition:\n" + record.description + "\n";
  return out;
}

std::string augmentation_context(const TtpRecord& record, std::size_t limit) {
  std::string out;
  if (!record.sub_techniques.empty()) {
    out += "Sub-techniques:\n";
    for (const auto& s : record.sub_techniques) out += fmt::format("- {} {}\n", s.ttp_id, s.name);
  }
  std::size_t n = std::min(limit, record.procedure_examples.size());
  if (n > 0) {
    out += "Procedure examples:\n";
    for (std::size_t i = 0; i < n; ++i) out += "- " + record.procedure_examples[i] + "\n";
  }
  return out;
}

namespace {

std::string knowledge_context(const TtpRecord& record, const SynthesisOptions& options) {
  return definition_context(record) + augmentation_context(record, options.procedure_example_limit);
}

std::optional<TtpClass> parse_classification(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::replace(lower.begin(), lower.end(), '-', '_');
  bool behavior = lower.find("behavior_focused") != std::string::npos;
  bool intent = lower.find("intent_critical") != std::string::npos;
  if (behavior == intent) return std::nullopt;
  return behavior ? TtpClass::BehaviorFocused : TtpClass::IntentCritical;
}

TtpClass classify_with_context(const TtpRecord& record, Gateway& gateway, const std::string& context) {
  ChatRequest req;
  req.system = std::string(kSystem);
  req.messages.push_back(user(
      context +
      "\nQuestion: Classify the attribution logic this technique requires.\n"
      "- behavior_focused: the presence of a characteristic action is sufficient, regardless of intent.\n"
      "- intent_critical: similar low-level actions may be benign unless accompanied by evidence of "
      "adversarial purpose.\n"
      "Answer with one line: CLASSIFICATION: <behavior_focused|intent_critical>"));
  std::string reply;
  try {
    reply = gateway.chat(req);
  } catch (const Error& e) {
    throw SynthesisError(3, record.ttp_id, e.what());
  }
  if (auto c = parse_classification(reply)) return *c;

  req.messages.push_back(assistant(reply));
  req.messages.push_back(user("Your answer must name exactly one label. Reply with exactly one line: "
                              "CLASSIFICATION: behavior_focused or CLASSIFICATION: intent_critical"));
  try {
    reply = gateway.chat(req);
  } catch (const Error& e) {
    throw SynthesisError(3, record.ttp_id, e.what());
  }
  if (auto c = parse_classification(reply)) return *c;
  throw SynthesisError(3, record.ttp_id, "classification response names neither or both labels");
}

}  // namespace

TtpClass classify_ttp(const TtpRecord& record, Gateway& gateway, const SynthesisOptions& options) {
  if (record.description.empty()) throw ValidationError(fmt::format("technique {} has no description", record.ttp_id));
  return classify_with_context(record, gateway, knowledge_context(record, options));
}

ReasoningGuideline synthesize_guideline(const TtpRecord& record, Gateway& gateway, const SynthesisOptions& options) {
  if (record.description.empty()) {
    throw SynthesisError(1, record.ttp_id, "technique has no definition text");
  }
  // Steps 1-2: knowledge-base content, verbatim.
  const std::string context = knowledge_context(record, options);

  // Step 3
  const TtpClass cls = classify_with_context(record, gateway, context);

  // Step 4: contrastive examples, conditioned on the classification.
  ChatRequest ex;
  ex.system = std::string(kSystem);
  ex.messages.push_back(user(
      context + "\nClassification: " + classification_meaning(cls) +
      "\n\nTask: Synthesize representative positive examples that capture common implementations of this "
      "technique across platforms, APIs and malware families, and complementary negative examples that reflect "
      "benign behaviors or closely related techniques. Give at least two of each, one per line:\n"
      "POSITIVE: <example>\nNEGATIVE: <example>"));
  std::vector<std::string> positives, negatives;
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string reply;
    try {
      reply = gateway.chat(ex);
    } catch (const Error& e) {
      throw SynthesisError(4, record.ttp_id, e.what());
    }
    positives = labeled_lines(reply, "POSITIVE");
    negatives = labeled_lines(reply, "NEGATIVE");
    if (positives.size() >= 2 && negatives.size() >= 2) break;
    if (attempt == 1) throw SynthesisError(4, record.ttp_id, "fewer than two positive or negative examples");
    ex.messages.push_back(assistant(reply));
    ex.messages.push_back(user("Reformat: give at least two `POSITIVE:` lines and at least two `NEGATIVE:` lines."));
  }

  // Step 5: consolidation.
  ChatRequest cons;
  cons.system = std::string(kSystem);
  cons.messages.push_back(user(
      context + "\nClassification: " + classification_meaning(cls) + "\n\nPositive examples:\n" +
      bullet_list(positives) + "Negative examples:\n" + bullet_list(negatives) +
      "\nTask: Consolidate everything above into a concise reasoning guideline for deciding whether a decompiled "
      "function implements this technique. Use one item per line:\n"
      "REQUIRED: <component that must be present>\n"
      "POSITIVE_INDICATOR: <behavior that supports attribution>\n"
      "NEGATIVE_INDICATOR: <behavior that argues against attribution>\n"
      "DIFFERENTIATION: <criterion separating this technique from a confusable one; name its id, e.g. T1562>"));
  ReasoningGuideline g;
  g.ttp_id = record.ttp_id;
  g.classification = cls;
  g.positive_examples = positives;
  g.negative_examples = negatives;
  g.attck_version = record.attck_version;
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string reply;
    try {
      reply = gateway.chat(cons);
    } catch (const Error& e) {
      throw SynthesisError(5, record.ttp_id, e.what());
    }
    g.required_components = labeled_lines(reply, "REQUIRED");
    g.positive_indicators = labeled_lines(reply, "POSITIVE_INDICATOR");
    g.negative_indicators = labeled_lines(reply, "NEGATIVE_INDICATOR");
    g.differentiation_criteria = labeled_lines(reply, "DIFFERENTIATION");
    try {
      validate_guideline(g);
      return g;
    } catch (const ValidationError& e) {
      if (attempt == 1) throw SynthesisError(5, record.ttp_id, e.what());
      cons.messages.push_back(assistant(reply));
      cons.messages.push_back(user(fmt::format(
          "The guideline is incomplete ({}). Reply again with at least one REQUIRED, POSITIVE_INDICATOR, "
          "NEGATIVE_INDICATOR and DIFFERENTIATION line; every DIFFERENTIATION line must name a technique id.",
          e.what())));
    }
  }
  throw SynthesisError(5, record.ttp_id, "unreachable");
}

std::string render_checklist(const ReasoningGuideline& g) {
  std::string out = fmt::format("Reasoning guideline for {} (classification: {})\n", g.ttp_id, to_string(g.classification));
  out += classification_meaning(g.classification) + "\n";
  out += "Required components (all must be satisfied):\n";
  for (const auto& r : g.required_components) out += "[ ] " + r + "\n";
  out += "Positive indicators:\n" + bullet_list(g.positive_indicators);
  out += "Negative indicators:\n" + bullet_list(g.negative_indicators);
  out += "Differentiation criteria:\n" + bullet_list(g.differentiation_criteria);
  out += "Positive examples:\n" + bullet_list(g.positive_examples);
  out += "Negative examples:\n" + bullet_list(g.negative_examples);
  return out;
}

std::filesystem::path GuidelineStore::path_for(std::string_view ttp_id) const {
  return dir_ / (std::string(ttp_id) + ".guideline");
}

void GuidelineStore::save(const ReasoningGuideline& g) {
  validate_guideline(g);
  std::lock_guard lock(write_mu_);
  write_file_atomic(path_for(g.ttp_id), serialize_guideline(g));
}

bool GuidelineStore::contains(std::string_view ttp_id) const { return std::filesystem::exists(path_for(ttp_id)); }

std::vector<std::string> GuidelineStore::ids() const {
  std::vector<std::string> out;
  if (!std::filesystem::is_directory(dir_)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.path().extension() == ".guideline") out.push_back(entry.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

ReasoningGuideline GuidelineStore::load(std::string_view ttp_id, std::string_view expected_version,
                                        bool allow_version_skew, std::vector<std::string>* warnings) const {
  auto path = path_for(ttp_id);
  if (!std::filesystem::exists(path)) {
    throw NotFoundError(fmt::format("no guideline for {} in {}", ttp_id, dir_.string()));
  }
  auto g = parse_guideline(read_file(path));
  if (g.ttp_id != ttp_id) {
    throw ValidationError(fmt::format("{} holds the guideline for {}", path.string(), g.ttp_id));
  }
  if (!expected_version.empty() && g.attck_version != expected_version) {
    auto msg = fmt::format("guideline {} was built on ATT&CK {} but the catalog is {}", ttp_id, g.attck_version,
                           expected_version);
    if (!allow_version_skew) throw VersionSkewError(msg + " (pass --allow-version-skew to use it anyway)");
    if (warnings) warnings->push_back(msg);
  }
  return g;
}

}  // namespace ttpmap
