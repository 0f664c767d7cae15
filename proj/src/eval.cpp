#include "ttpmap/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "ttpmap/error.hpp"
#include "ttpmap/ident.hpp"
#include "ttpmap/io.hpp"

namespace ttpmap {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

json parse_doc(std::string_view text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", what, e.what()));
  }
}

std::set<std::string> id_set(const json& arr, std::string_view where) {
  if (!arr.is_array()) throw ParseError(fmt::format("{}: expected an array", where));
  std::set<std::string> out;
  for (const auto& v : arr) {
    if (!v.is_string()) throw ParseError(fmt::format("{}: expected technique id strings", where));
    auto id = v.get<std::string>();
    if (!is_technique_id(id)) throw ValidationError(fmt::format("{}: invalid technique id '{}'", where, id));
    out.insert(id);
  }
  return out;
}

}  // namespace

std::vector<FunctionLabel> parse_annotations(std::string_view text) {
  auto doc = parse_doc(text, "annotations");
  if (!doc.is_object() || !doc.contains("labels") || !doc["labels"].is_array()) {
    throw ParseError("annotations: missing field 'labels'");
  }
  std::vector<FunctionLabel> out;
  std::size_t i = 0;
  for (const auto& rec : doc["labels"]) {
    if (!rec.is_object() || !rec.contains("function") || !rec["function"].is_string()) {
      throw ParseError(fmt::format("label {}: missing field 'function'", i));
    }
    FunctionLabel label{rec["function"].get<std::string>(), {}};
    if (rec.contains("ttps")) label.ttp_ids = id_set(rec["ttps"], fmt::format("label {}", i));
    out.push_back(std::move(label));
    ++i;
  }
  return out;
}

std::vector<FunctionLabel> load_annotations(const std::filesystem::path& path) {
  return parse_annotations(read_file(path));
}

std::vector<Instance> build_instances(const std::vector<std::string>& functions, const std::vector<std::string>& ttps,
                                      const std::vector<FunctionLabel>& labels) {
  std::map<std::string, std::set<std::string>> truth;
  std::set<std::string> known(functions.begin(), functions.end());
  for (const auto& l : labels) {
    if (!known.count(l.func_id)) throw ValidationError(fmt::format("label references unknown function '{}'", l.func_id));
    truth[l.func_id].insert(l.ttp_ids.begin(), l.ttp_ids.end());
  }
  std::vector<Instance> out;
  out.reserve(functions.size() * ttps.size());
  for (const auto& f : functions) {
    const auto it = truth.find(f);
    for (const auto& t : ttps) out.push_back({f, t, it != truth.end() && it->second.count(t) > 0});
  }
  return out;
}

double f1_score(double precision, double recall) {
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

Prf prf_from_counts(const ConfusionCounts& c) {
  Prf out;
  if (c.tp + c.fp > 0) out.precision = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) out.recall = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  out.f1 = f1_score(out.precision, out.recall);
  return out;
}

Prf macro_average(const std::vector<Prf>& rows) {
  Prf out;
  if (rows.empty()) return out;
  for (const auto& r : rows) {
    out.precision += r.precision;
    out.recall += r.recall;
    out.f1 += r.f1;
  }
  const auto n = static_cast<double>(rows.size());
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  return out;
}

MetricsReport compute_metrics(const std::set<PairKey>& predictions, const std::vector<Instance>& instances) {
  std::map<std::string, ConfusionCounts> counts;
  std::set<PairKey> keys;
  for (const auto& inst : instances) {
    keys.emplace(inst.func_id, inst.ttp_id);
    bool predicted = predictions.count({inst.func_id, inst.ttp_id}) > 0;
    auto& c = counts[inst.ttp_id];
    if (predicted && inst.truth) ++c.tp;
    else if (predicted) ++c.fp;
    else if (inst.truth) ++c.fn;
    else ++c.tn;
  }
  for (const auto& p : predictions) {
    if (!keys.count(p)) throw ValidationError(fmt::format("prediction ({}, {}) is not an instance", p.first, p.second));
  }
  MetricsReport out;
  std::vector<Prf> rows;
  for (const auto& [ttp, c] : counts) {
    out.per_ttp.push_back({ttp, c, prf_from_counts(c)});
    rows.push_back(out.per_ttp.back().scores);
  }
  out.average = macro_average(rows);
  return out;
}

double round_to(double value, int decimals) {
  double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

BinaryGroundTruth parse_ground_truth(std::string_view text) {
  auto doc = parse_doc(text, "ground truth");
  if (!doc.is_object()) throw ParseError("ground truth: expected an object");
  BinaryGroundTruth out;
  if (doc.contains("reported")) out.reported = id_set(doc["reported"], "reported");
  if (doc.contains("validated")) out.validated = id_set(doc["validated"], "validated");
  return out;
}

BinaryScores binary_eval(const BinaryEvalResult& r) {
  for (const auto& v : r.validated_true) {
    if (!r.predicted.count(v)) throw ValidationError(fmt::format("validated technique {} was not predicted", v));
  }
  BinaryScores out;
  for (const auto& t : r.reported) {
    if (r.predicted.count(t)) ++out.covered;
  }
  if (r.reported.empty()) {
    out.notes.push_back("coverage undefined: no reported techniques");
  } else {
    out.coverage = static_cast<double>(out.covered) / static_cast<double>(r.reported.size());
  }
  if (r.predicted.empty()) {
    out.notes.push_back("precision undefined: no predicted techniques");
  } else {
    out.precision = static_cast<double>(r.validated_true.size()) / static_cast<double>(r.predicted.size());
  }
  for (const auto& t : r.predicted) {
    if (!r.reported.count(t)) ++out.discovered;
  }
  for (const auto& t : r.validated_true) {
    if (!r.reported.count(t)) ++out.discovered_true;
  }
  return out;
}

std::string metrics_table(const MetricsReport& report) {
  std::ostringstream os;
  os << fmt::format("{:<12} {:>10} {:>10} {:>10}\n", "TTP", "Precision", "Recall", "F1");
  for (const auto& row : report.per_ttp) {
    os << fmt::format("{:<12} {:>10.2f} {:>10.2f} {:>10.2f}\n", row.ttp_id, row.scores.precision, row.scores.recall,
                      row.scores.f1);
  }
  if (!report.per_ttp.empty()) {
    os << fmt::format("{:<12} {:>10.2f} {:>10.2f} {:>10.2f}\n", "Average", report.average.precision,
                      report.average.recall, report.average.f1);
  }
  return os.str();
}

namespace {

ordered_json prf_json(const Prf& p) {
  return {{"precision", round_to(p.precision, 2)}, {"recall", round_to(p.recall, 2)}, {"f1", round_to(p.f1, 2)}};
}

Prf prf_from_json(const json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>()};
}

}  // namespace

std::string metrics_json(const MetricsReport& report) {
  ordered_json rows = ordered_json::array();
  for (const auto& r : report.per_ttp) {
    auto j = prf_json(r.scores);
    j["ttp"] = r.ttp_id;
    j["tp"] = r.counts.tp;
    j["fp"] = r.counts.fp;
    j["fn"] = r.counts.fn;
    j["tn"] = r.counts.tn;
    rows.push_back(std::move(j));
  }
  ordered_json doc;
  doc["rows"] = std::move(rows);
  doc["average"] = prf_json(report.average);
  return doc.dump(2) + "\n";
}

MetricsReport parse_metrics_json(std::string_view text) {
  auto doc = parse_doc(text, "metrics report");
  MetricsReport out;
  try {
    for (const auto& r : doc.at("rows")) {
      TtpMetrics m;
      m.ttp_id = r.at("ttp").get<std::string>();
      m.counts = {r.at("tp").get<std::size_t>(), r.at("fp").get<std::size_t>(), r.at("fn").get<std::size_t>(),
                  r.at("tn").get<std::size_t>()};
      m.scores = prf_from_json(r);
      out.per_ttp.push_back(std::move(m));
    }
    out.average = prf_from_json(doc.at("average"));
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("metrics report: {}", e.what()));
  }
  return out;
}

std::string binary_scores_json(const std::string& binary_id, const BinaryScores& s) {
  ordered_json doc;
  doc["binary_id"] = binary_id;
  doc["coverage"] = s.coverage ? ordered_json(round_to(*s.coverage * 100.0, 2)) : ordered_json(nullptr);
  doc["precision"] = s.precision ? ordered_json(round_to(*s.precision * 100.0, 2)) : ordered_json(nullptr);
  doc["covered"] = s.covered;
  doc["discovered"] = s.discovered;
  doc["discovered_true"] = s.discovered_true;
  doc["notes"] = s.notes;
  return doc.dump(2) + "\n";
}

void emit_eval_report(const MetricsReport& report, const std::filesystem::path& out) {
  auto base = out;
  base.replace_extension();
  write_file_atomic(base.string() + ".txt", metrics_table(report));
  write_file_atomic(base.string() + ".json", metrics_json(report));
}

}  // namespace ttpmap
