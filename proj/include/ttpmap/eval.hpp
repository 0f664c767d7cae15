#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ttpmap {

struct FunctionLabel {
  std::string func_id;
  std::set<std::string> ttp_ids;  // empty for benign functions
};

/// Parses `{"labels": [{"function": id, "ttps": [...]}]}`.
std::vector<FunctionLabel> parse_annotations(std::string_view text);
std::vector<FunctionLabel> load_annotations(const std::filesystem::path& path);

struct Instance {
  std::string func_id;
  std::string ttp_id;
  bool truth = false;
};

/// Full cross product functions x ttps. A label naming a function outside
/// `functions` is a ValidationError.
std::vector<Instance> build_instances(const std::vector<std::string>& functions, const std::vector<std::string>& ttps,
                                      const std::vector<FunctionLabel>& labels);

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Percentages in [0, 100]. Zero denominators give 0.
struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool operator==(const Prf&) const = default;
};

Prf prf_from_counts(const ConfusionCounts& c);
double f1_score(double precision, double recall);

/// Unweighted mean over rows; all zero when `rows` is empty.
Prf macro_average(const std::vector<Prf>& rows);

struct TtpMetrics {
  std::string ttp_id;
  ConfusionCounts counts;
  Prf scores;
};

struct MetricsReport {
  std::vector<TtpMetrics> per_ttp;  // sorted by ttp_id
  Prf average;
};

using PairKey = std::pair<std::string, std::string>;  // (func_id, ttp_id)

/// Predictions outside the instance keys are a ValidationError.
MetricsReport compute_metrics(const std::set<PairKey>& predictions, const std::vector<Instance>& instances);

double round_to(double value, int decimals);

struct BinaryGroundTruth {
  std::set<std::string> reported;
  std::set<std::string> validated;
};

/// Parses `{"reported": [...], "validated": [...]}`.
BinaryGroundTruth parse_ground_truth(std::string_view text);

struct BinaryEvalResult {
  std::set<std::string> reported;
  std::set<std::string> predicted;
  std::set<std::string> validated_true;  // subset of predicted
};

struct BinaryScores {
  std::optional<double> coverage;   // fraction; absent when nothing was reported
  std::optional<double> precision;  // fraction; absent when nothing was predicted
  std::size_t covered = 0;
  std::size_t discovered = 0;       // predicted but not reported
  std::size_t discovered_true = 0;  // validated but not reported
  std::vector<std::string> notes;
};

/// Validated techniques outside `predicted` are a ValidationError.
BinaryScores binary_eval(const BinaryEvalResult& result);

/// Fixed-width text table with one row per technique plus an Average row.
std::string metrics_table(const MetricsReport& report);
std::string metrics_json(const MetricsReport& report);
MetricsReport parse_metrics_json(std::string_view text);

std::string binary_scores_json(const std::string& binary_id, const BinaryScores& scores);

/// Writes <out>.txt and <out>.json. IoError when the location is unwritable.
void emit_eval_report(const MetricsReport& report, const std::filesystem::path& out);

}  // namespace ttpmap
