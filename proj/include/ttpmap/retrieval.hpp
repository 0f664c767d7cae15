#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ttpmap/attck.hpp"
#include "ttpmap/binary.hpp"
#include "ttpmap/gateway.hpp"

namespace ttpmap {

struct RetrievalConfig {
  std::size_t k = 20;
  double tau = 0.5;
  void validate() const;  // ConfigError unless k >= 1 and 0 <= tau <= 1
};

/// Keyed unit vectors of one shared dimension.
class EmbeddingSet {
 public:
  /// Throws ValidationError on a dimension mismatch, a duplicate key or a
  /// norm further than 1e-6 from 1.
  void add(std::string key, Embedding vector);

  std::size_t size() const { return keys_.size(); }
  std::size_t dimension() const { return dim_; }
  const std::vector<std::string>& keys() const { return keys_; }
  const Embedding& vector(std::size_t i) const { return vectors_[i]; }
  const Embedding* find(std::string_view key) const;

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> keys_;
  std::vector<Embedding> vectors_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// One vector per non-external function with code, from its (renamed) body.
EmbeddingSet embed_functions(const Binary& binary, Gateway& gateway);

/// One vector per technique from "name\ndescription".
EmbeddingSet embed_ttps(const TtpCatalog& catalog, Gateway& gateway);

double cosine(const Embedding& a, const Embedding& b);

struct ScoredFunction {
  std::string func_id;
  double score = 0.0;
  bool operator==(const ScoredFunction&) const = default;
};

/// ttp_id -> top functions, best first
using DenseResult = std::map<std::string, std::vector<ScoredFunction>>;

/// Exact top-k cosine search per technique; ties go to the smaller func_id.
/// Runs the OpenMP kernel.
DenseResult dense_retrieve(const EmbeddingSet& ttps, const EmbeddingSet& funcs, std::size_t k);
/// Same contract on the single-threaded reference kernel.
DenseResult dense_retrieve_serial(const EmbeddingSet& ttps, const EmbeddingSet& funcs, std::size_t k);

struct NeuralProposal {
  std::string ttp_id;
  std::string reasoning;
  double confidence = 0.0;
  bool operator==(const NeuralProposal&) const = default;
};

struct NeuralResult {
  std::vector<NeuralProposal> proposals;
  std::size_t dropped_unknown = 0;
  bool parse_failed = false;
  std::vector<std::string> warnings;
};

/// Prompt with the renamed body, the function's own summary and the
/// summaries of its direct callees.
std::string neural_prompt(const FunctionRecord& func, const Binary& binary);

/// Parses `TTP: <id> | CONFIDENCE: <x> | REASONING: <text>` lines (or a lone
/// `NONE`). Returns nullopt when neither form is present.
std::optional<std::vector<NeuralProposal>> parse_neural_response(std::string_view text);

/// Over-inclusive technique proposals for one function. Confidences are
/// clamped to [0, 1]; sub-technique ids fold into their parent; ids missing
/// from the catalog are dropped and counted. An unparseable answer gets one
/// reformat turn, then yields an empty result flagged `parse_failed`.
NeuralResult neural_retrieve(const FunctionRecord& func, const Binary& binary, const TtpCatalog& catalog,
                             Gateway& gateway);

struct CandidatePair {
  std::string func_id;
  std::string ttp_id;
  std::optional<std::size_t> dense_rank;
  std::optional<double> dense_score;
  std::optional<double> neural_confidence;
  std::optional<std::string> neural_reasoning;
  bool operator==(const CandidatePair&) const = default;
};

struct StageCounts {
  std::size_t dense = 0;             // pairs in some top-k list
  std::size_t neural = 0;            // pairs proposed by neural retrieval
  std::size_t neural_scored = 0;     // proposed with confidence > tau
  std::size_t dense_and_neural = 0;  // dense pairs that neural also proposed
  std::size_t final = 0;             // dense pairs proposed with confidence > tau
  bool operator==(const StageCounts&) const = default;
};

struct CandidateSet {
  StageCounts counts;
  std::vector<CandidatePair> pairs;  // admitted pairs, by ttp_id then dense rank
  bool operator==(const CandidateSet&) const = default;
};

using NeuralMap = std::map<std::string, std::vector<NeuralProposal>>;  // func_id -> proposals

/// Admits (f, t) iff f is within the first k of t's dense list and neural
/// retrieval proposed t for f with confidence strictly above tau.
CandidateSet gate_candidates(const DenseResult& dense, const NeuralMap& neural, const RetrievalConfig& cfg);

/// 1 - count(strategy) / count(dense) for "neural", "neural_w_score" and
/// "full". Throws ValidationError when the dense count is zero.
std::map<std::string, double> reduction_stats(const StageCounts& counts);

std::string serialize_candidates(const CandidateSet& set);
CandidateSet parse_candidates(std::string_view text);

struct RetrievalOutcome {
  DenseResult dense;
  NeuralMap neural;
  CandidateSet candidates;
  std::size_t neural_calls = 0;
  std::vector<std::string> warnings;
};

/// Dense retrieval, neural retrieval on the functions that appear in at least
/// one top-k list, then gating.
RetrievalOutcome retrieve_candidates(const Binary& binary, const TtpCatalog& catalog, Gateway& gateway,
                                     const RetrievalConfig& cfg, std::size_t parallelism = 1);

}  // namespace ttpmap
