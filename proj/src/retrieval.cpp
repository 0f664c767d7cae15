#include "ttpmap/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>
#include <set>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "ttpmap/dense_kernels.hpp"
#include "ttpmap/error.hpp"
#include "ttpmap/ident.hpp"
#include "ttpmap/parallel.hpp"

namespace ttpmap {

using nlohmann::json;

void RetrievalConfig::validate() const {
  if (k < 1) throw ConfigError("retrieval.k must be at least 1");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("retrieval.tau must lie in [0, 1]");
}

void EmbeddingSet::add(std::string key, Embedding vector) {
  if (vector.empty()) throw ValidationError(fmt::format("embedding for '{}' is empty", key));
  if (keys_.empty()) {
    dim_ = vector.size();
  } else if (vector.size() != dim_) {
    throw ValidationError(
        fmt::format("embedding for '{}' has dimension {}, expected {}", key, vector.size(), dim_));
  }
  double sq = 0.0;
  for (double x : vector) sq += x * x;
  if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
    throw ValidationError(fmt::format("embedding for '{}' is not unit-norm", key));
  }
  if (index_.count(key)) throw ValidationError(fmt::format("duplicate embedding key '{}'", key));
  index_.emplace(key, keys_.size());
  keys_.push_back(std::move(key));
  vectors_.push_back(std::move(vector));
}

const Embedding* EmbeddingSet::find(std::string_view key) const {
  auto it = index_.find(key);
  return it == index_.end() ? nullptr : &vectors_[it->second];
}

EmbeddingSet embed_functions(const Binary& binary, Gateway& gateway) {
  std::vector<std::string> ids, texts;
  for (const auto& f : binary.functions) {
    if (f.external || f.decompiled_code.empty()) continue;
    ids.push_back(f.func_id);
    texts.push_back(f.decompiled_code);
  }
  EmbeddingSet out;
  if (texts.empty()) return out;
  auto vecs = gateway.embed(texts);
  for (std::size_t i = 0; i < ids.size(); ++i) out.add(ids[i], std::move(vecs[i]));
  return out;
}

EmbeddingSet embed_ttps(const TtpCatalog& catalog, Gateway& gateway) {
  std::vector<std::string> ids, texts;
  for (const auto& t : catalog.techniques()) {
    if (t.description.empty()) throw ValidationError(fmt::format("technique {} has no description", t.ttp_id));
    ids.push_back(t.ttp_id);
    texts.push_back(t.name + "\n" + t.description);
  }
  EmbeddingSet out;
  if (texts.empty()) return out;
  auto vecs = gateway.embed(texts);
  for (std::size_t i = 0; i < ids.size(); ++i) out.add(ids[i], std::move(vecs[i]));
  return out;
}

double cosine(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) throw ValidationError("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

namespace {

template <typename Kernel>
DenseResult run_dense(const EmbeddingSet& ttps, const EmbeddingSet& funcs, std::size_t k, Kernel kernel) {
  DenseResult out;
  if (ttps.size() == 0) return out;
  if (funcs.size() == 0) {
    for (const auto& key : ttps.keys()) out[key];
    return out;
  }
  if (ttps.dimension() != funcs.dimension()) {
    throw ValidationError(fmt::format("dense_retrieve: technique vectors have dimension {} but function vectors {}",
                                      ttps.dimension(), funcs.dimension()));
  }
  const std::size_t dim = ttps.dimension();
  std::vector<double> q, c;
  q.reserve(ttps.size() * dim);
  c.reserve(funcs.size() * dim);
  for (std::size_t i = 0; i < ttps.size(); ++i) q.insert(q.end(), ttps.vector(i).begin(), ttps.vector(i).end());
  for (std::size_t i = 0; i < funcs.size(); ++i) c.insert(c.end(), funcs.vector(i).begin(), funcs.vector(i).end());

  std::vector<std::uint32_t> order(funcs.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return funcs.keys()[a] < funcs.keys()[b]; });
  std::vector<std::uint32_t> tie_rank(funcs.size());
  for (std::uint32_t r = 0; r < order.size(); ++r) tie_rank[order[r]] = r;

  auto hits = kernel(q, c, dim, k, tie_rank);
  for (std::size_t t = 0; t < ttps.size(); ++t) {
    auto& list = out[ttps.keys()[t]];
    for (const auto& h : hits[t]) list.push_back({funcs.keys()[h.index], h.score});
  }
  return out;
}

}  // namespace

DenseResult dense_retrieve(const EmbeddingSet& ttps, const EmbeddingSet& funcs, std::size_t k) {
  return run_dense(ttps, funcs, k, [](auto&&... a) { return kernels::topk_dot_parallel(a...); });
}

DenseResult dense_retrieve_serial(const EmbeddingSet& ttps, const EmbeddingSet& funcs, std::size_t k) {
  return run_dense(ttps, funcs, k, [](auto&&... a) { return kernels::topk_dot_serial(a...); });
}

std::string neural_prompt(const FunctionRecord& func, const Binary& binary) {
  std::string out = "Below is your code snippet.\n" + func.decompiled_code + "\n\n";
  out += "Function summary: " + func.summary.value_or("(none)") + "\n";
  std::string callees;
  for (const auto& name : func.callee_names) {
    for (const auto& g : binary.functions) {
      if (g.display_name() != name && g.raw_name != name) continue;
      if (g.summary) callees += fmt::format("- {}: {}\n", g.display_name(), *g.summary);
      break;
    }
  }
  if (!callees.empty()) out += "Direct callee summaries:\n" + callees;
  out +=
      "\nQuestion: You will be given the renamed function body and its summary. Please analyze the function and "
      "identify an over-inclusive set of potentially relevant ATT&CK TTPs that this function exhibits. For each "
      "TTP, provide:\n"
      "1. Brief reasoning (2-3 sentences).\n"
      "2. Confidence score (0.0-1.0).\n"
      "Answer with one line per TTP:\nTTP: <technique id> | CONFIDENCE: <0.0-1.0> | REASONING: <reasoning>\n"
      "If no technique is plausible, answer with the single line NONE.\n";
  return out;
}

std::optional<std::vector<NeuralProposal>> parse_neural_response(std::string_view text) {
  static const std::regex line_re(
      R"(TTP:\s*(T\d{4}(?:\.\d{3})?)\s*\|\s*CONFIDENCE:\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(?:\|\s*REASONING:\s*(.*))?)",
      std::regex::icase);
  std::vector<NeuralProposal> out;
  bool none = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line = trim(text.substr(pos, end - pos));
    std::smatch m;
    if (std::regex_search(line, m, line_re)) {
      NeuralProposal p;
      p.ttp_id = m[1].str();
      p.confidence = std::stod(m[2].str());
      p.reasoning = trim(m[3].str());
      out.push_back(std::move(p));
    } else if (line == "NONE") {
      none = true;
    }
    pos = end + 1;
  }
  if (out.empty() && !none) return std::nullopt;
  return out;
}

NeuralResult neural_retrieve(const FunctionRecord& func, const Binary& binary, const TtpCatalog& catalog,
                             Gateway& gateway) {
  NeuralResult result;
  ChatRequest req;
  req.system = "You are a malware analyst mapping decompiled functions to MITRE ATT&CK techniques.";
  req.messages.push_back({"user", neural_prompt(func, binary)});
  std::string reply = gateway.chat(req);
  auto parsed = parse_neural_response(reply);
  if (!parsed) {
    req.messages.push_back({"assistant", reply});
    req.messages.push_back({"user",
                            "Reformat your answer: one line per technique as "
                            "`TTP: <id> | CONFIDENCE: <0.0-1.0> | REASONING: <text>`, or the single line NONE."});
    parsed = parse_neural_response(gateway.chat(req));
  }
  if (!parsed) {
    result.parse_failed = true;
    result.warnings.push_back(fmt::format("{}: neural retrieval response unparseable; no proposals", func.func_id));
    return result;
  }

  std::map<std::string, NeuralProposal> best;
  for (auto& p : *parsed) {
    const TtpRecord* rec = catalog.find(p.ttp_id);
    if (!rec) {
      ++result.dropped_unknown;
      result.warnings.push_back(fmt::format("{}: dropped unknown technique {}", func.func_id, p.ttp_id));
      continue;
    }
    p.ttp_id = rec->ttp_id;
    p.confidence = std::clamp(p.confidence, 0.0, 1.0);
    auto it = best.find(p.ttp_id);
    if (it == best.end() || p.confidence > it->second.confidence) best[p.ttp_id] = std::move(p);
  }
  for (auto& [id, p] : best) result.proposals.push_back(std::move(p));
  return result;
}

CandidateSet gate_candidates(const DenseResult& dense, const NeuralMap& neural, const RetrievalConfig& cfg) {
  cfg.validate();
  CandidateSet out;

  // (func, ttp) -> proposal
  std::map<std::pair<std::string, std::string>, const NeuralProposal*> proposed;
  for (const auto& [func_id, props] : neural) {
    for (const auto& p : props) {
      auto key = std::make_pair(func_id, p.ttp_id);
      auto it = proposed.find(key);
      if (it == proposed.end() || p.confidence > it->second->confidence) proposed[key] = &p;
    }
  }
  out.counts.neural = proposed.size();
  for (const auto& [key, p] : proposed) {
    if (p->confidence > cfg.tau) ++out.counts.neural_scored;
  }

  for (const auto& [ttp_id, list] : dense) {
    const std::size_t limit = std::min(cfg.k, list.size());
    for (std::size_t r = 0; r < limit; ++r) {
      ++out.counts.dense;
      auto it = proposed.find({list[r].func_id, ttp_id});
      if (it == proposed.end()) continue;
      ++out.counts.dense_and_neural;
      if (!(it->second->confidence > cfg.tau)) continue;
      CandidatePair pair;
      pair.func_id = list[r].func_id;
      pair.ttp_id = ttp_id;
      pair.dense_rank = r + 1;
      pair.dense_score = list[r].score;
      pair.neural_confidence = it->second->confidence;
      pair.neural_reasoning = it->second->reasoning;
      out.pairs.push_back(std::move(pair));
    }
  }
  out.counts.final = out.pairs.size();
  return out;
}

std::map<std::string, double> reduction_stats(const StageCounts& counts) {
  if (counts.dense == 0) throw ValidationError("reduction is undefined when the dense stage is empty");
  auto frac = [&](std::size_t n) { return 1.0 - static_cast<double>(n) / static_cast<double>(counts.dense); };
  return {{"neural", frac(counts.neural)}, {"neural_w_score", frac(counts.neural_scored)}, {"full", frac(counts.final)}};
}

std::string serialize_candidates(const CandidateSet& set) {
  json pairs = json::array();
  for (const auto& p : set.pairs) {
    json j{{"function", p.func_id}, {"ttp", p.ttp_id}};
    if (p.dense_rank) j["dense_rank"] = *p.dense_rank;
    if (p.dense_score) j["dense_score"] = *p.dense_score;
    if (p.neural_confidence) j["neural_confidence"] = *p.neural_confidence;
    if (p.neural_reasoning) j["neural_reasoning"] = *p.neural_reasoning;
    pairs.push_back(std::move(j));
  }
  const auto& c = set.counts;
  json doc{{"counts",
            {{"dense", c.dense},
             {"neural", c.neural},
             {"neural_scored", c.neural_scored},
             {"dense_and_neural", c.dense_and_neural},
             {"final", c.final}}},
           {"pairs", pairs}};
  return doc.dump(2) + "\n";
}

CandidateSet parse_candidates(std::string_view text) {
  CandidateSet out;
  try {
    auto doc = json::parse(text);
    const auto& c = doc.at("counts");
    out.counts.dense = c.at("dense").get<std::size_t>();
    out.counts.neural = c.at("neural").get<std::size_t>();
    out.counts.neural_scored = c.at("neural_scored").get<std::size_t>();
    out.counts.dense_and_neural = c.value("dense_and_neural", std::size_t{0});
    out.counts.final = c.at("final").get<std::size_t>();
    for (const auto& j : doc.at("pairs")) {
      CandidatePair p;
      p.func_id = j.at("function").get<std::string>();
      p.ttp_id = j.at("ttp").get<std::string>();
      if (j.contains("dense_rank")) p.dense_rank = j["dense_rank"].get<std::size_t>();
      if (j.contains("dense_score")) p.dense_score = j["dense_score"].get<double>();
      if (j.contains("neural_confidence")) p.neural_confidence = j["neural_confidence"].get<double>();
      if (j.contains("neural_reasoning")) p.neural_reasoning = j["neural_reasoning"].get<std::string>();
      out.pairs.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("candidate dump: {}", e.what()));
  }
  return out;
}

RetrievalOutcome retrieve_candidates(const Binary& binary, const TtpCatalog& catalog, Gateway& gateway,
                                     const RetrievalConfig& cfg, std::size_t parallelism) {
  cfg.validate();
  RetrievalOutcome out;
  auto funcs = embed_functions(binary, gateway);
  auto ttps = embed_ttps(catalog, gateway);
  out.dense = dense_retrieve(ttps, funcs, cfg.k);

  std::set<std::string> covered;
  for (const auto& [ttp, list] : out.dense) {
    for (const auto& s : list) covered.insert(s.func_id);
  }
  std::vector<const FunctionRecord*> targets;
  for (const auto& f : binary.functions) {
    if (covered.count(f.func_id)) targets.push_back(&f);
  }
  std::vector<NeuralResult> results(targets.size());
  parallel_for(targets.size(), parallelism,
               [&](std::size_t i) { results[i] = neural_retrieve(*targets[i], binary, catalog, gateway); });
  for (std::size_t i = 0; i < targets.size(); ++i) {
    out.neural[targets[i]->func_id] = results[i].proposals;
    out.warnings.insert(out.warnings.end(), results[i].warnings.begin(), results[i].warnings.end());
  }
  out.neural_calls = targets.size();
  out.candidates = gate_candidates(out.dense, out.neural, cfg);
  return out;
}

}  // namespace ttpmap
