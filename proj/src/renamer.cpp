#include "ttpmap/renamer.hpp"

#include <algorithm>
#include <mutex>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "ttpmap/ident.hpp"
#include "ttpmap/io.hpp"
#include "ttpmap/parallel.hpp"

namespace ttpmap {

using nlohmann::json;

std::string placeholder_summary(const std::string& name) { return "summary pending for " + name; }

std::string rename_prompt(const FunctionRecord& func, const CalleeSummaries& callees) {
  std::string body = map_identifiers(func.decompiled_code, [&](std::string_view tok) {
    auto it = callees.find(std::string(tok));
    return it == callees.end() ? std::string(tok) : it->second.shown_name;
  });
  std::string out = "Below is your code snippet.\n" + body + "\n\nSummaries of the direct callees:\n";
  for (const auto& [raw, ctx] : callees) out += fmt::format("- {}: {}\n", ctx.shown_name, ctx.summary);
  out +=
      "\nQuestion: You will be given the function body with callee names recovered and summaries of the direct "
      "callees. Please analyze the function and provide:\n"
      "1. Function summary (1-3 sentences).\n"
      "2. Recovered function name.\n"
      "Answer with exactly two lines:\nSUMMARY: <summary>\nNAME: <identifier>\n";
  return out;
}

std::optional<RenameResult> parse_rename_response(std::string_view text) {
  std::optional<std::string> summary, name;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line = trim(text.substr(pos, end - pos));
    auto value_after = [&](std::string_view label) -> std::optional<std::string> {
      if (line.rfind(label, 0) != 0) return std::nullopt;
      return trim(std::string_view(line).substr(label.size()));
    };
    if (!summary) {
      if (auto v = value_after("SUMMARY:")) summary = *v;
    }
    if (!name) {
      if (auto v = value_after("NAME:")) name = *v;
    }
    pos = end + 1;
  }
  if (!summary || summary->empty() || !name) return std::nullopt;
  std::string n = *name;
  // common decorations around an otherwise valid identifier
  while (!n.empty() && (n.front() == '`' || n.front() == '"' || n.front() == '\'')) n.erase(n.begin());
  while (!n.empty() && (n.back() == '`' || n.back() == '"' || n.back() == '\'')) n.pop_back();
  if (n.size() > 2 && n.ends_with("()")) n.resize(n.size() - 2);
  n = sanitize_identifier(n);
  if (n.empty()) return std::nullopt;
  return RenameResult{*summary, n, false};
}

RenameResult rename_function(const FunctionRecord& func, const CalleeSummaries& callees, Gateway& gateway) {
  ChatRequest req;
  req.system = "You are an expert reverse engineer who recovers meaningful names for stripped functions.";
  req.messages.push_back({"user", rename_prompt(func, callees)});
  std::string reply = gateway.chat(req);
  if (auto r = parse_rename_response(reply)) return *r;

  req.messages.push_back({"assistant", reply});
  req.messages.push_back({"user", "Reformat your answer as exactly two lines:\nSUMMARY: <summary>\nNAME: <identifier>"});
  std::string retry = gateway.chat(req);
  if (auto r = parse_rename_response(retry)) return *r;

  std::string raw = trim(retry);
  return RenameResult{raw.empty() ? "(empty model response)" : raw, "fn_" + hex_address(func.entry_address), true};
}

RenameCheckpoint load_checkpoint(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("checkpoint {} is not valid JSON: {}", path.string(), e.what()));
  }
  RenameCheckpoint out;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    try {
      out[it.key()] = CheckpointEntry{it->at("summary").get<std::string>(), it->at("recovered_name").get<std::string>(),
                                      it->at("pass").get<int>()};
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("checkpoint entry '{}': {}", it.key(), e.what()));
    }
  }
  return out;
}

void save_checkpoint(const RenameCheckpoint& checkpoint, const std::filesystem::path& path) {
  json doc = json::object();
  for (const auto& [id, e] : checkpoint) {
    doc[id] = {{"summary", e.summary}, {"recovered_name", e.recovered_name}, {"pass", e.pass}};
  }
  write_file_atomic(path, doc.dump(2) + "\n");
}

namespace {

class RenamePass {
 public:
  RenamePass(const Binary& binary, const CallGraph& graph, const SccOrder& order, Gateway& gateway,
             const RenameOptions& options)
      : binary_(binary), graph_(graph), order_(order), gateway_(gateway), options_(options) {
    if (options.checkpoint_path && std::filesystem::exists(*options.checkpoint_path)) {
      checkpoint_ = load_checkpoint(*options.checkpoint_path);
    }
  }

  RenameOutcome run() {
    std::size_t max_level = 0;
    for (auto l : order_.level) max_level = std::max(max_level, l);
    std::vector<std::vector<std::size_t>> by_level(order_.components.empty() ? 0 : max_level + 1);
    for (std::size_t c = 0; c < order_.components.size(); ++c) by_level[order_.level[c]].push_back(c);

    for (const auto& comps : by_level) run_level(comps);

    RenameOutcome out;
    out.binary = binary_;
    for (auto& f : out.binary.functions) {
      if (f.external) continue;
      const auto& e = checkpoint_.at(f.func_id);
      f.recovered_name = e.recovered_name;
      f.summary = e.summary;
      out.state.completed[f.func_id] = RenameResult{e.summary, e.recovered_name, false};
    }
    out.state.revisit_queue = revisit_queue_;
    out.model_calls = calls_;
    return out;
  }

 private:
  const FunctionRecord& func(std::size_t node) const { return binary_.functions[node]; }

  bool is_final(std::size_t node, bool cyclic) const {
    std::lock_guard lock(mu_);
    auto it = checkpoint_.find(func(node).func_id);
    return it != checkpoint_.end() && it->second.pass >= (cyclic ? 2 : 1);
  }

  void run_level(const std::vector<std::size_t>& comps) {
    parallel_for(comps.size(), options_.parallelism, [&](std::size_t i) { run_component(comps[i]); });
  }

  // Callee contexts for `node`. In-component callees get a placeholder on the
  // first pass and the pass-1 snapshot on the revisit.
  CalleeSummaries callee_context(std::size_t node, std::size_t comp, bool revisit,
                                 const std::map<std::string, CheckpointEntry>& snapshot) {
    CalleeSummaries out;
    for (auto v : graph_.callees(node)) {
      const auto& callee = func(v);
      CalleeContext ctx;
      if (callee.external) {
        ctx = {callee.raw_name, "external library function " + callee.raw_name};
      } else if (order_.component_of[v] == comp) {
        if (revisit) {
          const auto& e = snapshot.at(callee.func_id);
          ctx = {e.recovered_name, e.summary};
        } else {
          ctx = {callee.raw_name, placeholder_summary(callee.raw_name)};
        }
      } else {
        std::lock_guard lock(mu_);
        const auto& e = checkpoint_.at(callee.func_id);
        ctx = {e.recovered_name, e.summary};
      }
      out.emplace(callee.raw_name, std::move(ctx));
    }
    return out;
  }

  RenameResult call(std::size_t node, const CalleeSummaries& ctx) {
    try {
      return rename_function(func(node), ctx, gateway_);
    } catch (const Error& e) {
      persist();
      throw RenameError(func(node).func_id, e.what());
    }
  }

  void record(std::size_t node, const RenameResult& r, int pass) {
    std::lock_guard lock(mu_);
    checkpoint_[func(node).func_id] = CheckpointEntry{r.summary, r.recovered_name, pass};
  }

  void persist() {
    if (!options_.checkpoint_path) return;
    std::lock_guard lock(mu_);
    save_checkpoint(checkpoint_, *options_.checkpoint_path);
  }

  void run_component(std::size_t comp) {
    const auto& members = order_.components[comp];
    const bool cyclic = order_.cyclic[comp];
    bool did_work = false;

    if (!cyclic) {
      std::size_t node = members.front();
      if (func(node).external || is_final(node, false)) return;
      auto r = call(node, callee_context(node, comp, false, {}));
      count_call();
      record(node, r, 1);
      persist();
      return;
    }

    // pass 1
    for (auto node : members) {
      if (func(node).external) continue;
      std::unique_lock lock(mu_);
      bool have = checkpoint_.count(func(node).func_id) > 0;
      lock.unlock();
      if (have) continue;
      auto r = call(node, callee_context(node, comp, false, {}));
      count_call();
      record(node, r, 1);
      did_work = true;
    }
    if (did_work) persist();

    std::map<std::string, CheckpointEntry> snapshot;
    {
      std::lock_guard lock(mu_);
      for (auto node : members) {
        if (!func(node).external) snapshot[func(node).func_id] = checkpoint_.at(func(node).func_id);
      }
      for (auto node : members) {
        if (!func(node).external) revisit_queue_.push_back(func(node).func_id);
      }
    }

    // revisit
    for (auto node : members) {
      if (func(node).external || is_final(node, true)) continue;
      auto r = call(node, callee_context(node, comp, true, snapshot));
      count_call();
      record(node, r, 2);
    }
    persist();
  }

  void count_call() {
    std::lock_guard lock(mu_);
    ++calls_;
  }

  const Binary& binary_;
  const CallGraph& graph_;
  const SccOrder& order_;
  Gateway& gateway_;
  const RenameOptions& options_;
  mutable std::mutex mu_;
  RenameCheckpoint checkpoint_;
  std::vector<std::string> revisit_queue_;
  std::size_t calls_ = 0;
};

}  // namespace

RenameOutcome rename_binary(const Binary& binary, const CallGraph& graph, const SccOrder& order, Gateway& gateway,
                            const RenameOptions& options) {
  if (graph.size() != binary.functions.size() || order.component_of.size() != graph.size()) {
    throw ValidationError("rename_binary: call graph and order do not belong to this binary");
  }
  RenamePass pass(binary, graph, order, gateway, options);
  return pass.run();
}

Binary rewrite_identifiers(const Binary& binary) {
  std::vector<std::size_t> idx(binary.functions.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& fa = binary.functions[a];
    const auto& fb = binary.functions[b];
    if (fa.entry_address != fb.entry_address) return fa.entry_address < fb.entry_address;
    return fa.func_id < fb.func_id;
  });

  std::set<std::string> taken;
  for (const auto& f : binary.functions) {
    if (f.external) taken.insert(f.raw_name);
  }
  std::unordered_map<std::string, std::string> rename;  // raw -> final
  std::vector<std::string> final_name(binary.functions.size());
  for (auto i : idx) {
    const auto& f = binary.functions[i];
    if (f.external) continue;
    if (!f.recovered_name) {
      throw ValidationError(fmt::format("rewrite_identifiers: {} has no recovered name", f.func_id));
    }
    std::string name = *f.recovered_name;
    for (int k = 2; taken.count(name); ++k) name = fmt::format("{}_{}", *f.recovered_name, k);
    taken.insert(name);
    final_name[i] = name;
    rename.emplace(f.raw_name, name);
  }

  auto map_name = [&](std::string_view tok) {
    auto it = rename.find(std::string(tok));
    return it == rename.end() ? std::string(tok) : it->second;
  };

  Binary out = binary;
  for (std::size_t i = 0; i < out.functions.size(); ++i) {
    auto& f = out.functions[i];
    f.decompiled_code = map_identifiers(f.decompiled_code, map_name);
    std::set<std::string> callees;
    for (const auto& c : f.callee_names) callees.insert(map_name(c));
    f.callee_names = std::move(callees);
    if (!f.external) f.recovered_name = final_name[i];
  }
  return out;
}

}  // namespace ttpmap
