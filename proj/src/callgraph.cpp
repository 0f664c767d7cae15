#include "ttpmap/callgraph.hpp"

#include <algorithm>
#include <queue>
#include <sstream>

#include <fmt/format.h>

#include "ttpmap/error.hpp"

namespace ttpmap {

CallGraph::CallGraph(std::vector<std::string> nodes, std::vector<std::uint64_t> addresses,
                     const std::set<std::pair<std::size_t, std::size_t>>& edges)
    : nodes_(std::move(nodes)),
      addresses_(std::move(addresses)),
      callees_(nodes_.size()),
      callers_(nodes_.size()) {
  addresses_.resize(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) index_.emplace(nodes_[i], i);
  // std::set iteration keeps both adjacency lists sorted
  for (auto [u, v] : edges) {
    callees_[u].push_back(v);
    callers_[v].push_back(u);
  }
  for (auto& c : callers_) std::sort(c.begin(), c.end());
}

std::set<std::pair<std::size_t, std::size_t>> CallGraph::edges() const {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t u = 0; u < callees_.size(); ++u) {
    for (auto v : callees_[u]) out.emplace(u, v);
  }
  return out;
}

std::set<std::pair<std::string, std::string>> CallGraph::edge_ids() const {
  std::set<std::pair<std::string, std::string>> out;
  for (auto [u, v] : edges()) out.emplace(nodes_[u], nodes_[v]);
  return out;
}

std::optional<std::size_t> CallGraph::index_of(std::string_view func_id) const {
  auto it = index_.find(std::string(func_id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool CallGraph::has_self_loop(std::size_t node) const {
  return std::binary_search(callees_[node].begin(), callees_[node].end(), node);
}

CallGraph build_call_graph(const Binary& binary) {
  std::unordered_map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < binary.functions.size(); ++i) by_name.emplace(binary.functions[i].raw_name, i);
  for (std::size_t i = 0; i < binary.functions.size(); ++i) {
    const auto& f = binary.functions[i];
    if (f.recovered_name) by_name[*f.recovered_name] = i;
  }

  std::vector<std::string> nodes;
  std::vector<std::uint64_t> addresses;
  std::set<std::pair<std::size_t, std::size_t>> edges;
  std::size_t unresolved = 0;
  for (std::size_t i = 0; i < binary.functions.size(); ++i) {
    const auto& f = binary.functions[i];
    nodes.push_back(f.func_id);
    addresses.push_back(f.entry_address);
    for (const auto& callee : f.callee_names) {
      auto it = by_name.find(callee);
      if (it == by_name.end()) {
        ++unresolved;
        continue;
      }
      edges.emplace(i, it->second);
    }
  }
  CallGraph g(std::move(nodes), std::move(addresses), edges);
  g.set_unresolved_count(unresolved);
  return g;
}

namespace {

// Iterative Tarjan; returns component id per node.
std::vector<std::size_t> tarjan(const CallGraph& g, std::size_t& count) {
  constexpr std::size_t unvisited = static_cast<std::size_t>(-1);
  const std::size_t n = g.size();
  std::vector<std::size_t> index(n, unvisited), low(n, 0), comp(n, unvisited);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack;
  std::vector<std::pair<std::size_t, std::size_t>> work;  // (node, next edge)
  std::size_t next_index = 0;
  count = 0;

  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != unvisited) continue;
    work.emplace_back(root, 0);
    while (!work.empty()) {
      auto& [v, edge] = work.back();
      if (edge == 0 && index[v] == unvisited) {
        index[v] = low[v] = next_index++;
        stack.push_back(v);
        on_stack[v] = true;
      }
      const auto& out = g.callees(v);
      if (edge < out.size()) {
        std::size_t w = out[edge++];
        if (index[w] == unvisited) {
          work.emplace_back(w, 0);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      if (low[v] == index[v]) {
        std::size_t w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          comp[w] = count;
        } while (w != v);
        ++count;
      }
      std::size_t done = v;
      work.pop_back();
      if (!work.empty()) {
        std::size_t parent = work.back().first;
        low[parent] = std::min(low[parent], low[done]);
      }
    }
  }
  return comp;
}

}  // namespace

SccOrder condense_and_order(const CallGraph& graph) {
  std::size_t count = 0;
  auto raw_comp = tarjan(graph, count);

  std::vector<std::vector<std::size_t>> members(count);
  for (std::size_t v = 0; v < graph.size(); ++v) members[raw_comp[v]].push_back(v);
  auto by_address = [&](std::size_t a, std::size_t b) {
    if (graph.address(a) != graph.address(b)) return graph.address(a) < graph.address(b);
    return graph.nodes()[a] < graph.nodes()[b];
  };
  std::vector<std::size_t> min_member(count);
  for (std::size_t c = 0; c < count; ++c) {
    std::sort(members[c].begin(), members[c].end(), by_address);
    min_member[c] = members[c].front();
  }

  // condensation: comp -> callee comps, and the number of pending callee comps
  std::vector<std::set<std::size_t>> callee_comps(count), caller_comps(count);
  for (std::size_t u = 0; u < graph.size(); ++u) {
    for (auto v : graph.callees(u)) {
      if (raw_comp[u] != raw_comp[v]) {
        callee_comps[raw_comp[u]].insert(raw_comp[v]);
        caller_comps[raw_comp[v]].insert(raw_comp[u]);
      }
    }
  }

  auto later = [&](std::size_t a, std::size_t b) { return by_address(min_member[b], min_member[a]); };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(later)> ready(later);
  std::vector<std::size_t> pending(count);
  for (std::size_t c = 0; c < count; ++c) {
    pending[c] = callee_comps[c].size();
    if (pending[c] == 0) ready.push(c);
  }

  SccOrder out;
  out.component_of.assign(graph.size(), 0);
  std::vector<std::size_t> position(count);
  while (!ready.empty()) {
    std::size_t c = ready.top();
    ready.pop();
    std::size_t pos = out.components.size();
    position[c] = pos;
    std::size_t lvl = 0;
    for (auto callee : callee_comps[c]) lvl = std::max(lvl, out.level[position[callee]] + 1);
    bool cyc = members[c].size() > 1 || graph.has_self_loop(members[c].front());
    for (auto v : members[c]) out.component_of[v] = pos;
    out.components.push_back(members[c]);
    out.cyclic.push_back(cyc);
    out.level.push_back(lvl);
    for (auto caller : caller_comps[c]) {
      if (--pending[caller] == 0) ready.push(caller);
    }
  }
  return out;
}

std::vector<std::vector<std::string>> SccOrder::component_ids(const CallGraph& graph) const {
  std::vector<std::vector<std::string>> out;
  out.reserve(components.size());
  for (const auto& comp : components) {
    std::vector<std::string> ids;
    for (auto v : comp) ids.push_back(graph.nodes()[v]);
    out.push_back(std::move(ids));
  }
  return out;
}

std::set<std::string> callers_of(const CallGraph& graph, std::string_view target) {
  auto idx = graph.index_of(target);
  if (!idx) throw NotFoundError(fmt::format("function '{}' is not in the call graph", target));
  std::set<std::string> out;
  for (auto u : graph.callers(*idx)) out.insert(graph.nodes()[u]);
  return out;
}

std::string condensation_dot(const CallGraph& graph, const SccOrder& order) {
  std::ostringstream os;
  os << "digraph condensation {\n";
  for (std::size_t c = 0; c < order.components.size(); ++c) {
    os << fmt::format("  subgraph cluster_{} {{\n    label=\"#{}{}\";\n", c, c, order.cyclic[c] ? " cyclic" : "");
    for (auto v : order.components[c]) os << fmt::format("    \"{}\";\n", graph.nodes()[v]);
    os << "  }\n";
  }
  for (auto [u, v] : graph.edges()) {
    os << fmt::format("  \"{}\" -> \"{}\";\n", graph.nodes()[u], graph.nodes()[v]);
  }
  os << "}\n";
  return os.str();
}

}  // namespace ttpmap
