#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ttpmap/binary.hpp"

namespace ttpmap {

/// Direct-call graph over func_ids. Node i corresponds to binary.functions[i]
/// at construction time; adjacency lists are sorted and duplicate-free.
class CallGraph {
 public:
  CallGraph() = default;

  /// Graph from raw parts; used by tests and by build_call_graph.
  CallGraph(std::vector<std::string> nodes, std::vector<std::uint64_t> addresses,
            const std::set<std::pair<std::size_t, std::size_t>>& edges);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::string>& nodes() const { return nodes_; }
  std::uint64_t address(std::size_t node) const { return addresses_[node]; }
  const std::vector<std::size_t>& callees(std::size_t node) const { return callees_[node]; }
  const std::vector<std::size_t>& callers(std::size_t node) const { return callers_[node]; }
  std::set<std::pair<std::size_t, std::size_t>> edges() const;
  std::set<std::pair<std::string, std::string>> edge_ids() const;
  std::optional<std::size_t> index_of(std::string_view func_id) const;
  bool has_self_loop(std::size_t node) const;

  /// Callee names that matched no function during construction.
  std::size_t unresolved_count() const { return unresolved_; }
  void set_unresolved_count(std::size_t n) { unresolved_ = n; }

 private:
  std::vector<std::string> nodes_;
  std::vector<std::uint64_t> addresses_;
  std::vector<std::vector<std::size_t>> callees_;
  std::vector<std::vector<std::size_t>> callers_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t unresolved_ = 0;
};

/// One node per function; callee names resolve against recovered and raw names
/// (recovered wins on conflict). Unresolved names are dropped and counted.
CallGraph build_call_graph(const Binary& binary);

/// Condensation of the call graph in callee-first order.
struct SccOrder {
  /// Node indices per component, members sorted by ascending address.
  std::vector<std::vector<std::size_t>> components;
  /// True when the component has more than one member or a self-loop.
  std::vector<bool> cyclic;
  /// Longest callee chain below the component; components sharing a level
  /// have no dependency on each other.
  std::vector<std::size_t> level;
  /// component index of every node
  std::vector<std::size_t> component_of;

  std::vector<std::vector<std::string>> component_ids(const CallGraph& graph) const;
};

/// Strongly connected components in reverse topological order of the
/// condensation: every cross-component callee precedes its callers. Among
/// components that are ready at the same time the one with the lowest minimum
/// entry address goes first.
SccOrder condense_and_order(const CallGraph& graph);

/// func_ids of all direct callers of `target`. Throws NotFoundError.
std::set<std::string> callers_of(const CallGraph& graph, std::string_view target);

/// DOT rendering of the condensation, one cluster per component.
std::string condensation_dot(const CallGraph& graph, const SccOrder& order);

}  // namespace ttpmap
