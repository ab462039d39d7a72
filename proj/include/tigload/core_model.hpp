#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tigload {

// Unknown JSON members of a record, kept as serialized JSON text so that
// files round-trip without the domain types depending on a JSON library.
using Extras = std::map<std::string, std::string>;

struct EntityRef {
  std::string semantic_type;  // e.g. "user_id", "file_path"
  std::string value_id;

  auto operator<=>(const EntityRef&) const = default;
};

struct Query {
  std::size_t index = 0;
  std::string text;
  std::vector<EntityRef> mentioned_entities;
  Extras extras;
};

struct ToolParam {
  std::string name;
  std::string type;
  bool required = true;
  std::string description;
};

struct ToolSpec {
  std::string name;
  std::string description;
  std::vector<ToolParam> params;
  Extras extras;
};

enum class NodeKind { Query, FunctionCall };
enum class EdgeKind { Data, Execution };

std::string_view to_string(NodeKind kind);
std::string_view to_string(EdgeKind kind);

struct GraphNode {
  std::string id;
  NodeKind kind = NodeKind::FunctionCall;
  // Position in the conversation. Either every node carries one or none does,
  // in which case linearize() assigns them.
  std::optional<std::size_t> turn;
  // Query nodes only; when absent, query nodes are matched to queries in the
  // order they are listed.
  std::optional<std::size_t> query_index;
  std::string tool_name;  // function nodes only
  std::vector<EntityRef> produces;
  std::vector<EntityRef> consumes;
  Extras extras;

  bool is_query() const { return kind == NodeKind::Query; }
};

struct DepEdge {
  std::string src;
  std::string dst;
  EdgeKind kind = EdgeKind::Data;
  std::optional<EntityRef> entity;  // Data edges only
  Extras extras;

  // Identity ignores extras.
  bool same_dependency(const DepEdge& other) const {
    return src == other.src && dst == other.dst && kind == other.kind &&
           entity == other.entity;
  }
};

struct ToolGraph {
  std::vector<GraphNode> nodes;
  std::vector<DepEdge> edges;
};

struct TaskInstance {
  std::string id;
  std::string domain;
  std::vector<Query> queries;
  std::vector<ToolSpec> tools;
  ToolGraph graph;
  std::map<std::string, std::string> meta;
  Extras extras;
};

struct Violation {
  std::string code;     // stable short tag, e.g. "cycle detected"
  std::string message;  // human-readable detail
  std::vector<std::string> subjects;  // node ids or "src->dst" edge labels
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(std::string_view code) const;
};

// Checks graph-level invariants. Violations are reported in a fixed pass
// order (nodes, turns, edges, acyclicity, forward edges).
ValidationReport validate_graph(const ToolGraph& g);

// validate_graph plus the task-level invariants tying the graph to the
// queries and tool set.
ValidationReport validate_task(const TaskInstance& task);

// Canonical conversational order of node ids. Uses the turn fields when all
// nodes carry one; otherwise a topological sort that prefers the node owned
// by the lowest query index, then the lexicographically smaller id.
// Throws CycleError.
std::vector<std::string> linearize(const ToolGraph& g);

// Function-call node ids in linearized order.
std::vector<std::string> function_nodes(const ToolGraph& g);

// Returns g with every node's turn set to its canonical position.
ToolGraph with_canonical_turns(const ToolGraph& g);

// Query index of every query node: its query_index when set, else the order
// in which query nodes are listed.
std::unordered_map<std::string, std::size_t> query_node_indices(
    const ToolGraph& g);

// Edge label used in diagnostics and reports.
std::string edge_label(const DepEdge& e);

// A graph together with its canonical linearization and id lookups. Holds a
// reference to the graph, which must outlive it.
class Linearization {
 public:
  explicit Linearization(const ToolGraph& g);

  const ToolGraph& graph() const { return *graph_; }
  std::span<const std::string> order() const { return order_; }

  bool contains(std::string_view id) const;
  const GraphNode& node(std::string_view id) const;
  std::size_t position(std::string_view id) const;
  const GraphNode& at(std::size_t position) const;

  // Index of the query node at or before `position`, or nullopt when the
  // position precedes every query node.
  std::optional<std::size_t> owning_query_position(std::size_t position) const;

 private:
  const ToolGraph* graph_;
  std::vector<std::string> order_;
  std::vector<std::size_t> node_at_;  // position -> index into graph nodes
  std::unordered_map<std::string, std::size_t> index_;  // id -> node index
  std::unordered_map<std::string, std::size_t> pos_;    // id -> position
};

}  // namespace tigload
