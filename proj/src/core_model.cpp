#include "tigload/core_model.hpp"

#include <algorithm>
#include <queue>
#include <set>
#include <tuple>
#include <unordered_set>

#include "tigload/errors.hpp"

namespace tigload {

std::string_view to_string(NodeKind kind) {
  return kind == NodeKind::Query ? "query" : "function_call";
}

std::string_view to_string(EdgeKind kind) {
  return kind == EdgeKind::Data ? "data" : "execution";
}

bool ValidationReport::has(std::string_view code) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.code == code; });
}

std::string edge_label(const DepEdge& e) { return e.src + "->" + e.dst; }

std::unordered_map<std::string, std::size_t> query_node_indices(
    const ToolGraph& g) {
  std::unordered_map<std::string, std::size_t> out;
  std::size_t next = 0;
  for (const auto& n : g.nodes) {
    if (!n.is_query()) continue;
    out.emplace(n.id, n.query_index.value_or(next));
    ++next;
  }
  return out;
}

namespace {

bool contains_entity(const std::vector<EntityRef>& list, const EntityRef& x) {
  return std::find(list.begin(), list.end(), x) != list.end();
}

bool all_timed(const ToolGraph& g) {
  return !g.nodes.empty() &&
         std::all_of(g.nodes.begin(), g.nodes.end(),
                     [](const GraphNode& n) { return n.turn.has_value(); });
}

// Kahn's algorithm over edges whose endpoints exist. Returns the ids left
// over, i.e. the nodes on or downstream of a cycle.
std::vector<std::string> cyclic_nodes(const ToolGraph& g) {
  std::unordered_map<std::string, std::size_t> indeg;
  std::unordered_map<std::string, std::vector<std::string>> out;
  for (const auto& n : g.nodes) indeg.emplace(n.id, 0);
  for (const auto& e : g.edges) {
    if (!indeg.count(e.src) || !indeg.count(e.dst)) continue;
    ++indeg[e.dst];
    out[e.src].push_back(e.dst);
  }
  std::vector<std::string> ready;
  for (const auto& [id, d] : indeg)
    if (d == 0) ready.push_back(id);
  while (!ready.empty()) {
    auto id = std::move(ready.back());
    ready.pop_back();
    for (const auto& nxt : out[id])
      if (--indeg[nxt] == 0) ready.push_back(nxt);
  }
  std::vector<std::string> left;
  for (const auto& [id, d] : indeg)
    if (d > 0) left.push_back(id);
  std::sort(left.begin(), left.end());
  return left;
}

void validate_graph_impl(
    const ToolGraph& g,
    const std::unordered_map<std::string, const std::vector<EntityRef>*>&
        query_mentions,
    std::vector<Violation>& out) {
  auto add = [&](std::string code, std::string msg,
                 std::vector<std::string> subjects) {
    out.push_back({std::move(code), std::move(msg), std::move(subjects)});
  };

  std::unordered_map<std::string, const GraphNode*> by_id;
  for (const auto& n : g.nodes) {
    if (!by_id.emplace(n.id, &n).second)
      add("duplicate node id", "node id '" + n.id + "' appears more than once",
          {n.id});
  }

  for (const auto& n : g.nodes) {
    if (n.is_query() && !n.tool_name.empty())
      add("query node has tool name",
          "query node '" + n.id + "' carries tool '" + n.tool_name + "'",
          {n.id});
    if (!n.is_query() && n.tool_name.empty())
      add("function node missing tool name",
          "function node '" + n.id + "' has no tool name", {n.id});
    for (const auto* list : {&n.produces, &n.consumes})
      for (const auto& x : *list)
        if (x.semantic_type.empty())
          add("empty semantic type",
              "node '" + n.id + "' references entity '" + x.value_id +
                  "' without a semantic type",
              {n.id});
  }

  const bool timed = all_timed(g);
  const bool any_timed =
      std::any_of(g.nodes.begin(), g.nodes.end(),
                  [](const GraphNode& n) { return n.turn.has_value(); });
  if (any_timed && !timed) {
    std::vector<std::string> untimed;
    for (const auto& n : g.nodes)
      if (!n.turn) untimed.push_back(n.id);
    add("partial turn assignment",
        "some nodes carry turns and others do not", std::move(untimed));
  }
  if (timed) {
    std::map<std::size_t, std::string> seen;
    for (const auto& n : g.nodes) {
      auto [it, fresh] = seen.emplace(*n.turn, n.id);
      if (!fresh)
        add("duplicate turn",
            "nodes '" + it->second + "' and '" + n.id + "' share turn " +
                std::to_string(*n.turn),
            {it->second, n.id});
    }
  }

  for (const auto& e : g.edges) {
    const auto label = edge_label(e);
    auto src_it = by_id.find(e.src);
    auto dst_it = by_id.find(e.dst);
    if (src_it == by_id.end() || dst_it == by_id.end()) {
      add("unknown edge endpoint",
          "edge " + label + " references a node that does not exist", {label});
      continue;
    }
    const GraphNode& src = *src_it->second;
    const GraphNode& dst = *dst_it->second;
    if (dst.is_query())
      add("query node has incoming edge",
          "edge " + label + " targets query node '" + dst.id + "'", {label});
    if (e.kind == EdgeKind::Execution) {
      if (e.entity)
        add("execution edge with entity",
            "execution edge " + label + " carries an entity", {label});
      continue;
    }
    if (!e.entity) {
      add("data edge without entity",
          "data edge " + label + " carries no entity", {label});
      continue;
    }
    bool sourced = contains_entity(src.produces, *e.entity);
    if (!sourced && src.is_query()) {
      auto m = query_mentions.find(src.id);
      sourced = m != query_mentions.end() &&
                contains_entity(*m->second, *e.entity);
    }
    if (!sourced)
      add("dangling data dependency",
          "data edge " + label + " carries " + e.entity->semantic_type + ":" +
              e.entity->value_id + " which '" + src.id + "' does not produce",
          {label});
    if (!contains_entity(dst.consumes, *e.entity))
      add("unconsumed data dependency",
          "data edge " + label + " carries " + e.entity->semantic_type + ":" +
              e.entity->value_id + " which '" + dst.id + "' does not consume",
          {label});
  }

  auto cyc = cyclic_nodes(g);
  if (!cyc.empty()) {
    add("cycle detected", "dependency cycle through the listed nodes", cyc);
    return;
  }

  if (timed) {
    for (const auto& e : g.edges) {
      auto s = by_id.find(e.src), d = by_id.find(e.dst);
      if (s == by_id.end() || d == by_id.end()) continue;
      if (*s->second->turn >= *d->second->turn)
        add("backward edge",
            "edge " + edge_label(e) + " does not point forward in time",
            {edge_label(e)});
    }
    auto qidx = query_node_indices(g);
    std::vector<std::pair<std::size_t, const GraphNode*>> qs;
    for (const auto& n : g.nodes)
      if (n.is_query()) qs.emplace_back(qidx.at(n.id), &n);
    std::sort(qs.begin(), qs.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < qs.size(); ++i)
      if (*qs[i - 1].second->turn >= *qs[i].second->turn)
        add("query order mismatch",
            "query nodes are not in arrival order",
            {qs[i - 1].second->id, qs[i].second->id});
  }
}

}  // namespace

ValidationReport validate_graph(const ToolGraph& g) {
  ValidationReport r;
  validate_graph_impl(g, {}, r.violations);
  return r;
}

ValidationReport validate_task(const TaskInstance& task) {
  ValidationReport r;
  auto add = [&](std::string code, std::string msg,
                 std::vector<std::string> subjects) {
    r.violations.push_back(
        {std::move(code), std::move(msg), std::move(subjects)});
  };

  if (task.queries.empty()) add("no queries", "task has no queries", {task.id});
  for (std::size_t i = 0; i < task.queries.size(); ++i) {
    const auto& q = task.queries[i];
    if (q.index != i)
      add("query index mismatch",
          "query at position " + std::to_string(i) + " has index " +
              std::to_string(q.index),
          {std::to_string(i)});
    for (const auto& x : q.mentioned_entities)
      if (x.semantic_type.empty())
        add("empty semantic type",
            "query " + std::to_string(i) + " mentions '" + x.value_id +
                "' without a semantic type",
            {std::to_string(i)});
  }

  if (task.tools.empty()) add("no tools", "task has no tools", {task.id});
  std::set<std::string> tool_names;
  for (const auto& t : task.tools) {
    if (!tool_names.insert(t.name).second)
      add("duplicate tool name", "tool '" + t.name + "' is listed twice",
          {t.name});
    std::set<std::string> params;
    for (const auto& p : t.params)
      if (!params.insert(p.name).second)
        add("duplicate param name",
            "tool '" + t.name + "' repeats parameter '" + p.name + "'",
            {t.name});
  }

  for (const auto& n : task.graph.nodes)
    if (!n.is_query() && !n.tool_name.empty() && !tool_names.count(n.tool_name))
      add("unknown tool",
          "node '" + n.id + "' calls '" + n.tool_name +
              "' which is not in the tool set",
          {n.id});

  // Query nodes must cover the queries one-to-one.
  auto qidx = query_node_indices(task.graph);
  std::unordered_map<std::string, const std::vector<EntityRef>*> mentions;
  std::set<std::size_t> covered;
  std::size_t query_nodes = 0;
  for (const auto& n : task.graph.nodes) {
    if (!n.is_query()) continue;
    ++query_nodes;
    const std::size_t qi = qidx.at(n.id);
    if (qi >= task.queries.size() || !covered.insert(qi).second) {
      add("query node index mismatch",
          "query node '" + n.id + "' maps to query " + std::to_string(qi) +
              " which is out of range or already taken",
          {n.id});
      continue;
    }
    mentions.emplace(n.id, &task.queries[qi].mentioned_entities);
  }
  if (query_nodes != task.queries.size())
    add("query node count mismatch",
        "graph has " + std::to_string(query_nodes) + " query nodes for " +
            std::to_string(task.queries.size()) + " queries",
        {task.id});

  validate_graph_impl(task.graph, mentions, r.violations);
  return r;
}

std::vector<std::string> linearize(const ToolGraph& g) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    index.emplace(g.nodes[i].id, i);
  for (const auto& e : g.edges)
    if (!index.count(e.src) || !index.count(e.dst))
      throw InvalidTask("edge " + edge_label(e) + " has an unknown endpoint");

  if (all_timed(g)) {
    std::vector<const GraphNode*> nodes;
    for (const auto& n : g.nodes) nodes.push_back(&n);
    std::sort(nodes.begin(), nodes.end(), [](const auto* a, const auto* b) {
      return std::tie(*a->turn, a->id) < std::tie(*b->turn, b->id);
    });
    // A timed graph may still be cyclic; report it the same way.
    auto cyc = cyclic_nodes(g);
    if (!cyc.empty()) throw CycleError("dependency cycle involving '" + cyc.front() + "'");
    std::vector<std::string> out;
    for (const auto* n : nodes) out.push_back(n->id);
    return out;
  }

  const std::size_t n = g.nodes.size();
  std::vector<std::vector<std::size_t>> succ(n);
  std::vector<std::size_t> indeg(n, 0);
  for (const auto& e : g.edges) {
    succ[index[e.src]].push_back(index[e.dst]);
    ++indeg[index[e.dst]];
  }

  // Owner query of a node: the highest query index among its ancestors
  // (itself included). Computed over an arbitrary topological pass first.
  auto qidx = query_node_indices(g);
  std::vector<std::size_t> owner(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    if (g.nodes[i].is_query()) owner[i] = qidx.at(g.nodes[i].id);
  {
    auto deg = indeg;
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < n; ++i)
      if (deg[i] == 0) stack.push_back(i);
    std::size_t visited = 0;
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      ++visited;
      for (auto w : succ[v]) {
        owner[w] = std::max(owner[w], owner[v]);
        if (--deg[w] == 0) stack.push_back(w);
      }
    }
    if (visited != n) {
      auto cyc = cyclic_nodes(g);
      throw CycleError("dependency cycle involving '" + cyc.front() + "'");
    }
  }

  using Key = std::tuple<std::size_t, std::string, std::size_t>;
  std::priority_queue<Key, std::vector<Key>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indeg[i] == 0) ready.emplace(owner[i], g.nodes[i].id, i);
  std::vector<std::string> out;
  out.reserve(n);
  while (!ready.empty()) {
    auto [own, id, v] = ready.top();
    ready.pop();
    out.push_back(id);
    for (auto w : succ[v])
      if (--indeg[w] == 0) ready.emplace(owner[w], g.nodes[w].id, w);
  }
  return out;
}

std::vector<std::string> function_nodes(const ToolGraph& g) {
  Linearization lin(g);
  std::vector<std::string> out;
  for (const auto& id : lin.order())
    if (!lin.node(id).is_query()) out.push_back(id);
  return out;
}

ToolGraph with_canonical_turns(const ToolGraph& g) {
  Linearization lin(g);
  ToolGraph out = g;
  for (auto& n : out.nodes) n.turn = lin.position(n.id);
  return out;
}

Linearization::Linearization(const ToolGraph& g)
    : graph_(&g), order_(linearize(g)) {
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    index_.emplace(g.nodes[i].id, i);
  node_at_.reserve(order_.size());
  for (std::size_t p = 0; p < order_.size(); ++p) {
    pos_.emplace(order_[p], p);
    node_at_.push_back(index_.at(order_[p]));
  }
}

bool Linearization::contains(std::string_view id) const {
  return index_.count(std::string(id)) > 0;
}

const GraphNode& Linearization::node(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end())
    throw InvalidTask("unknown node '" + std::string(id) + "'");
  return graph_->nodes[it->second];
}

std::size_t Linearization::position(std::string_view id) const {
  auto it = pos_.find(std::string(id));
  if (it == pos_.end())
    throw InvalidTask("unknown node '" + std::string(id) + "'");
  return it->second;
}

const GraphNode& Linearization::at(std::size_t position) const {
  return graph_->nodes[node_at_.at(position)];
}

std::optional<std::size_t> Linearization::owning_query_position(
    std::size_t position) const {
  for (std::size_t p = position + 1; p-- > 0;)
    if (at(p).is_query()) return p;
  return std::nullopt;
}

}  // namespace tigload
