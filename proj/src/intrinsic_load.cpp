#include "tigload/intrinsic_load.hpp"

#include <algorithm>
#include <set>

#include "tigload/errors.hpp"

namespace tigload {

namespace {

void require_member(const ToolGraph& g, const DepEdge& e) {
  for (const auto& x : g.edges)
    if (x.same_dependency(e)) return;
  throw UnknownEdge("edge " + edge_label(e) + " is not part of the graph");
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0))
    throw DomainError("lambda must be non-negative");
}

// Entities available to a node at a given position: everything produced by
// earlier nodes plus the mentions of earlier queries.
class EntityContext {
 public:
  EntityContext(const TaskInstance& task, const Linearization& lin) {
    auto qidx = query_node_indices(task.graph);
    introduced_.resize(lin.order().size());
    for (std::size_t p = 0; p < introduced_.size(); ++p) {
      const auto& n = lin.at(p);
      auto& bucket = introduced_[p];
      bucket.insert(n.produces.begin(), n.produces.end());
      if (n.is_query()) {
        auto it = qidx.find(n.id);
        if (it != qidx.end() && it->second < task.queries.size()) {
          const auto& m = task.queries[it->second].mentioned_entities;
          bucket.insert(m.begin(), m.end());
        }
      }
    }
  }

  std::size_t competitors(std::size_t position, const EntityRef& x) const {
    std::set<EntityRef> seen;
    for (std::size_t p = 0; p < position && p < introduced_.size(); ++p)
      for (const auto& y : introduced_[p])
        if (y.semantic_type == x.semantic_type && y.value_id != x.value_id)
          seen.insert(y);
    return seen.size();
  }

 private:
  std::vector<std::set<EntityRef>> introduced_;
};

std::size_t distance(const Linearization& lin, const DepEdge& e) {
  const auto s = lin.position(e.src);
  const auto d = lin.position(e.dst);
  if (d <= s)
    throw InvalidTask("edge " + edge_label(e) + " does not point forward");
  return d - s;
}

std::size_t interference_in(const EntityContext& ctx, const Linearization& lin,
                            const DepEdge& e) {
  if (e.kind == EdgeKind::Execution || !e.entity) return 0;
  return ctx.competitors(lin.position(e.dst), *e.entity);
}

}  // namespace

double edge_weight(std::size_t delta, std::size_t interference,
                   double lambda) {
  check_lambda(lambda);
  return static_cast<double>(delta) *
         (1.0 + lambda * static_cast<double>(interference));
}

std::size_t attentional_distance(const ToolGraph& g, const DepEdge& e) {
  require_member(g, e);
  Linearization lin(g);
  return distance(lin, e);
}

std::size_t interference(const TaskInstance& task, const DepEdge& e) {
  if (e.kind == EdgeKind::Execution) return 0;
  Linearization lin(task.graph);
  EntityContext ctx(task, lin);
  return interference_in(ctx, lin, e);
}

double edge_weight(const TaskInstance& task, const DepEdge& e,
                   const IntrinsicParams& p) {
  require_member(task.graph, e);
  Linearization lin(task.graph);
  EntityContext ctx(task, lin);
  return edge_weight(distance(lin, e), interference_in(ctx, lin, e), p.lambda);
}

IntrinsicReport intrinsic_load(const TaskInstance& task,
                               const IntrinsicParams& p) {
  check_lambda(p.lambda);
  auto report = validate_task(task);
  if (!report.ok()) {
    const auto& v = report.violations.front();
    throw InvalidTask("task '" + task.id + "': " + v.code + ": " + v.message);
  }

  Linearization lin(task.graph);
  EntityContext ctx(task, lin);

  IntrinsicReport out;
  for (const auto& id : lin.order())
    if (!lin.node(id).is_query()) out.per_node.emplace(id, 0.0);

  for (const auto& e : task.graph.edges) {
    EdgeLoad el;
    el.src = e.src;
    el.dst = e.dst;
    el.kind = e.kind;
    el.delta = distance(lin, e);
    el.interference = interference_in(ctx, lin, e);
    el.weight = edge_weight(el.delta, el.interference, p.lambda);
    out.per_node.at(e.dst) += el.weight;
    out.per_edge.push_back(std::move(el));
  }

  // Summed in linearized order so the total is reproducible from per_node.
  for (const auto& id : lin.order()) {
    auto it = out.per_node.find(id);
    if (it != out.per_node.end()) out.total += it->second;
  }
  return out;
}

}  // namespace tigload
