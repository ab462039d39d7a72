#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tigload/core_model.hpp"

namespace tigload::testing {

inline EntityRef ent(std::string type, std::string value) {
  return {std::move(type), std::move(value)};
}

// Builds tasks node by node; nodes get consecutive turns in insertion order
// unless build(false) strips them.
class TaskBuilder {
 public:
  explicit TaskBuilder(std::string id = "t") { t_.id = std::move(id); t_.domain = "test"; }

  TaskBuilder& query(const std::string& id, std::vector<EntityRef> mentions = {},
                     std::string text = "") {
    const std::size_t qi = t_.queries.size();
    t_.queries.push_back(Query{qi, text.empty() ? "query " + id : text,
                               std::move(mentions), {}});
    GraphNode n;
    n.id = id;
    n.kind = NodeKind::Query;
    n.turn = t_.graph.nodes.size();
    n.query_index = qi;
    t_.graph.nodes.push_back(std::move(n));
    return *this;
  }

  TaskBuilder& call(const std::string& id, const std::string& tool,
                    std::vector<EntityRef> produces = {},
                    std::vector<EntityRef> consumes = {}) {
    GraphNode n;
    n.id = id;
    n.kind = NodeKind::FunctionCall;
    n.turn = t_.graph.nodes.size();
    n.tool_name = tool;
    n.produces = std::move(produces);
    n.consumes = std::move(consumes);
    t_.graph.nodes.push_back(std::move(n));
    ensure_tool(tool, "tool " + tool);
    return *this;
  }

  TaskBuilder& tool(const std::string& name, const std::string& description) {
    for (auto& t : t_.tools)
      if (t.name == name) {
        t.description = description;
        return *this;
      }
    t_.tools.push_back(ToolSpec{name, description, {}, {}});
    return *this;
  }

  // Data edge; the entity is added to the consumer's consumes list.
  TaskBuilder& data(const std::string& src, const std::string& dst, EntityRef x) {
    for (auto& n : t_.graph.nodes)
      if (n.id == dst &&
          std::find(n.consumes.begin(), n.consumes.end(), x) == n.consumes.end())
        n.consumes.push_back(x);
    t_.graph.edges.push_back(DepEdge{src, dst, EdgeKind::Data, std::move(x), {}});
    return *this;
  }

  TaskBuilder& exec(const std::string& src, const std::string& dst) {
    t_.graph.edges.push_back(DepEdge{src, dst, EdgeKind::Execution, std::nullopt, {}});
    return *this;
  }

  TaskInstance build(bool timed = true) const {
    TaskInstance out = t_;
    if (out.tools.empty()) out.tools.push_back(ToolSpec{"noop", "does nothing", {}, {}});
    if (!timed)
      for (auto& n : out.graph.nodes) n.turn.reset();
    return out;
  }

 private:
  void ensure_tool(const std::string& name, const std::string& description) {
    for (const auto& t : t_.tools)
      if (t.name == name) return;
    t_.tools.push_back(ToolSpec{name, description, {}, {}});
  }

  TaskInstance t_;
};

// Random valid task: queries and calls interleaved, each call depending on at
// least one earlier node, entity types drawn from a small pool so that
// interference occurs.
inline TaskInstance random_task(std::uint64_t seed, std::size_t max_calls = 8,
                                std::size_t max_queries = 3) {
  std::mt19937_64 rng(seed);
  auto uni = [&](std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  };
  const std::vector<std::string> types = {"user_id", "file_path", "order_id"};
  const std::size_t m = 1 + uni(max_queries);
  const std::size_t n = uni(max_calls + 1);

  TaskBuilder b("rand-" + std::to_string(seed));
  std::vector<std::string> ids;
  std::vector<std::vector<EntityRef>> offered;
  std::size_t value = 0, calls = 0, queries = 0;
  auto fresh = [&] { return ent(types[uni(types.size())], "v" + std::to_string(value++)); };

  // First node is always a query; remaining slots shuffled between kinds.
  std::vector<bool> is_call;
  for (std::size_t i = 1; i < m; ++i) is_call.push_back(false);
  for (std::size_t i = 0; i < n; ++i) is_call.push_back(true);
  std::shuffle(is_call.begin(), is_call.end(), rng);
  is_call.insert(is_call.begin(), false);

  for (bool c : is_call) {
    if (!c) {
      const std::string id = "q" + std::to_string(queries++);
      std::vector<EntityRef> mentions = {fresh()};
      if (uni(2)) mentions.push_back(fresh());
      b.query(id, mentions);
      ids.push_back(id);
      offered.push_back(mentions);
      continue;
    }
    const std::string id = "f" + std::to_string(++calls);
    const auto produced = fresh();
    b.call(id, "tool" + std::to_string(uni(4)), {produced});
    const std::size_t j = ids.size();
    const std::size_t deps = 1 + uni(std::min<std::size_t>(j, 3));
    std::vector<std::size_t> srcs;
    for (std::size_t d = 0; d < deps; ++d) {
      const std::size_t s = uni(j);
      if (std::find(srcs.begin(), srcs.end(), s) != srcs.end()) continue;
      srcs.push_back(s);
      if (uni(3) == 0 || offered[s].empty())
        b.exec(ids[s], id);
      else
        b.data(ids[s], id, offered[s][uni(offered[s].size())]);
    }
    ids.push_back(id);
    offered.push_back({produced});
  }
  return b.build();
}

}  // namespace tigload::testing
