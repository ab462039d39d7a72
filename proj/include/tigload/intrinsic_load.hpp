#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "tigload/core_model.hpp"

namespace tigload {

struct IntrinsicParams {
  double lambda = 0.5;  // interference balance, >= 0
};

struct EdgeLoad {
  std::string src;
  std::string dst;
  EdgeKind kind = EdgeKind::Data;
  std::size_t delta = 0;         // turns between producer and consumer
  std::size_t interference = 0;  // competing same-type entities in context
  double weight = 0.0;           // delta * (1 + lambda * interference)
};

struct IntrinsicReport {
  std::vector<EdgeLoad> per_edge;          // graph edge order
  std::map<std::string, double> per_node;  // every function node
  double total = 0.0;
};

// Edge weight from its two factors.
double edge_weight(std::size_t delta, std::size_t interference, double lambda);

// Turn difference dst - src in the canonical linearization. Throws
// UnknownEdge when e is not an edge of g.
std::size_t attentional_distance(const ToolGraph& g, const DepEdge& e);

// Distinct entities that share the edge entity's semantic type but not its
// value, produced or mentioned strictly before the consuming node. Zero for
// execution edges.
std::size_t interference(const TaskInstance& task, const DepEdge& e);

double edge_weight(const TaskInstance& task, const DepEdge& e,
                   const IntrinsicParams& p);

// Sum of incoming edge weights over all function nodes. Throws InvalidTask
// when the task fails validation.
IntrinsicReport intrinsic_load(const TaskInstance& task,
                               const IntrinsicParams& p);

}  // namespace tigload
