#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tigload/core_model.hpp"
#include "tigload/intrinsic_load.hpp"

namespace tigload {

struct GenSpec {
  std::string task_id = "gen-0";
  std::string domain = "synthetic";
  std::size_t n_queries = 1;
  std::size_t n_calls = 0;
  double target_cli = 0.0;
  double tolerance = 1.0;
  std::vector<std::string> entity_type_pool = {"user_id", "file_path", "order_id",
                                               "ticker", "city", "date"};
  // Probability that a new entity reuses a semantic type already in play,
  // which is what creates interference.
  double interference_density = 0.3;
  // Tools to draw calls and distractors from; a built-in catalog is used
  // when empty.
  std::vector<ToolSpec> tool_catalog;
  std::size_t distractor_count = 0;
  std::uint64_t seed = 0;
};

// Largest CL_I any generated layout of this size can reach: every forward
// pair into a function node carries both an execution edge and a data edge
// whose entity competes with every earlier entity.
double max_achievable_cli(std::size_t n_queries, std::size_t n_calls, double lambda);

// Builds a random ranked DAG (every call depends on some earlier node),
// assigns entities and tools, then closes the gap to the target with
// insert_edges. Retries with derived seeds before giving up. Throws
// TargetUnreachable (with the achievable range) and DomainError on a bad spec.
TaskInstance generate_graph(const GenSpec& spec, const IntrinsicParams& p);

// Greedily adds forward edges, each time the one whose weight lands CL_I
// closest to the target without exceeding target + tolerance, until CL_I is
// inside the band. Existing edges are never touched; data edges add their
// entity to the consumer's consumes list. An untimed graph that needs edges
// comes back with its canonical turns filled in. Throws TargetUnreachable when no
// candidate fits before the band is reached.
TaskInstance insert_edges(const TaskInstance& task, double target_cli,
                          double tolerance, const IntrinsicParams& p);

struct Stratum {
  double target = 0.0;
  std::size_t count = 0;
  double tolerance = 1.0;
  std::size_t n_queries = 2;
  double mean_calls = 4.0;  // fractional means alternate floor/ceil
};

struct SweepConfig {
  std::vector<Stratum> strata;
  GenSpec base;  // entity pool, density, catalog, distractors, seed
};

struct StratumSummary {
  std::size_t stratum = 0;
  double target = 0.0;
  double achieved_mean = 0.0;
  double mean_calls = 0.0;
  std::size_t n = 0;
  std::vector<std::string> errors;
};

struct SweepResult {
  std::vector<TaskInstance> tasks;  // stratum-major order
  std::vector<StratumSummary> manifest;
};

// Generates every stratum of the grid. Failures are collected per stratum
// rather than aborting the sweep.
SweepResult sweep(const SweepConfig& cfg, const IntrinsicParams& p,
                  std::size_t jobs = 1);

}  // namespace tigload
