#include "tigload/oracle_sim.hpp"

#include <cmath>
#include <numeric>

#include "tigload/errors.hpp"
#include "tigload/parallel.hpp"

namespace tigload {

std::uint64_t CounterRng::hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double node_success_prob(const SimAgent& agent, double node_load) {
  return std::exp(-(agent.k * node_load + agent.b_node));
}

double node_level_success(const SimAgent& agent,
                          std::span<const double> node_loads) {
  const double sum = std::accumulate(node_loads.begin(), node_loads.end(), 0.0);
  return std::exp(-(agent.k * sum +
                    static_cast<double>(node_loads.size()) * agent.b_node));
}

namespace {

struct PreparedTask {
  std::vector<std::string> nodes;
  std::vector<double> probs;
  std::uint64_t key = 0;
  double cl_i = 0.0;
};

PreparedTask prepare(const SimAgent& agent, const TaskInstance& task,
                     const IntrinsicParams& p) {
  const auto report = intrinsic_load(task, p);
  PreparedTask out;
  out.key = CounterRng::derive(agent.seed, CounterRng::hash(task.id));
  out.cl_i = report.total;
  for (const auto& id : function_nodes(task.graph)) {
    out.nodes.push_back(id);
    out.probs.push_back(node_success_prob(agent, report.per_node.at(id)));
  }
  return out;
}

bool roll(const PreparedTask& t, std::uint64_t replication,
          std::vector<NodeRoll>* rolls) {
  CounterRng rng(CounterRng::derive(t.key, replication));
  bool success = true;
  for (std::size_t i = 0; i < t.probs.size(); ++i) {
    const bool passed = rng.uniform() < t.probs[i];
    success = success && passed;
    if (rolls) rolls->push_back({t.nodes[i], t.probs[i], passed});
  }
  return success;
}

}  // namespace

SimOutcome simulate_task(const SimAgent& agent, const TaskInstance& task,
                         const IntrinsicParams& p, std::uint64_t replication) {
  const auto prepared = prepare(agent, task, p);
  SimOutcome out;
  out.task_id = task.id;
  out.success = roll(prepared, replication, &out.per_node_rolls);
  return out;
}

AdditivityReport verify_additivity(const SimAgent& agent,
                                   std::span<const TaskInstance> tasks,
                                   std::size_t replications,
                                   const IntrinsicParams& p, std::size_t jobs) {
  if (replications == 0) throw DomainError("replications must be positive");
  AdditivityReport out;
  out.rows.resize(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t i) {
    const auto prepared = prepare(agent, tasks[i], p);
    std::size_t wins = 0;
    for (std::uint64_t r = 0; r < replications; ++r)
      if (roll(prepared, r, nullptr)) ++wins;

    auto& row = out.rows[i];
    row.task_id = tasks[i].id;
    row.function_nodes = prepared.nodes.size();
    row.cl_i = prepared.cl_i;
    row.expected = std::exp(-(agent.k * prepared.cl_i +
                              static_cast<double>(row.function_nodes) * agent.b_node));
    row.empirical = static_cast<double>(wins) / static_cast<double>(replications);
    row.abs_deviation = std::abs(row.empirical - row.expected);
    row.sigma = std::sqrt(row.expected * (1.0 - row.expected) /
                          static_cast<double>(replications));
    // A degenerate probability has zero variance; allow one draw of slack.
    const double bound = std::max(3.0 * row.sigma,
                                  1.0 / static_cast<double>(replications));
    row.within_3sigma = row.abs_deviation <= bound;
  });

  std::size_t within = 0;
  for (const auto& row : out.rows) {
    out.max_abs_deviation = std::max(out.max_abs_deviation, row.abs_deviation);
    if (row.within_3sigma) ++within;
  }
  if (!out.rows.empty())
    out.fraction_within_3sigma =
        static_cast<double>(within) / static_cast<double>(out.rows.size());
  return out;
}

std::vector<TrialRecord> sample_task_level_trials(std::span<const TaskLoad> loads,
                                                  double k, double b,
                                                  const std::string& agent_id,
                                                  std::uint64_t seed,
                                                  std::size_t trials_per_task) {
  std::vector<TrialRecord> out;
  out.reserve(loads.size() * trials_per_task);
  for (const auto& l : loads) {
    const double p = std::exp(-(k * l.load + b));
    CounterRng rng(CounterRng::derive(seed, CounterRng::hash(l.task_id)));
    for (std::size_t j = 0; j < trials_per_task; ++j)
      out.push_back({l.task_id, agent_id, rng.uniform() < p});
  }
  return out;
}

}  // namespace tigload
