#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tigload/core_model.hpp"
#include "tigload/intrinsic_load.hpp"
#include "tigload/trial.hpp"

namespace tigload {

// Counter-based generator: output i of key K is splitmix64's finalizer applied
// to K + (i + 1) * 0x9E3779B97F4A7C15, i.e. exactly the i-th output of the
// reference splitmix64 seeded with K. Any stream position is addressable
// without replaying the ones before it.
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  static std::uint64_t at(std::uint64_t key, std::uint64_t counter) {
    return mix(key + (counter + 1) * kGolden);
  }
  // Key of an independent sub-stream.
  static std::uint64_t derive(std::uint64_t key, std::uint64_t stream) {
    return at(key, stream);
  }
  // Stable 64-bit hash of a string (FNV-1a), for deriving per-task streams.
  static std::uint64_t hash(std::string_view s);

  std::uint64_t next_u64() { return at(key_, counter_++); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

struct SimAgent {
  double k = 0.1;       // load sensitivity, > 0 (0 allowed for the load-free limit)
  double b_node = 0.0;  // per-operation baseline, >= 0
  std::uint64_t seed = 0;
};

struct NodeRoll {
  std::string node_id;
  double p_succ = 1.0;
  bool passed = true;
};

struct SimOutcome {
  std::string task_id;
  bool success = true;
  std::vector<NodeRoll> per_node_rolls;
};

// exp(-(k * load + b_node)).
double node_success_prob(const SimAgent& agent, double node_load);

// Success of the whole plan under independent per-node rolls:
// exp(-(k * sum(load) + n * b_node)).
double node_level_success(const SimAgent& agent, std::span<const double> node_loads);

// One replication: each function node, in linearized order, passes when a
// uniform draw falls below its success probability for its intrinsic load.
// The stream is keyed by (agent.seed, task id, replication). Throws
// InvalidTask.
SimOutcome simulate_task(const SimAgent& agent, const TaskInstance& task,
                         const IntrinsicParams& p, std::uint64_t replication = 0);

struct AdditivityRow {
  std::string task_id;
  std::size_t function_nodes = 0;
  double cl_i = 0.0;
  double expected = 0.0;   // exp(-(k * CL_I + n * b_node))
  double empirical = 0.0;  // success rate over the replications
  double abs_deviation = 0.0;
  double sigma = 0.0;      // binomial standard error at `expected`
  bool within_3sigma = true;
};

struct AdditivityReport {
  std::vector<AdditivityRow> rows;
  double max_abs_deviation = 0.0;
  double fraction_within_3sigma = 1.0;
};

// Runs `replications` calls of simulate_task per task (replication indices
// 0..R-1, so the result does not depend on `jobs`) and compares the success
// rate with the closed form.
AdditivityReport verify_additivity(const SimAgent& agent,
                                   std::span<const TaskInstance> tasks,
                                   std::size_t replications,
                                   const IntrinsicParams& p, std::size_t jobs = 1);

// Task-level trials drawn from exp(-(k * load + b)): trial j of a task succeeds
// when draw j of the stream keyed by (seed, task id) falls below that
// probability. Trials are emitted task by task in input order.
std::vector<TrialRecord> sample_task_level_trials(std::span<const TaskLoad> loads,
                                                  double k, double b,
                                                  const std::string& agent_id,
                                                  std::uint64_t seed,
                                                  std::size_t trials_per_task = 1);

}  // namespace tigload
