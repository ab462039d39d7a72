#include "tigload/total_load.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tigload/errors.hpp"

namespace tigload {

std::string_view to_string(LoadDimension d) {
  switch (d) {
    case LoadDimension::CLI: return "cl_i";
    case LoadDimension::CLE: return "cl_e";
    case LoadDimension::CLTotal: return "cl_total";
  }
  return "?";
}

std::string_view to_string(Bucket b) {
  switch (b) {
    case Bucket::Low: return "low";
    case Bucket::Medium: return "medium";
    case Bucket::High: return "high";
  }
  return "?";
}

std::array<std::size_t, 3> Bucketing::sizes() const {
  std::array<std::size_t, 3> out{};
  for (const auto& [id, b] : assignment) ++out[static_cast<int>(b)];
  return out;
}

Bucketing tercile_buckets(std::span<const TaskLoad> loads,
                          LoadDimension dimension) {
  if (loads.size() < 3)
    throw TooFewTasks("tercile bucketing needs at least 3 tasks, got " +
                      std::to_string(loads.size()));
  std::vector<const TaskLoad*> sorted;
  sorted.reserve(loads.size());
  for (const auto& l : loads) sorted.push_back(&l);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
    if (a->load != b->load) return a->load < b->load;
    return a->task_id < b->task_id;
  });

  const std::size_t n = sorted.size(), base = n / 3, rem = n % 3;
  const std::size_t low = base + (rem >= 1 ? 1 : 0);
  const std::size_t mid = base + (rem >= 2 ? 1 : 0);

  Bucketing out;
  out.dimension = dimension;
  for (std::size_t i = 0; i < n; ++i) {
    const Bucket b = i < low         ? Bucket::Low
                     : i < low + mid ? Bucket::Medium
                                     : Bucket::High;
    if (!out.assignment.emplace(sorted[i]->task_id, b).second)
      throw InvalidTask("task '" + sorted[i]->task_id + "' has two loads");
  }
  out.boundaries = {sorted[low - 1]->load, sorted[low + mid - 1]->load};
  return out;
}

BucketAccuracy bucket_accuracy(std::span<const TrialRecord> trials,
                               const Bucketing& buckets) {
  std::array<std::size_t, 3> wins{};
  BucketAccuracy out;
  for (const auto& t : trials) {
    auto it = buckets.assignment.find(t.task_id);
    if (it == buckets.assignment.end())
      throw UnmatchedTrial("trial references unbucketed task '" + t.task_id + "'");
    const auto b = static_cast<int>(it->second);
    ++out.trials[b];
    if (t.success) ++wins[b];
  }
  for (int b = 0; b < 3; ++b)
    out.accuracy[b] = out.trials[b] == 0
                          ? std::numeric_limits<double>::quiet_NaN()
                          : static_cast<double>(wins[b]) /
                                static_cast<double>(out.trials[b]);
  return out;
}

double accuracy_drop(std::span<const TrialRecord> trials,
                     const Bucketing& buckets) {
  const auto acc = bucket_accuracy(trials, buckets);
  for (int b = 0; b < 3; ++b)
    if (acc.trials[b] == 0)
      throw EmptyBucket(std::string(to_string(static_cast<Bucket>(b))) +
                        " " + std::string(to_string(buckets.dimension)) +
                        " bucket has no trials");
  return acc.accuracy[0] - acc.accuracy[2];
}

OmegaCalibration calibrate_omega(std::span<const TrialRecord> trials,
                                 std::span<const TaskLoad> cli_loads,
                                 std::span<const TaskLoad> cle_loads,
                                 std::string agent_id) {
  const auto cli = tercile_buckets(cli_loads, LoadDimension::CLI);
  const auto cle = tercile_buckets(cle_loads, LoadDimension::CLE);

  OmegaCalibration out;
  out.agent_id = std::move(agent_id);
  out.drop_cli = accuracy_drop(trials, cli);
  out.drop_cle = accuracy_drop(trials, cle);
  out.cli_boundaries = cli.boundaries;
  out.cle_boundaries = cle.boundaries;
  if (!(out.drop_cli > 0.0))
    throw DegenerateCalibration(
        "accuracy does not drop across CL_I terciles (drop " +
        std::to_string(out.drop_cli) + "); supply omega_e manually");
  if (out.drop_cle < 0.0) {
    out.clamped = true;
    out.omega_e = 0.0;
  } else {
    out.omega_e = out.drop_cle / out.drop_cli;
  }
  return out;
}

}  // namespace tigload
