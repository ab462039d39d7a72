#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tigload/trial.hpp"

namespace tigload {

enum class LoadDimension { CLI, CLE, CLTotal };
enum class Bucket { Low = 0, Medium = 1, High = 2 };

std::string_view to_string(LoadDimension d);
std::string_view to_string(Bucket b);

struct Bucketing {
  LoadDimension dimension = LoadDimension::CLTotal;
  // Largest load in Low and in Medium.
  std::array<double, 2> boundaries{};
  std::map<std::string, Bucket> assignment;

  std::array<std::size_t, 3> sizes() const;
};

// Sorts by (load, task id) and cuts into thirds; when n is not divisible by
// three the extra tasks go to Low first, then Medium. Throws TooFewTasks
// below three tasks.
Bucketing tercile_buckets(std::span<const TaskLoad> loads,
                          LoadDimension dimension = LoadDimension::CLTotal);

struct BucketAccuracy {
  std::array<double, 3> accuracy{};  // NaN for a bucket without trials
  std::array<std::size_t, 3> trials{};
};

// Per-bucket success rate. Throws UnmatchedTrial for a trial whose task is
// not bucketed.
BucketAccuracy bucket_accuracy(std::span<const TrialRecord> trials,
                               const Bucketing& buckets);

// Accuracy(Low) - Accuracy(High). Throws EmptyBucket when any bucket has no
// trials.
double accuracy_drop(std::span<const TrialRecord> trials,
                     const Bucketing& buckets);

struct OmegaCalibration {
  std::string agent_id;
  double omega_e = 0.0;
  double drop_cli = 0.0;
  double drop_cle = 0.0;
  std::array<double, 2> cli_boundaries{};
  std::array<double, 2> cle_boundaries{};
  // Set when drop_cle < 0: omega_e is reported as 0 instead of negative.
  bool clamped = false;
};

// omega_e = drop_cle / drop_cli over tercile contrasts of the given trials.
// Throws DegenerateCalibration when drop_cli <= 0.
OmegaCalibration calibrate_omega(std::span<const TrialRecord> trials,
                                 std::span<const TaskLoad> cli_loads,
                                 std::span<const TaskLoad> cle_loads,
                                 std::string agent_id = {});

// CL_I + omega_e * CL_E.
inline double total_load(double cl_i, double cl_e, double omega_e) {
  return cl_i + omega_e * cl_e;
}

}  // namespace tigload
