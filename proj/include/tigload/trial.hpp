#pragma once

#include <string>

namespace tigload {

// One externally judged attempt of an agent at a task. The same
// (task_id, agent_id) pair may appear many times.
struct TrialRecord {
  std::string task_id;
  std::string agent_id;
  bool success = false;
};

// Load of one task on one axis (CL_I, CL_E or CL_Total).
struct TaskLoad {
  std::string task_id;
  double load = 0.0;
};

}  // namespace tigload
